import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_poly_connection
from tansurf.expr import parse_expr, simplify
from tansurf.geodesic import DEFAULT_TOL, solve_geodesic
from tansurf.geometry import (
    ChartMap, ConnectionEvalError, ConnectionField, MetricField, SingularMetricError,
    christoffel_at, christoffel_partials, is_torsion_free, levi_civita, symmetrize,
    transform_connection,
)

E9 = ConnectionField.from_entries(3, {(3, 1, 2): "x1 + x2^2", (3, 2, 1): "x1 + x2^2"})
E9_TORSION = ConnectionField.from_entries(3, {(3, 1, 2): "x1 + x2^2"})
HALF_PLANE = MetricField.from_entries(2, {(1, 1): "1/x2^2", (2, 2): "1/x2^2"})
SKEW_METRIC = MetricField.from_entries(2, {(1, 1): "1 + x2^2", (1, 2): "0.5*x1*x2", (2, 2): "2 + x1^2"})


def test_euclidean_is_zero(rng):
    for _ in range(5):
        x = rng.standard_normal(3)
        assert not christoffel_at(ConnectionField.zero(3), x).any()
        assert not christoffel_partials(ConnectionField.zero(3), x).any()


def test_example_connection_values():
    G = christoffel_at(E9, [1, 2, 0])
    expect = np.zeros((3, 3, 3))
    expect[2, 0, 1] = expect[2, 1, 0] = 5.0
    assert np.array_equal(G, expect)


def test_example_connection_partials(rng):
    for _ in range(5):
        x = rng.standard_normal(3)
        dG = christoffel_partials(E9, x)
        expect = np.zeros((3, 3, 3, 3))
        for a, b in ((0, 1), (1, 0)):
            expect[2, a, b, 0] = 1.0
            expect[2, a, b, 1] = 2 * x[1]
        assert np.array_equal(dG, expect)


def test_constant_connection_has_zero_partials():
    c = ConnectionField.from_entries(3, {(3, 1, 2): "7"})
    assert not christoffel_partials(c, [0.3, 0.1, 2]).any()


def test_half_plane_values_at_0_2():
    G = christoffel_at(levi_civita(HALF_PLANE), [0.0, 2.0])
    assert G[0, 0, 1] == G[0, 1, 0] == -0.5
    assert G[1, 0, 0] == 0.5
    assert G[1, 1, 1] == -0.5
    assert G[0, 0, 0] == G[0, 1, 1] == G[1, 0, 1] == G[1, 1, 0] == 0.0


def test_half_plane_expressions_are_exact():
    conn = levi_civita(HALF_PLANE)
    minus, plus = simplify(parse_expr("-1/x2", 2)), simplify(parse_expr("1/x2", 2))
    assert conn[0, 0, 1] == conn[0, 1, 0] == minus
    assert conn[1, 0, 0] == plus
    assert conn[1, 1, 1] == minus
    assert conn.nonzero == ((0, 0, 1), (0, 1, 0), (1, 0, 0), (1, 1, 1))


def test_flat_metrics_give_zero_connection():
    for g in ({(1, 1): "1", (2, 2): "1", (3, 3): "1"}, {(1, 1): "4", (2, 2): "4", (3, 3): "4"}):
        assert levi_civita(MetricField.from_entries(3, g)).nonzero == ()


def test_non_diagonal_metric_against_sympy():
    # frozen from sympy's Levi-Civita formula at (0.3, -0.7)
    expect = {
        (0, 0, 0): 0.011843091127349483, (0, 0, 1): -0.4613165972462799,
        (0, 1, 1): -0.10102881818840988, (1, 0, 0): 0.16805910266429266,
        (1, 0, 1): 0.12036447717183761, (1, 1, 1): -0.005075610483149779,
    }
    G = christoffel_at(levi_civita(SKEW_METRIC), [0.3, -0.7])
    for (l, a, b), v in expect.items():
        assert G[l, a, b] == pytest.approx(v, rel=1e-13)
        assert G[l, b, a] == G[l, a, b]


def test_levi_civita_symmetric_exactly_at_random_points(rng):
    conn = levi_civita(SKEW_METRIC)
    for _ in range(100):
        G = christoffel_at(conn, rng.uniform(-2, 2, 2))
        assert np.array_equal(G, np.transpose(G, (0, 2, 1)))


def test_singular_metric_is_reported():
    with pytest.raises(SingularMetricError):
        christoffel_at(levi_civita(HALF_PLANE), [0.0, 0.0])
    with pytest.raises(SingularMetricError):
        HALF_PLANE.evaluate([1.0, 0.0])


def test_domain_error_names_the_entry():
    c = ConnectionField.from_entries(2, {(2, 1, 2): "log(x1)"})
    with pytest.raises(ConnectionEvalError) as err:
        christoffel_at(c, [-1.0, 0.0])
    assert err.value.index == (2, 1, 2)


def test_connection_rejects_t_and_bad_indices():
    with pytest.raises(ValueError):
        ConnectionField.from_entries(2, {(1, 1, 1): parse_expr("t", 2)})
    with pytest.raises(ValueError):
        ConnectionField.from_entries(2, {(3, 1, 1): "1"})


# ---------------------------------------------------------------- symmetrize

def test_symmetrize_examples():
    assert symmetrize(E9) is E9
    s = symmetrize(E9_TORSION)
    half = simplify(parse_expr("(x1 + x2^2)/2", 3))
    assert s[2, 0, 1] == s[2, 1, 0] == half
    assert is_torsion_free(s)
    assert symmetrize(ConnectionField.zero(3)).nonzero == ()


def test_symmetrize_idempotent(rng):
    for _ in range(5):
        c = random_poly_connection(rng)
        s = symmetrize(c)
        assert symmetrize(s) == s


def test_symmetrized_geodesics_agree(rng):
    for _ in range(5):
        c = random_poly_connection(rng, scale=0.2)
        s = symmetrize(c)
        x, v = rng.uniform(-0.5, 0.5, 3), rng.uniform(-1, 1, 3)
        a, b = solve_geodesic(c, x, v, 1.0), solve_geodesic(s, x, v, 1.0)
        for t in np.linspace(0, 1, 11):
            assert np.max(np.abs(a.state(t).pos - b.state(t).pos)) <= 2 * DEFAULT_TOL


# ---------------------------------------------------------------- coordinate changes

def test_identity_map_keeps_connection():
    chart = ChartMap.from_sources(3, ["x1", "x2", "x3"], ["x1", "x2", "x3"])
    out = transform_connection(E9, chart)
    for idx in np.ndindex(3, 3, 3):
        assert out[idx] == simplify(E9[idx])


def test_affine_map_of_flat_is_flat():
    chart = ChartMap.from_sources(3, ["2*x1 + x2 + 1", "x2 - x3", "3*x3 - 2"],
                                  ["(x1 - x2 - x3/3 - 1 - 2/3)/2", "x2 + x3/3 + 2/3", "x3/3 + 2/3"])
    assert chart.roundtrip_error([[0.1, 0.2, 0.3], [1, -1, 2]]) < 1e-12
    assert transform_connection(ConnectionField.zero(3), chart).nonzero == ()


def test_quadratic_map_of_flat_plane():
    chart = ChartMap.from_sources(2, ["x1", "x2 + x1^2"], ["x1", "x2 - x1^2"])
    out = transform_connection(ConnectionField.zero(2), chart)
    G = christoffel_at(out, [0.4, -1.3])
    expect = np.zeros((2, 2, 2))
    expect[1, 0, 0] = -2.0
    assert np.array_equal(G, expect)
    # the image of the line (t, 0) is (t, t^2): y2'' + G^2_11 (y1')^2 = 2 - 2 = 0
    assert 2.0 + G[1, 0, 0] * 1.0 ** 2 == 0.0


def test_transformed_geodesics_are_images(rng, scenes):
    conn = scenes["random_quadratic"].connection
    chart = ChartMap.from_sources(3, ["x1", "x2 + x1^2", "x3"], ["x1", "x2 - x1^2", "x3"])
    out = transform_connection(conn, chart)
    for _ in range(20):
        x, v = rng.uniform(-0.5, 0.5, 3), rng.uniform(-1, 1, 3)
        y, w = chart.apply(x), chart.jacobian(x) @ v
        gx = solve_geodesic(conn, x, v, 0.5)
        gy = solve_geodesic(out, y, w, 0.5)
        gx_neg = solve_geodesic(conn, x, v, -0.5)
        gy_neg = solve_geodesic(out, y, w, -0.5)
        for s in np.linspace(0.05, 0.5, 10):
            assert np.max(np.abs(chart.apply(gx.state(s).pos) - gy.state(s).pos)) <= 1e-6
            assert np.max(np.abs(chart.apply(gx_neg.state(-s).pos) - gy_neg.state(-s).pos)) <= 1e-6


@settings(max_examples=25)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_chart_roundtrip_property(y):
    chart = ChartMap.from_sources(3, ["x1", "x2 + x1^2", "x3 + x1*x2"], ["x1", "x2 - x1^2", "x3 - x1*(x2 - x1^2)"])
    assert chart.roundtrip_error([y]) <= 1e-9 * max(1.0, max(abs(v) for v in y)) ** 3
