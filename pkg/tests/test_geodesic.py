import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_poly_connection
from tansurf.geodesic import (
    DEFAULT_TOL, S_SWITCH, ConnectionFailure, IntegrationError, geodesic_h, h_series,
    integrate_geodesic, solve_geodesic, taylor_residuals,
)
from tansurf.geometry import ConnectionField, christoffel_at, flat_connection
from tansurf.surface import _raw


def e9_closed_form(t0, s):
    return np.array([-2 * t0 * s - t0**2, s + t0, t0 * s**4 / 3])


def test_euclidean_line():
    st_ = integrate_geodesic(flat_connection(3), [0, 0, 0], [1, 0, 0], 2.0)
    assert np.allclose(st_.pos, [2, 0, 0], atol=1e-14)
    assert np.allclose(st_.vel, [1, 0, 0], atol=1e-14)


def test_zero_length_returns_start():
    st_ = integrate_geodesic(flat_connection(2), [0.5, 1.0], [1, 2], 0.0)
    assert np.array_equal(st_.pos, [0.5, 1.0]) and np.array_equal(st_.vel, [1, 2])


@pytest.mark.parametrize("t0", [-1.0, 0.5, 1.0])
def test_example_closed_form(scenes, t0):
    conn = scenes["example9"].connection
    x, v = [-t0**2, t0, 0.0], [-2 * t0, 1.0, 0.0]
    for s in np.linspace(-1, 1, 9):
        st_ = integrate_geodesic(conn, x, v, s)
        assert np.max(np.abs(st_.pos - e9_closed_form(t0, s))) <= 1e-6


def test_example_endpoint(scenes):
    pos = integrate_geodesic(scenes["example9"].connection, [-1, 1, 0], [-2, 1, 0], 1.0).pos
    assert np.max(np.abs(pos - [-3, 2, 1 / 3])) <= 1e-6


def test_half_plane_semicircle(scenes):
    conn = scenes["halfplane"].connection
    for smax in (2.0, -2.0):
        sol = solve_geodesic(conn, [0, 1], [1, 0], smax)
        for s in np.linspace(0, smax, 41):
            p = sol.state(s).pos
            assert abs(p @ p - 1) <= 1e-6


def test_dense_output_matches_point_integration(scenes):
    conn = scenes["random_quadratic"].connection
    x, v = np.array([0.1, -0.2, 0.3]), np.array([0.5, 1.0, -0.4])
    sol = solve_geodesic(conn, x, v, 1.0)
    for s in (0.13, 0.5, 0.77, 1.0):
        assert np.max(np.abs(sol.state(s).pos - integrate_geodesic(conn, x, v, s).pos)) <= 1e-8


@pytest.mark.parametrize("name", ["example9", "halfplane", "random_quadratic", "helix"])
def test_ode_residual_at_dense_points(scenes, name):
    sc = scenes[name]
    conn, curve = sc.connection, sc.curve
    t = 0.5 * sum(curve.domain) + 0.1
    x, v = _raw(curve, t, 1)
    sol = solve_geodesic(conn, x, v, 1.0)
    for s in np.linspace(0, 1, 201):
        q, dq, ddq = sol.evaluate(s)
        res = ddq + np.einsum("lmn,m,n->l", christoffel_at(conn, q), dq, dq)
        assert np.max(np.abs(res)) <= 10 * DEFAULT_TOL


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_affine_reparametrization(scenes, rng, c):
    conn = scenes["random_quadratic"].connection
    for _ in range(5):
        x, v = rng.uniform(-0.4, 0.4, 3), rng.uniform(-1, 1, 3)
        for s in (0.2, -0.3, 0.5):
            a = integrate_geodesic(conn, x, c * v, s).pos
            b = integrate_geodesic(conn, x, v, c * s).pos
            assert np.max(np.abs(a - b)) <= 10 * DEFAULT_TOL


def test_failure_is_reported():
    # x'' = -x'^2 / x from (1, -1) gives x^2 = 1 - 2s, which reaches 0 at s = 1/2
    with pytest.raises(IntegrationError) as err:
        integrate_geodesic(ConnectionField.from_entries(1, {(1, 1, 1): "1/x1"}), [1.0], [-1.0], 5.0)
    assert err.value.s_reached < 5.0


def test_connection_failure_type():
    conn = ConnectionField.from_entries(1, {(1, 1, 1): "log(x1)"})
    with pytest.raises(ConnectionFailure):
        integrate_geodesic(conn, [0.05], [-1.0], 1.0)


def test_bad_inputs():
    with pytest.raises(ValueError):
        integrate_geodesic(flat_connection(3), [0, 0], [1, 0, 0], 1.0)
    with pytest.raises(ValueError):
        integrate_geodesic(flat_connection(2), [0, 0], [1, 0], 1.0, tol=0.0)


# ---------------------------------------------------------------- remainder term

def test_h_series_is_minus_gamma_vv(rng, scenes):
    conn = scenes["random_quadratic"].connection
    for _ in range(5):
        x, v = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
        h0, _ = h_series(conn, x, v)
        assert np.allclose(h0, -np.einsum("lmn,m,n->l", christoffel_at(conn, x), v, v), rtol=0, atol=1e-15)


def test_euclidean_h_is_zero(rng):
    for _ in range(5):
        x, v = rng.standard_normal(3), rng.standard_normal(3)
        for s in (0.0, 1e-4, 0.3, -0.7):
            assert np.max(np.abs(geodesic_h(flat_connection(3), x, v, s))) <= 1e-12


def test_example_h_on_curve(scenes):
    conn = scenes["example9"].connection
    x, v = [-1, 1, 0], [-2, 1, 0]
    h0, hs = h_series(conn, x, v)
    assert not h0.any() and not hs.any()
    # closed form: h3 = 2 t0 s^2 / 3 with t0 = 1
    for s in (0.05, 0.2, 0.5):
        h = geodesic_h(conn, x, v, s)
        assert np.max(np.abs(h - [0, 0, 2 * s * s / 3])) <= 1e-6


def test_h_continuous_across_switch(scenes, rng):
    conn = scenes["random_quadratic"].connection
    for _ in range(5):
        x, v = rng.uniform(-0.5, 0.5, 3), rng.uniform(-1, 1, 3)
        for sign in (1, -1):
            lo = geodesic_h(conn, x, v, sign * S_SWITCH * (1 - 1e-9))
            hi = geodesic_h(conn, x, v, sign * S_SWITCH)
            assert np.max(np.abs(lo - hi)) <= 1e-6


def test_taylor_residuals_euclidean():
    res = taylor_residuals(flat_connection(3), [0.1, 0.2, 0.3], [1, -1, 0.5])
    assert res.worst <= 1e-12


def test_taylor_residuals_example_on_curve(scenes):
    conn = scenes["example9"].connection
    for t0 in (-0.8, 0.3, 1.0):
        assert taylor_residuals(conn, [-t0**2, t0, 0], [-2 * t0, 1, 0]).worst <= 1e-5


def test_taylor_residuals_random_polynomial(rng):
    conn = random_poly_connection(rng, scale=0.3)
    for _ in range(10):
        x, v = rng.uniform(-0.5, 0.5, 3), rng.uniform(-1, 1, 3)
        assert taylor_residuals(conn, x, v).worst <= 1e-4


@settings(max_examples=20)
@given(st.lists(st.floats(-1, 1), min_size=2, max_size=2), st.floats(-1.5, 1.5))
def test_half_plane_geodesics_stay_above_axis(scenes, v, s):
    # hyperbolic geodesics from (0, 1) with |v| <= sqrt(2) stay in x2 > 0 for |s| <= 1.5
    pos = integrate_geodesic(scenes["halfplane"].connection, [0.0, 1.0], v, s).pos
    assert pos[1] > 0
