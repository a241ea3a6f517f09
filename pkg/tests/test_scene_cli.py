import json

import numpy as np
import pytest

from tansurf._parallel import parallel_map, worker_count
from tansurf.cli import run_command
from tansurf.export import grid_faces, read_obj_vertices, write_obj
from tansurf.geometry import christoffel_at
from tansurf.scene import (
    SceneDimensionError, SceneError, bundled_scene, bundled_scenes, load_scene, parse_scene,
)
from tansurf.surface import tan_surface_point

EXAMPLE = """[manifold]
dim = 3
[connection]
Gamma[3,1,2] = "x1 + x2^2"
Gamma[3,2,1] = "x1 + x2^2"
[curve]
x1 = "-t^2"
x2 = "t"
x3 = "0"
domain = [-2.0, 2.0]
"""


def write(tmp_path, text, name="s.scene"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# ---------------------------------------------------------------- scene files

def test_bundled_example_is_verbatim():
    from importlib import resources
    assert (resources.files("tansurf") / "scenes" / "example9.scene").read_text() == EXAMPLE


def test_load_example(tmp_path):
    conn, curve, chart = load_scene(write(tmp_path, EXAMPLE))
    assert chart is None and curve.domain == (-2.0, 2.0)
    G = christoffel_at(conn, [1, 2, 0])
    assert G[2, 0, 1] == G[2, 1, 0] == 5.0 and np.count_nonzero(G) == 2
    assert np.array_equal(curve(1.5), [-2.25, 1.5, 0])


def test_all_bundled_scenes_load():
    names = bundled_scenes()
    assert "example9.scene" in names and len(names) >= 10
    for n in names:
        sc = bundled_scene(n)
        assert sc.connection.dim == sc.curve.dim == sc.dim


def test_metric_scene():
    text = "[manifold]\ndim = 2\n[metric]\ng[1,1] = \"1/x2^2\"\ng[2,2] = \"1/x2^2\"\n[curve]\nx1 = \"t\"\nx2 = \"1\"\ndomain = [0, 1]\n"
    sc = parse_scene(text)
    G = christoffel_at(sc.connection, [0.0, 2.0])
    assert (G[0, 0, 1], G[1, 0, 0], G[1, 1, 1]) == (-0.5, 0.5, -0.5)
    assert sc.metric is not None


def test_dimension_error_location():
    text = EXAMPLE.replace('Gamma[3,2,1] = "x1 + x2^2"', 'Gamma[4,1,1] = "x1"')
    with pytest.raises(SceneDimensionError) as err:
        parse_scene(text)
    assert (err.value.line, err.value.column) == (5, 1)


def test_expression_error_location():
    text = EXAMPLE.replace('Gamma[3,1,2] = "x1 + x2^2"', 'Gamma[3,1,2] = "sin(x1"')
    with pytest.raises(SceneError) as err:
        parse_scene(text)
    # the expression text starts in column 17; the parser stops at offset 6 inside it
    assert err.value.line == 4 and err.value.column == 17 + 6


@pytest.mark.parametrize("edit,needle", [
    (lambda s: s.replace("[connection]", "[metric]\ng[1,1] = \"1\"\n[connection]"), "exactly one"),
    (lambda s: s.replace("[connection]\nGamma[3,1,2] = \"x1 + x2^2\"\nGamma[3,2,1] = \"x1 + x2^2\"\n", ""), "exactly one"),
    (lambda s: s.replace("domain = [-2.0, 2.0]", "domain = [2.0, -2.0]"), "empty"),
    (lambda s: s.replace('x3 = "0"\n', ""), "lacks"),
    (lambda s: s.replace('x2 = "t"', 'x2 = "x1"'), "only use t"),
    (lambda s: s.replace("dim = 3", "dim = three"), "positive integer"),
    (lambda s: s + "[bogus]\n", "unknown section"),
    (lambda s: s.replace('x2 = "t"', "x2 = t"), "double-quoted"),
])
def test_scene_errors(edit, needle):
    with pytest.raises(SceneError, match=needle):
        parse_scene(edit(EXAMPLE))


def test_chart_roundtrip_is_validated():
    text = EXAMPLE + '[chart_map]\nforward[1] = "x1"\nforward[2] = "x2 + x1^2"\nforward[3] = "x3"\n' \
        'inverse[1] = "x1"\ninverse[2] = "x2 + x1^2"\ninverse[3] = "x3"\n'
    with pytest.raises(SceneError, match="chart_map"):
        parse_scene(text)


def test_missing_file():
    with pytest.raises(SceneError):
        load_scene("/nonexistent/dir/x.scene")


# ---------------------------------------------------------------- export

def test_grid_faces():
    f = grid_faces(2, 3)
    assert f.tolist() == [[1, 4, 5], [1, 5, 2], [2, 5, 6], [2, 6, 3]]
    assert f.min() == 1 and f.max() == 6


def test_obj_pads_and_refuses(tmp_path):
    pts = np.arange(12, dtype=float).reshape(2, 3, 2)
    write_obj(pts, tmp_path / "a.obj")
    v = read_obj_vertices(tmp_path / "a.obj")
    assert v.shape == (6, 3) and not v[:, 2].any()
    with pytest.raises(ValueError):
        write_obj(np.zeros((2, 2, 4)), tmp_path / "b.obj")


# ---------------------------------------------------------------- CLI

def run(capsys, *argv):
    code = run_command([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_classify_example(capsys, tmp_path):
    code, out, _ = run(capsys, "classify", "--scene", "example9", "--t0", 0.5, "--json", tmp_path / "r.json")
    assert code == 0
    rep = json.loads(out)
    assert rep["status"] == "DegenerateCharacteristic"
    assert json.loads((tmp_path / "r.json").read_text()) == rep
    for key in ("status", "t0", "ranks", "psi", "psi_prime", "singular_values", "tolerance"):
        assert key in rep


def test_classify_by_path(capsys, tmp_path):
    code, out, _ = run(capsys, "classify", "--scene", write(tmp_path, EXAMPLE), "--t0", -0.25)
    assert code == 0 and json.loads(out)["status"] == "DegenerateCharacteristic"


def test_surface_helix_obj(capsys, tmp_path, scenes):
    out_path = tmp_path / "helix.obj"
    code, out, _ = run(capsys, "surface", "--scene", "helix", "--t", 0, 6.28, "--s", -0.5, 0.5,
                       "--nt", 120, "--ns", 40, "--out", out_path)
    assert code == 0 and json.loads(out)["vertices"] == 4800
    v = read_obj_vertices(out_path)
    assert v.shape == (4800, 3)
    text = out_path.read_text()
    assert text.count("\nf ") == 2 * 119 * 39
    sc = scenes["helix"]
    tg, sg = np.linspace(0, 6.28, 120), np.linspace(-0.5, 0.5, 40)
    for i, j in ((0, 0), (57, 13), (119, 39)):
        p = tan_surface_point(sc.connection, sc.curve, tg[i], sg[j])
        assert np.allclose(v[i * 40 + j], p, rtol=5e-9, atol=1e-12)


def test_surface_example_obj_matches_points(capsys, tmp_path, scenes):
    out_path = tmp_path / "e9.obj"
    code, _, _ = run(capsys, "surface", "--scene", "example9", "--t", -1, 1, "--s", -0.5, 0.5,
                     "--nt", 5, "--ns", 4, "--out", out_path)
    assert code == 0
    v = read_obj_vertices(out_path)
    sc = scenes["example9"]
    pts = [tan_surface_point(sc.connection, sc.curve, t, s)
           for t in np.linspace(-1, 1, 5) for s in np.linspace(-0.5, 0.5, 4)]
    for a, b in zip(v, pts):
        assert np.all(np.abs(a - b) <= 5e-9 * np.maximum(1.0, np.abs(b)))


def test_surface_csv_for_m4(capsys, tmp_path):
    out_path = tmp_path / "q.csv"
    code, _, err = run(capsys, "surface", "--scene", "quartic4", "--t", -1, 1, "--s", -0.2, 0.2,
                       "--nt", 3, "--ns", 3, "--out", out_path)
    assert code == 0
    lines = out_path.read_text().splitlines()
    assert lines[0] == "t,s,x1,x2,x3,x4" and len(lines) == 10
    code, _, _ = run(capsys, "surface", "--scene", "quartic4", "--t", -1, 1, "--s", -0.2, 0.2,
                     "--nt", 3, "--ns", 3, "--out", tmp_path / "q.obj", "--format", "obj")
    assert code == 1


def test_nabla_type_umbrella(capsys):
    code, out, _ = run(capsys, "nabla-type", "--scene", "umbrella", "--t0", 0)
    rep = json.loads(out)
    assert code == 0 and rep["a"] == [1, 2, 4] and rep["codim"] == 1


def test_scan_command(capsys, tmp_path):
    code, out, _ = run(capsys, "scan", "--scene", "umbrella", "--t", -1, 1, "--n", 41)
    rep = json.loads(out)
    assert code == 0 and len(rep["samples"]) == 41
    assert len(rep["zeros"]) == 1 and rep["zeros"][0]["report"]["status"] == "FoldedUmbrella"


def test_geodesic_command(capsys, tmp_path):
    out_path = tmp_path / "g.csv"
    code, _, _ = run(capsys, "geodesic", "--scene", "example9", "--x", -1, 1, 0, "--v", -2, 1, 0,
                     "--smax", 1, "--steps", 10, "--out", out_path)
    assert code == 0
    rows = np.loadtxt(out_path, delimiter=",", skiprows=1)
    assert rows.shape == (11, 7)
    assert np.max(np.abs(rows[-1, 1:4] - [-3, 2, 1 / 3])) <= 1e-6


def test_census_command(capsys, tmp_path):
    argv = ["census", "--dim", 3, "--degree", 5, "--curves", 20, "--grid", 11, "--seed", 4]
    code, out, _ = run(capsys, *argv)
    rep = json.loads(out)
    assert code == 0 and rep["violations"] == [] and rep["points"] == 220
    assert "Whitney" in rep["note"]
    code2, out2, _ = run(capsys, *argv)
    assert out2 == out
    code, _, _ = run(capsys, "census", "--dim", 3, "--degree", 3, "--curves", 2, "--grid", 3, "--seed", 0)
    assert code == 1


def test_census_with_scene_connection(capsys):
    code, out, _ = run(capsys, "census", "--dim", 3, "--degree", 5, "--curves", 3, "--grid", 5,
                       "--seed", 0, "--scene", "random_quadratic")
    assert code == 0 and json.loads(out)["points"] == 15
    code, _, _ = run(capsys, "census", "--dim", 2, "--degree", 5, "--curves", 3, "--grid", 5,
                     "--seed", 0, "--scene", "random_quadratic")
    assert code == 1


@pytest.mark.parametrize("name", ["example9", "halfplane", "random_quadratic", "cubic"])
def test_check_command(capsys, name):
    code, out, _ = run(capsys, "check", "--scene", name)
    rep = json.loads(out)
    assert code == 0 and rep["passed"]
    assert rep["taylor_max"] <= 1e-4 and rep["sigma_max"] <= 1e-6 and rep["mode_max"] <= 1e-9


def test_usage_errors(capsys, tmp_path):
    assert run(capsys, "bogus")[0] == 1
    assert run(capsys)[0] == 1
    assert run(capsys, "classify", "--scene", "example9")[0] == 1
    assert run(capsys, "classify", "--scene", tmp_path / "missing.scene", "--t0", 0)[0] == 1
    assert run(capsys, "scan", "--scene", "umbrella", "--t", -1, 1, "--n", 1)[0] == 1
    assert run(capsys, "geodesic", "--scene", "example9", "--x", 0, 0, "--v", 1, 0, 0,
               "--smax", 1, "--out", tmp_path / "g.csv")[0] == 1
    bad = write(tmp_path, EXAMPLE.replace("Gamma[3,2,1]", "Gamma[4,2,1]"))
    code, _, err = run(capsys, "classify", "--scene", bad, "--t0", 0)
    assert code == 1 and ":5:" in err


def test_numerical_failure_exit(capsys, tmp_path):
    text = EXAMPLE.replace('"x1 + x2^2"\nGamma[3,2,1] = "x1 + x2^2"', '"1/x1"\nGamma[3,2,1] = "1/x1"')
    text = text.replace('x1 = "-t^2"', 'x1 = "t"')
    scene = write(tmp_path, text)
    code, _, err = run(capsys, "geodesic", "--scene", scene, "--x", 0, 0, 0, "--v", 1, 1, 0,
                       "--smax", 1, "--out", tmp_path / "g.csv")
    assert code == 2 and "numerical failure" in err
    code, out, _ = run(capsys, "classify", "--scene", scene, "--t0", 0)
    assert code == 2 and json.loads(out)["status"] == "Incomplete"


def test_thread_override(monkeypatch, capsys):
    monkeypatch.setenv("TANSURF_THREADS", "3")
    assert worker_count() == 3
    assert parallel_map(lambda x: x * x, range(10)) == [x * x for x in range(10)]
    monkeypatch.setenv("TANSURF_THREADS", "1")
    assert parallel_map(lambda x: -x, range(4)) == [0, -1, -2, -3]
    monkeypatch.setenv("TANSURF_THREADS", "zero")
    with pytest.raises(ValueError):
        worker_count()
    assert run(capsys, "nabla-type", "--scene", "umbrella", "--t0", 0)[0] == 1
    monkeypatch.delenv("TANSURF_THREADS")
    assert worker_count() >= 1


def test_surface_independent_of_thread_count(monkeypatch, scenes):
    from tansurf.surface import tangent_surface
    sc = scenes["random_quadratic"]
    out = []
    for n in ("1", "4"):
        monkeypatch.setenv("TANSURF_THREADS", n)
        out.append(tangent_surface(sc.connection, sc.curve, [-0.3, 0.0, 0.3], [-0.2, 0.2]).points)
    assert np.array_equal(out[0], out[1])
