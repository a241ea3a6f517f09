"""Scene files: a manifold chart, a connection or metric, a curve and an optional chart map.

Example::

    [manifold]
    dim = 3
    [connection]
    Gamma[3,1,2] = "x1 + x2^2"
    Gamma[3,2,1] = "x1 + x2^2"
    [curve]
    x1 = "-t^2"
    x2 = "t"
    x3 = "0"
    domain = [-2.0, 2.0]

Lines starting with ``#`` are comments. A ``[metric]`` section with entries
``g[i,j]`` replaces ``[connection]``; the Levi-Civita connection is used.
A ``[chart_map]`` section gives ``forward[k]`` and ``inverse[k]``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .curves import CurveSpec
from .expr import Expr, ExprError, ExprSyntaxError, free_vars, parse_expr
from .geometry import ChartMap, ConnectionField, MetricField, levi_civita

__all__ = ["Scene", "SceneError", "SceneDimensionError", "load_scene", "parse_scene",
           "bundled_scene", "bundled_scenes"]

_SECTIONS = ("manifold", "connection", "metric", "curve", "chart_map")
_SECTION = re.compile(r"\[\s*([A-Za-z_]+)\s*\]\s*$")
_ASSIGN = re.compile(r"([A-Za-z_][A-Za-z_0-9]*)\s*(?:\[([^\]]*)\])?\s*=\s*(.*?)\s*$")


class SceneError(ValueError):
    """Malformed scene; ``line`` and ``column`` are 1-based (0 when unknown)."""

    def __init__(self, message: str, line: int = 0, column: int = 0, path: str = "<scene>"):
        where = f"{path}:{line}:{column}: " if line else f"{path}: "
        super().__init__(where + message)
        self.line = line
        self.column = column


class SceneDimensionError(SceneError):
    pass


@dataclass(frozen=True)
class Scene:
    dim: int
    connection: ConnectionField
    curve: CurveSpec
    chart: ChartMap | None = None
    metric: MetricField | None = None
    path: str = "<scene>"

    def __iter__(self):
        return iter((self.connection, self.curve, self.chart))


@dataclass
class _Value:
    text: str
    line: int
    column: int  # column of the value's first character


def _unquote(v: _Value, path) -> tuple[str, int]:
    text = v.text
    if len(text) >= 2 and text[0] == text[-1] == '"':
        return text[1:-1], v.column + 1
    raise SceneError("expected a double-quoted expression", v.line, v.column, path)


def _indices(raw: str | None, count: int, key: str, line: int, column: int, path) -> tuple[int, ...]:
    if raw is None:
        raise SceneError(f"{key} needs {count} indices", line, column, path)
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != count or not all(p.isdigit() for p in parts):
        raise SceneError(f"{key}[...] needs {count} positive integer indices", line, column, path)
    return tuple(int(p) for p in parts)


def _expr(v: _Value, dim: int, path) -> Expr:
    src, col = _unquote(v, path)
    try:
        return parse_expr(src, dim)
    except ExprSyntaxError as exc:
        raise SceneError(str(exc), v.line, col + exc.offset, path) from None
    except ExprError as exc:
        raise SceneError(str(exc), v.line, col, path) from None


def parse_scene(text: str, path: str = "<scene>") -> Scene:
    """Parse scene text; see the module docstring for the format."""
    sections: dict[str, list] = {}
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        indent = len(line) - len(line.lstrip())
        m = _SECTION.match(stripped)
        if m:
            name = m.group(1)
            if name not in _SECTIONS:
                raise SceneError(f"unknown section [{name}]", lineno, indent + 1, path)
            if name in sections:
                raise SceneError(f"duplicate section [{name}]", lineno, indent + 1, path)
            sections[name] = []
            current = name
            continue
        m = _ASSIGN.match(stripped)
        if not m:
            raise SceneError("expected 'key = value' or '[section]'", lineno, indent + 1, path)
        if current is None:
            raise SceneError("assignment outside of any section", lineno, indent + 1, path)
        key, idx, value = m.group(1), m.group(2), m.group(3)
        vcol = indent + 1 + m.start(3)
        sections[current].append((key, idx, _Value(value, lineno, vcol), indent + 1))

    if "manifold" not in sections:
        raise SceneError("missing [manifold] section", path=path)
    dim = None
    for key, idx, v, col in sections["manifold"]:
        if key != "dim" or idx is not None:
            raise SceneError(f"unknown manifold key {key!r}", v.line, col, path)
        if not re.fullmatch(r"\d+", v.text) or int(v.text) < 1:
            raise SceneError("dim must be a positive integer", v.line, v.column, path)
        dim = int(v.text)
    if dim is None:
        raise SceneError("[manifold] needs dim", path=path)

    has_c, has_g = "connection" in sections, "metric" in sections
    if has_c == has_g:
        raise SceneError("exactly one of [connection] or [metric] is required", path=path)

    def check_range(ix, v, col):
        if any(not 1 <= i <= dim for i in ix):
            raise SceneDimensionError(f"index {list(ix)} outside 1..{dim}", v.line, col, path)

    metric = None
    if has_c:
        entries = {}
        for key, idx, v, col in sections["connection"]:
            if key != "Gamma":
                raise SceneError(f"unknown connection key {key!r}", v.line, col, path)
            ix = _indices(idx, 3, "Gamma", v.line, col, path)
            check_range(ix, v, col)
            if ix in entries:
                raise SceneError(f"duplicate entry Gamma{list(ix)}", v.line, col, path)
            entries[ix] = _expr(v, dim, path)
        conn = ConnectionField.from_entries(dim, entries)
    else:
        entries = {}
        for key, idx, v, col in sections["metric"]:
            if key != "g":
                raise SceneError(f"unknown metric key {key!r}", v.line, col, path)
            ix = _indices(idx, 2, "g", v.line, col, path)
            check_range(ix, v, col)
            if ix in entries:
                raise SceneError(f"duplicate entry g{list(ix)}", v.line, col, path)
            entries[ix] = _expr(v, dim, path)
        try:
            metric = MetricField.from_entries(dim, entries)
        except ValueError as exc:
            raise SceneError(str(exc), path=path) from None
        conn = levi_civita(metric)

    if "curve" not in sections:
        raise SceneError("missing [curve] section", path=path)
    comps: dict[int, Expr] = {}
    domain = None
    for key, idx, v, col in sections["curve"]:
        if key == "domain" and idx is None:
            m = re.fullmatch(r"\[\s*([^,\]]+)\s*,\s*([^,\]]+)\s*\]", v.text)
            try:
                domain = (float(m.group(1)), float(m.group(2)))
            except (AttributeError, ValueError):
                raise SceneError("domain must look like [a, b]", v.line, v.column, path) from None
            if not domain[0] < domain[1]:
                raise SceneError("curve domain is empty", v.line, v.column, path)
            continue
        cm = re.fullmatch(r"x(\d+)", key)
        if not cm or idx is not None:
            raise SceneError(f"unknown curve key {key!r}", v.line, col, path)
        k = int(cm.group(1))
        if not 1 <= k <= dim:
            raise SceneDimensionError(f"curve component x{k} outside 1..{dim}", v.line, col, path)
        if k in comps:
            raise SceneError(f"duplicate curve component x{k}", v.line, col, path)
        e = _expr(v, dim, path)
        if any(n != "t" for n in free_vars(e)):
            raise SceneError("curve components may only use t", v.line, v.column, path)
        comps[k] = e
    missing = [k for k in range(1, dim + 1) if k not in comps]
    if missing:
        raise SceneDimensionError(f"curve lacks components {['x%d' % k for k in missing]}", path=path)
    if domain is None:
        raise SceneError("curve needs a domain", path=path)
    curve = CurveSpec(dim, tuple(comps[k] for k in range(1, dim + 1)), domain)

    chart = None
    if "chart_map" in sections:
        fwd, inv = {}, {}
        for key, idx, v, col in sections["chart_map"]:
            if key not in ("forward", "inverse"):
                raise SceneError(f"unknown chart_map key {key!r}", v.line, col, path)
            (k,) = _indices(idx, 1, key, v.line, col, path)
            check_range((k,), v, col)
            target = fwd if key == "forward" else inv
            if k in target:
                raise SceneError(f"duplicate {key}[{k}]", v.line, col, path)
            e = _expr(v, dim, path)
            if "t" in free_vars(e):
                raise SceneError("chart maps may not use t", v.line, v.column, path)
            target[k] = e
        for name, target in (("forward", fwd), ("inverse", inv)):
            if sorted(target) != list(range(1, dim + 1)):
                raise SceneDimensionError(f"chart_map needs {name}[1..{dim}]", path=path)
        chart = ChartMap(dim, tuple(fwd[k] for k in range(1, dim + 1)), tuple(inv[k] for k in range(1, dim + 1)))
        ys = [chart.apply(curve(t)) for t in np.linspace(*domain, 11)]
        err = chart.roundtrip_error(ys)
        if not err <= 1e-9:
            raise SceneError(f"chart_map forward(inverse(y)) differs from y by {err:.3g}", path=path)

    return Scene(dim, conn, curve, chart, metric, path)


def load_scene(path) -> Scene:
    """Read and validate a scene file. Unpacks as ``(connection, curve, chart)``."""
    p = Path(path)
    if not p.exists() and not p.parent.parts:
        # bare names fall back to the bundled scenes
        try:
            return bundled_scene(p.name)
        except FileNotFoundError:
            pass
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise SceneError(f"cannot read scene: {exc.strerror or exc}", path=str(path)) from None
    return parse_scene(text, str(path))


def bundled_scenes() -> list[str]:
    root = resources.files("tansurf") / "scenes"
    return sorted(f.name for f in root.iterdir() if f.name.endswith(".scene"))


def bundled_scene(name: str) -> Scene:
    """Load one of the scenes shipped with the package."""
    if not name.endswith(".scene"):
        name += ".scene"
    f = resources.files("tansurf") / "scenes" / name
    if not f.is_file():
        raise FileNotFoundError(name)
    return parse_scene(f.read_text(encoding="utf-8"), name)
