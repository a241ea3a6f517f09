"""Affine connections on a coordinate chart.

A :class:`ConnectionField` stores the Christoffel symbols ``Gamma[l][m][n]``
(upper index first, 0-based) as expressions in ``x1..xm``. Metrics are turned
into their Levi-Civita connection, and connections can be pulled through a
coordinate change.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Mapping, Sequence

import numpy as np

from .expr import (
    ONE, ZERO, Expr, ExprDomainError, Num, compile_exprs, diff_expr, free_vars,
    parse_expr, simplify, substitute,
)
from .expr import add, mul, neg, sub, total

__all__ = [
    "ConnectionField", "MetricField", "ChartMap", "ConnectionEvalError",
    "SingularMetricError", "flat_connection", "christoffel_at", "christoffel_partials", "symmetrize",
    "is_torsion_free", "levi_civita", "transform_connection",
]


class ConnectionEvalError(ExprDomainError):
    """Christoffel symbol evaluation failed; ``index`` is the 1-based triple."""

    def __init__(self, index: tuple[int, int, int], cause: Exception):
        super().__init__(f"Gamma[{index[0]},{index[1]},{index[2]}]: {cause}")
        self.index = index


class SingularMetricError(ExprDomainError):
    pass


def _as_expr(value, dim: int) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float)):
        return Num(float(value))
    return parse_expr(str(value), dim)


def _check_coords(e: Expr, dim: int, what: str):
    bad = {v for v in free_vars(e) if v == "t" or int(v[1:]) > dim}
    if bad:
        raise ValueError(f"{what} references {sorted(bad)}; only x1..x{dim} allowed")


@dataclass(frozen=True)
class ConnectionField:
    """Christoffel symbols of an affine connection on an ``dim``-dimensional chart."""

    dim: int
    gamma: tuple  # gamma[l][m][n] : Expr
    metric: object = field(default=None, compare=False, repr=False)  # set for Levi-Civita

    def __post_init__(self):
        m = self.dim
        if m < 1:
            raise ValueError("dim must be >= 1")
        if len(self.gamma) != m or any(len(r) != m or any(len(c) != m for c in r) for r in self.gamma):
            raise ValueError("gamma must be a dim x dim x dim nested tuple")
        for idx in itertools.product(range(m), repeat=3):
            _check_coords(self[idx], m, f"Gamma{tuple(i + 1 for i in idx)}")

    def __getitem__(self, idx) -> Expr:
        l, a, b = idx
        return self.gamma[l][a][b]

    @classmethod
    def zero(cls, dim: int) -> ConnectionField:
        return cls.from_entries(dim, {})

    @classmethod
    def from_entries(cls, dim: int, entries: Mapping[tuple[int, int, int], object]) -> ConnectionField:
        """Build from sparse 1-based entries ``{(l, m, n): expr or source}``."""
        arr = [[[ZERO] * dim for _ in range(dim)] for _ in range(dim)]
        for (l, a, b), value in entries.items():
            for i in (l, a, b):
                if not 1 <= i <= dim:
                    raise ValueError(f"index {(l, a, b)} outside 1..{dim}")
            arr[l - 1][a - 1][b - 1] = _as_expr(value, dim)
        return cls.from_array(dim, arr)

    @classmethod
    def from_array(cls, dim: int, arr, metric=None) -> ConnectionField:
        return cls(dim, tuple(tuple(tuple(c) for c in r) for r in arr), metric)

    @cached_property
    def nonzero(self) -> tuple[tuple[int, int, int], ...]:
        return tuple(
            idx for idx in itertools.product(range(self.dim), repeat=3)
            if self[idx] != ZERO
        )

    @property
    def is_flat_chart(self) -> bool:
        """True when every symbol is identically zero in this chart."""
        return not self.nonzero

    @cached_property
    def _eval_fn(self):
        return compile_exprs([self[i] for i in self.nonzero]) if self.nonzero else None

    @cached_property
    def partial_exprs(self) -> dict[tuple[int, int, int, int], Expr]:
        """Nonzero symbolic partials ``dGamma[l][m][n]/dx[k]`` keyed 0-based."""
        out = {}
        for idx in self.nonzero:
            for k in range(self.dim):
                d = diff_expr(self[idx], f"x{k + 1}")
                if d != ZERO:
                    out[idx + (k,)] = d
        return out

    @cached_property
    def _partials_fn(self):
        keys = tuple(self.partial_exprs)
        return keys, (compile_exprs([self.partial_exprs[k] for k in keys]) if keys else None)

    def _raise_entry(self, x, exc):
        from .expr import _walk
        if self.metric is not None:
            self.metric.evaluate(x)  # raises SingularMetricError
        for idx in self.nonzero:
            try:
                _walk(self[idx], None, x)
            except ExprDomainError as e:
                raise ConnectionEvalError(tuple(i + 1 for i in idx), e) from None
        raise exc

    @cached_property
    def kernels(self) -> "GeodesicKernels":
        return GeodesicKernels(self)

    @cached_property
    def symmetric(self) -> ConnectionField:
        """Memoized :func:`symmetrize` of this connection."""
        return symmetrize(self)


@lru_cache(maxsize=None)
def flat_connection(dim: int) -> ConnectionField:
    """Shared all-zero connection of dimension ``dim``."""
    return ConnectionField.zero(dim)


def christoffel_at(conn: ConnectionField, x: Sequence[float]) -> np.ndarray:
    """Evaluate ``Gamma[l][m][n](x)`` as an ``(m, m, m)`` array."""
    m = conn.dim
    out = np.zeros((m, m, m))
    if conn._eval_fn is None:
        return out
    xs = [float(v) for v in x]
    try:
        vals = conn._eval_fn(None, xs)
    except ExprDomainError as exc:
        conn._raise_entry(xs, exc)
    for idx, v in zip(conn.nonzero, vals):
        out[idx] = v
    return out


def christoffel_partials(conn: ConnectionField, x: Sequence[float]) -> np.ndarray:
    """Exact partials as an ``(m, m, m, m)`` array indexed ``[l][m][n][k]``."""
    m = conn.dim
    out = np.zeros((m, m, m, m))
    keys, fn = conn._partials_fn
    if fn is None:
        return out
    xs = [float(v) for v in x]
    try:
        vals = fn(None, xs)
    except ExprDomainError as exc:
        conn._raise_entry(xs, exc)
    for idx, v in zip(keys, vals):
        out[idx] = v
    return out


def is_torsion_free(conn: ConnectionField) -> bool:
    m = conn.dim
    return all(
        simplify(conn[l, a, b]) == simplify(conn[l, b, a])
        for l in range(m) for a in range(m) for b in range(a + 1, m)
    )


def symmetrize(conn: ConnectionField) -> ConnectionField:
    """Connection with symbols ``(Gamma[l][m][n] + Gamma[l][n][m]) / 2``.

    Geodesics, and hence tangent surfaces, are unchanged.
    """
    if is_torsion_free(conn):
        return conn
    m = conn.dim
    half = Num(0.5)
    arr = [[[simplify(mul(half, add(conn[l, a, b], conn[l, b, a]))) for b in range(m)]
            for a in range(m)] for l in range(m)]
    return ConnectionField.from_array(m, arr)


# ---------------------------------------------------------------------------
# compiled geodesic right-hand sides

def _sum_code(terms: list[str]) -> str:
    return " + ".join(terms) if terms else "0.0"


class GeodesicKernels:
    """Generated Python closures for the geodesic spray and its linearisation.

    ``accel(x, v)`` is ``-Gamma(x)(v, v)``; ``tangent(x, v, dx, dv)`` is the
    derivative of ``accel`` along ``(dx, dv)``.
    """

    def __init__(self, conn: ConnectionField):
        m = conn.dim
        self.dim = m
        nz = conn.nonzero
        from .expr import _code

        lines = ["def _accel(x, v):"]
        for j, idx in enumerate(nz):
            lines.append(f"    g{j} = {_code(conn[idx])}")
        rows = []
        for l in range(m):
            terms = [f"g{j}*v[{a}]*v[{b}]" for j, (ll, a, b) in enumerate(nz) if ll == l]
            rows.append(f"-({_sum_code(terms)})")
        lines.append(f"    return [{', '.join(rows)}]")

        parts = conn.partial_exprs
        lines.append("def _tangent(x, v, dx, dv):")
        for j, idx in enumerate(nz):
            lines.append(f"    g{j} = {_code(conn[idx])}")
        pkeys = list(parts)
        for j, key in enumerate(pkeys):
            lines.append(f"    p{j} = {_code(parts[key])}")
        rows = []
        for l in range(m):
            terms = [f"p{j}*dx[{k}]*v[{a}]*v[{b}]" for j, (ll, a, b, k) in enumerate(pkeys) if ll == l]
            terms += [f"g{j}*(dv[{a}]*v[{b}] + v[{a}]*dv[{b}])" for j, (ll, a, b) in enumerate(nz) if ll == l]
            rows.append(f"-({_sum_code(terms)})")
        lines.append(f"    return [{', '.join(rows)}]")

        from .expr import _NAMESPACE
        ns = dict(_NAMESPACE)
        exec(compile("\n".join(lines) + "\n", "<tansurf-geodesic>", "exec"), ns)
        raw_accel, raw_tangent = ns["_accel"], ns["_tangent"]
        self._conn = conn

        def accel(x, v):
            try:
                return raw_accel(x, v)
            except (ArithmeticError, ValueError):
                christoffel_at(conn, x)
                raise ExprDomainError("connection evaluation failed") from None

        def tangent(x, v, dx, dv):
            try:
                return raw_tangent(x, v, dx, dv)
            except (ArithmeticError, ValueError):
                christoffel_partials(conn, x)
                raise ExprDomainError("connection evaluation failed") from None

        self.accel = accel
        self.tangent = tangent


# ---------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class MetricField:
    """Symmetric matrix of expressions ``g[i][j](x)``."""

    dim: int
    g: tuple

    def __post_init__(self):
        m = self.dim
        if len(self.g) != m or any(len(r) != m for r in self.g):
            raise ValueError("g must be dim x dim")
        for i in range(m):
            for j in range(m):
                _check_coords(self.g[i][j], m, f"g[{i + 1},{j + 1}]")
                if j > i and simplify(self.g[i][j]) != simplify(self.g[j][i]):
                    raise ValueError(f"metric not symmetric at ({i + 1},{j + 1})")

    @classmethod
    def from_entries(cls, dim: int, entries: Mapping[tuple[int, int], object]) -> MetricField:
        """Sparse 1-based entries; ``(i, j)`` also fills ``(j, i)``. Absent entries are 0."""
        arr = [[ZERO] * dim for _ in range(dim)]
        seen = {}
        for (i, j), value in entries.items():
            if not (1 <= i <= dim and 1 <= j <= dim):
                raise ValueError(f"index {(i, j)} outside 1..{dim}")
            e = _as_expr(value, dim)
            key = (min(i, j), max(i, j))
            if key in seen and simplify(seen[key]) != simplify(e):
                raise ValueError(f"conflicting entries for g{key}")
            seen[key] = e
            arr[i - 1][j - 1] = e
            arr[j - 1][i - 1] = e
        return cls(dim, tuple(tuple(r) for r in arr))

    @property
    def is_diagonal(self) -> bool:
        return all(self.g[i][j] == ZERO for i in range(self.dim) for j in range(self.dim) if i != j)

    def evaluate(self, x: Sequence[float]) -> np.ndarray:
        fn = compile_exprs([e for row in self.g for e in row])
        try:
            g = np.array(fn(None, [float(v) for v in x])).reshape(self.dim, self.dim)
        except ExprDomainError as exc:
            raise SingularMetricError(f"metric undefined at {list(x)}: {exc}") from None
        if not np.all(np.isfinite(g)):
            raise SingularMetricError("metric is not finite")
        if np.linalg.matrix_rank(g) < self.dim:
            raise SingularMetricError(f"metric is singular at {list(x)}")
        return g


def _det(mat: list[list[Expr]]) -> Expr:
    n = len(mat)
    if n == 1:
        return mat[0][0]
    if n == 2:
        return sub(mul(mat[0][0], mat[1][1]), mul(mat[0][1], mat[1][0]))
    terms = []
    for j in range(n):
        if mat[0][j] == ZERO:
            continue
        minor = [row[:j] + row[j + 1:] for row in mat[1:]]
        term = mul(mat[0][j], _det(minor))
        terms.append(term if j % 2 == 0 else neg(term))
    return total(terms)


def _inverse(g: Sequence[Sequence[Expr]]) -> list[list[Expr]]:
    n = len(g)
    if all(g[i][j] == ZERO for i in range(n) for j in range(n) if i != j):
        return [[simplify(ONE / g[i][i]) if i == j else ZERO for j in range(n)] for i in range(n)]
    rows = [list(r) for r in g]
    det = simplify(_det(rows))
    inv = [[ZERO] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            minor = [row[:j] + row[j + 1:] for k, row in enumerate(rows) if k != i]
            cof = _det(minor) if n > 1 else ONE
            if (i + j) % 2:
                cof = neg(cof)
            inv[j][i] = simplify(cof / det)
    return inv


def levi_civita(metric: MetricField) -> ConnectionField:
    """Levi-Civita connection ``1/2 g^{lr} (g_{rm,n} + g_{rn,m} - g_{mn,r})``.

    The inverse metric is formed symbolically (reciprocals for diagonal
    metrics, cofactors otherwise), so downstream jets stay exact. A metric
    that is singular at an evaluation point surfaces as a division by zero.
    """
    m = metric.dim
    g = metric.g
    ginv = _inverse(g)
    dg = [[[diff_expr(g[i][j], f"x{k + 1}") for k in range(m)] for j in range(m)] for i in range(m)]
    lower = [[[simplify(add(dg[r][a][b], sub(dg[r][b][a], dg[a][b][r]))) for b in range(m)]
              for a in range(m)] for r in range(m)]
    half = Num(0.5)
    arr = [[[ZERO] * m for _ in range(m)] for _ in range(m)]
    for l in range(m):
        for a in range(m):
            for b in range(a, m):
                e = simplify(mul(half, total(mul(ginv[l][r], lower[r][a][b]) for r in range(m))))
                arr[l][a][b] = e
                arr[l][b][a] = e
    return ConnectionField.from_array(m, arr, metric)


# ---------------------------------------------------------------------------
# coordinate changes

@dataclass(frozen=True)
class ChartMap:
    """Coordinate change ``y = forward(x)`` with inverse ``x = inverse(y)``.

    Both maps are written in the variables ``x1..xm``; in ``inverse`` they
    stand for the target coordinates ``y1..ym``.
    """

    dim: int
    forward: tuple
    inverse: tuple

    def __post_init__(self):
        if len(self.forward) != self.dim or len(self.inverse) != self.dim:
            raise ValueError("forward and inverse need dim components")
        for k, e in enumerate(self.forward + self.inverse):
            _check_coords(e, self.dim, f"chart component {k + 1}")

    @classmethod
    def from_sources(cls, dim: int, forward: Sequence, inverse: Sequence) -> ChartMap:
        return cls(dim, tuple(_as_expr(e, dim) for e in forward), tuple(_as_expr(e, dim) for e in inverse))

    def apply(self, x: Sequence[float]) -> np.ndarray:
        return np.array(compile_exprs(self.forward)(None, [float(v) for v in x]))

    def apply_inverse(self, y: Sequence[float]) -> np.ndarray:
        return np.array(compile_exprs(self.inverse)(None, [float(v) for v in y]))

    def jacobian(self, x: Sequence[float]) -> np.ndarray:
        """``dy/dx`` at ``x``."""
        m = self.dim
        exprs = [diff_expr(self.forward[i], f"x{k + 1}") for i in range(m) for k in range(m)]
        return np.array(compile_exprs(exprs)(None, [float(v) for v in x])).reshape(m, m)

    def roundtrip_error(self, points: Sequence[Sequence[float]]) -> float:
        """Largest ``|forward(inverse(y)) - y|`` over ``points``."""
        err = 0.0
        for y in points:
            back = self.apply(self.apply_inverse(y))
            err = max(err, float(np.max(np.abs(back - np.asarray(y, float)))))
        return err


def transform_connection(conn: ConnectionField, chart: ChartMap) -> ConnectionField:
    """Express ``conn`` in the coordinates ``y = chart.forward(x)``.

    Uses ``G^c_ab = dy^c/dx^k (dx^i/dy^a dx^j/dy^b Gamma^k_ij + d2x^k/dy^a dy^b)``
    with every factor written as a function of ``y``.
    """
    m = conn.dim
    if chart.dim != m:
        raise ValueError("chart and connection dimensions differ")
    to_x = {f"x{i + 1}": chart.inverse[i] for i in range(m)}
    dy_dx = [[simplify(substitute(diff_expr(chart.forward[c], f"x{k + 1}"), to_x)) for k in range(m)]
             for c in range(m)]
    dx_dy = [[diff_expr(chart.inverse[i], f"x{a + 1}") for a in range(m)] for i in range(m)]
    d2x = [[[diff_expr(dx_dy[k][a], f"x{b + 1}") for b in range(m)] for a in range(m)] for k in range(m)]
    gam = {idx: simplify(substitute(conn[idx], to_x)) for idx in conn.nonzero}
    arr = [[[ZERO] * m for _ in range(m)] for _ in range(m)]
    for c in range(m):
        for a in range(m):
            for b in range(m):
                terms = []
                for k in range(m):
                    if dy_dx[c][k] == ZERO:
                        continue
                    inner = [d2x[k][a][b]]
                    for (kk, i, j), e in gam.items():
                        if kk == k:
                            inner.append(mul(mul(dx_dy[i][a], dx_dy[j][b]), e))
                    terms.append(mul(dy_dx[c][k], total(inner)))
                arr[c][a][b] = simplify(total(terms))
    return ConnectionField.from_array(m, arr)
