"""Parametrized curves and their covariant jets.

The covariant derivatives ``nabla^j gamma`` are built symbolically: the
Christoffel symbols are composed with the curve, and each order is obtained
from the previous one by differentiating in ``t`` and adding
``Gamma^l_{mn}(gamma) gamma'^m (nabla^{j-1} gamma)^n``.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from numpy.polynomial import polynomial as P

from .expr import (
    T, ZERO, Add, Div, Expr, Func, Mul, Neg, Num, Pow, Sub, Var, _int_exponent, compile_exprs,
    diff_expr, free_vars, parse_expr, power, simplify, substitute,
)
from .expr import add, mul, total
from .geometry import (
    ChartMap, ConnectionField, christoffel_at, christoffel_partials, flat_connection,
)

__all__ = [
    "CurveSpec", "CovariantJet", "NablaType", "RankResult", "TorsionlessResult",
    "RANK_TOL", "numerical_rank", "covariant_jet", "jet_exprs", "iteration_jet",
    "nabla_type", "is_torsionless", "compose_curve", "reparametrize",
]

RANK_TOL = 1e-8
SCALE_RATIO = 1e3


@dataclass(frozen=True)
class CurveSpec:
    """Curve ``t -> (components[0](t), ..., components[m-1](t))`` on ``domain``."""

    dim: int
    components: tuple
    domain: tuple = (-1.0, 1.0)

    def __post_init__(self):
        if len(self.components) != self.dim:
            raise ValueError(f"curve needs {self.dim} components, got {len(self.components)}")
        for k, e in enumerate(self.components):
            extra = free_vars(e) - {"t"}
            if extra:
                raise ValueError(f"curve component {k + 1} references {sorted(extra)}; only t allowed")
        a, b = (float(v) for v in self.domain)
        if not a < b:
            raise ValueError(f"curve domain [{a}, {b}] is empty")
        object.__setattr__(self, "domain", (a, b))

    @classmethod
    def from_sources(cls, components: Sequence, domain=(-1.0, 1.0)) -> CurveSpec:
        dim = len(components)
        exprs = tuple(
            c if isinstance(c, Expr) else Num(float(c)) if isinstance(c, (int, float))
            else parse_expr(str(c), dim)
            for c in components
        )
        return cls(dim, exprs, tuple(domain))

    def derivative_exprs(self, order: int) -> tuple:
        """Symbolic ``gamma^(order)``."""
        comps = self.components
        for _ in range(order):
            comps = tuple(diff_expr(c, "t") for c in comps)
        return comps

    def __call__(self, t: float) -> np.ndarray:
        return np.array(compile_exprs(self.components)(float(t)))


@dataclass(frozen=True)
class CovariantJet:
    """Raw and covariant jets at ``t``.

    ``raw[j]`` is ``gamma^(j)(t)`` for ``j = 0..k`` and ``covariant[j - 1]``
    is ``(nabla^j gamma)(t)`` for ``j = 1..k``.
    """

    t: float
    order: int
    raw: np.ndarray
    covariant: np.ndarray

    def nabla(self, j: int) -> np.ndarray:
        if not 1 <= j <= self.order:
            raise IndexError(f"order {j} outside 1..{self.order}")
        return self.covariant[j - 1]


@dataclass(frozen=True)
class RankResult:
    rank: int
    singular_values: tuple
    scaled: bool


def numerical_rank(columns, tol: float = RANK_TOL) -> RankResult:
    """Rank of the matrix whose columns are ``columns``.

    Singular values above ``tol * sigma_max`` count. Columns are rescaled
    to unit norm first when their norms spread by more than 1e3. Columns
    shorter than ``tol`` times the longest are numerically zero and are
    never rescaled, so scaling cannot promote them.
    """
    mat = np.array(columns, float).T
    if mat.ndim != 2 or mat.size == 0:
        return RankResult(0, (), False)
    norms = np.linalg.norm(mat, axis=0)
    nonzero = norms > tol * norms.max()
    scaled = False
    if nonzero.any():
        live = norms[nonzero]
        if live.max() > SCALE_RATIO * live.min():
            mat = mat.copy()
            mat[:, nonzero] /= live
            scaled = True
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return RankResult(0, tuple(float(v) for v in sv), scaled)
    rank = int(np.sum(sv > tol * sv[0]))
    return RankResult(rank, tuple(float(v) for v in sv), scaled)


# ---------------------------------------------------------------------------
# symbolic jets

def _t_poly(e: Expr, memo: dict) -> np.ndarray | None:
    """Coefficients (lowest first) when ``e`` is a polynomial in ``t``, else None."""
    key = id(e)
    if key in memo:
        return memo[key]
    out = None
    if isinstance(e, Num):
        out = np.array([e.value])
    elif isinstance(e, Var):
        out = np.array([0.0, 1.0]) if e.name == "t" else None
    elif isinstance(e, Neg):
        a = _t_poly(e.arg, memo)
        out = None if a is None else -a
    elif isinstance(e, (Add, Sub, Mul)):
        a, b = _t_poly(e.left, memo), _t_poly(e.right, memo)
        if a is not None and b is not None:
            out = P.polyadd(a, b) if isinstance(e, Add) else P.polysub(a, b) if isinstance(e, Sub) \
                else P.polymul(a, b)
    elif isinstance(e, Div):
        a, b = _t_poly(e.left, memo), _t_poly(e.right, memo)
        if a is not None and b is not None and len(P.polytrim(b)) == 1 and b[0] != 0.0:
            out = a / b[0]
    elif isinstance(e, Pow):
        a, n = _t_poly(e.base, memo), _int_exponent(e.exp)
        if a is not None and n is not None and n >= 0:
            out = P.polypow(a, n)
    elif isinstance(e, Func):
        out = None
    memo[key] = out
    return out


def _from_poly(c: np.ndarray) -> Expr:
    terms = []
    for k, v in enumerate(c):
        if v != 0.0:
            mono = T if k == 1 else power(T, Num(float(k)))
            terms.append(Num(float(v)) if k == 0 else mul(Num(float(v)), mono))
    return total(terms) if terms else ZERO



def _collapse(e: Expr) -> Expr:
    """Expand polynomials in ``t`` to coefficient form; other expressions are simplified.

    Composing polynomial symbols with polynomial curves otherwise grows the
    jet expressions several-fold per order.
    """
    c = _t_poly(e, {})
    return simplify(e) if c is None else _from_poly(c)


class _JetBuilder:
    """Grows the list of ``nabla^j gamma`` expressions on demand."""

    def __init__(self, conn: ConnectionField, curve: CurveSpec):
        m = curve.dim
        self.conn = conn
        self.curve = curve
        self.lock = threading.Lock()
        on_curve = {f"x{k + 1}": curve.components[k] for k in range(m)}
        self.gamma = {idx: _collapse(substitute(conn[idx], on_curve)) for idx in conn.nonzero}
        self.gamma = {idx: e for idx, e in self.gamma.items() if e != ZERO}
        self.vel = curve.derivative_exprs(1)
        self.raw = [curve.components, self.vel]
        self.cov = [self.vel]
        self.fns = {}

    def _next(self, prev: tuple) -> tuple:
        m = self.curve.dim
        out = []
        for l in range(m):
            terms = [diff_expr(prev[l], "t")]
            for (ll, a, b), g in self.gamma.items():
                if ll == l and self.vel[a] != ZERO and prev[b] != ZERO:
                    terms.append(mul(g, mul(self.vel[a], prev[b])))
            # with no connection terms this is the raw derivative chain, bit for bit
            out.append(terms[0] if len(terms) == 1 else _collapse(total(terms)))
        return tuple(out)

    def exprs(self, k: int) -> tuple[list, list]:
        with self.lock:
            while len(self.cov) < k:
                self.cov.append(self._next(self.cov[-1]))
            while len(self.raw) < k + 1:
                self.raw.append(tuple(diff_expr(c, "t") for c in self.raw[-1]))
            return self.raw[:k + 1], self.cov[:k]

    def evaluator(self, k: int):
        with self.lock:
            fn = self.fns.get(k)
        if fn is None:
            raw, cov = self.exprs(k)
            flat = [e for vec in raw + cov for e in vec]
            fn = compile_exprs(flat)
            with self.lock:
                self.fns[k] = fn
        return fn


_BUILDERS: dict = {}
_BUILDERS_LOCK = threading.Lock()


def _builder(conn: ConnectionField, curve: CurveSpec) -> _JetBuilder:
    if conn.dim != curve.dim:
        raise ValueError(f"connection dim {conn.dim} != curve dim {curve.dim}")
    key = (id(conn), id(curve))
    with _BUILDERS_LOCK:
        entry = _BUILDERS.get(key)
        # ids can be recycled; the stored references pin the objects
        if entry is None or entry.conn is not conn or entry.curve is not curve:
            entry = _JetBuilder(conn, curve)
            _BUILDERS[key] = entry
            if len(_BUILDERS) > 4096:
                _BUILDERS.pop(next(iter(_BUILDERS)))
        return entry


def jet_exprs(conn: ConnectionField, curve: CurveSpec, k: int) -> tuple:
    """Symbolic ``(nabla gamma, ..., nabla^k gamma)`` as tuples of expressions in ``t``."""
    if k < 1:
        raise ValueError("jet order must be >= 1")
    return tuple(_builder(conn, curve).exprs(k)[1])


def covariant_jet(conn: ConnectionField, curve: CurveSpec, t: float, k: int) -> CovariantJet:
    """Evaluate the order-``k`` raw and covariant jets at ``t``."""
    if k < 1:
        raise ValueError("jet order must be >= 1")
    m = curve.dim
    vals = np.array(_builder(conn, curve).evaluator(k)(float(t)), float)
    raw = vals[:(k + 1) * m].reshape(k + 1, m)
    cov = vals[(k + 1) * m:].reshape(k, m)
    return CovariantJet(float(t), k, raw, cov)


def iteration_jet(conn: ConnectionField, curve: CurveSpec, t: float) -> np.ndarray:
    """``nabla gamma``, ``nabla^2 gamma``, ``nabla^3 gamma`` from the closed third-order formulas.

    Evaluated pointwise from the Christoffel symbols and their partials,
    independently of the symbolic recursion.
    """
    raw = covariant_jet(flat_connection(curve.dim), curve, t, 3).raw
    x, d1, d2, d3 = raw
    G = christoffel_at(conn, x)
    dG = christoffel_partials(conn, x)
    n2 = d2 + np.einsum("lmn,m,n->l", G, d1, d1)
    gvv = np.einsum("rmn,m,n->r", G, d1, d1)
    n3 = (d3 + np.einsum("lmnk,m,n,k->l", dG, d1, d1, d1)
          + np.einsum("lkr,k,r->l", G, d1, gvv)
          + 2 * np.einsum("lmn,m,n->l", G, d1, d2)
          + np.einsum("lnm,m,n->l", G, d1, d2))
    return np.stack([d1, n2, n3])


# ---------------------------------------------------------------------------
# nabla-type

@dataclass(frozen=True)
class NablaType:
    """Orders ``a_1 < a_2 < ...`` at which the covariant jet gains rank."""

    a: tuple
    complete: bool
    codim: int | None
    singular_values: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if any(y <= x for x, y in zip(self.a, self.a[1:])) or any(v < 1 for v in self.a):
            raise ValueError(f"type {self.a} is not strictly increasing and positive")

    def as_dict(self) -> dict:
        return {"a": list(self.a), "complete": self.complete, "codim": self.codim}


def nabla_type(conn: ConnectionField, curve: CurveSpec, t: float, rmax: int | None = None,
               tol: float = RANK_TOL) -> NablaType:
    """The nabla-type at ``t`` probed up to order ``rmax`` (default ``m + 2``)."""
    m = curve.dim
    rmax = m + 2 if rmax is None else int(rmax)
    if rmax < 1:
        raise ValueError("rmax must be >= 1")
    jet = covariant_jet(conn, curve, t, rmax)
    a = []
    sv = ()
    for k in range(1, rmax + 1):
        res = numerical_rank(jet.covariant[:k], tol)
        sv = res.singular_values
        if res.rank > len(a):
            a.append(k)
            if len(a) == m:
                break
    complete = len(a) == m
    codim = sum(ai - i for i, ai in enumerate(a, start=1)) if complete else None
    return NablaType(tuple(a), complete, codim, sv)


# ---------------------------------------------------------------------------
# torsionless test

@dataclass(frozen=True)
class TorsionlessResult:
    """``status`` is ``"torsionless"``, ``"torsionful"`` or ``"not_nondegenerate"``."""

    torsionless: bool
    residual: float
    status: str
    t_fail: float | None = None

    def __bool__(self):
        return self.torsionless


def is_torsionless(conn: ConnectionField, curve: CurveSpec, interval=None, nsamples: int = 101,
                   tol: float = RANK_TOL) -> TorsionlessResult:
    """Sampled test of ``rank(nabla g, nabla^2 g) = 2`` and ``rank(nabla g, nabla^2 g, nabla^3 g) <= 2``.

    The residual is the largest normalized third singular value
    ``sigma_3 / sigma_1`` of the three-column matrix over the samples.
    """
    if nsamples < 2:
        raise ValueError("nsamples must be >= 2")
    a, b = curve.domain if interval is None else interval
    residual = 0.0
    first_bad = None
    for t in np.linspace(a, b, nsamples):
        cov = covariant_jet(conn, curve, t, 3).covariant
        if numerical_rank(cov[:2], tol).rank < 2:
            return TorsionlessResult(False, residual, "not_nondegenerate", float(t))
        res = numerical_rank(cov, tol)
        if len(res.singular_values) >= 3 and res.singular_values[0] > 0:
            residual = max(residual, res.singular_values[2] / res.singular_values[0])
        if res.rank > 2 and first_bad is None:
            first_bad = float(t)
    if first_bad is not None:
        return TorsionlessResult(False, residual, "torsionful", first_bad)
    return TorsionlessResult(True, residual, "torsionless")


# ---------------------------------------------------------------------------
# curve transformations

def compose_curve(curve: CurveSpec, chart: ChartMap) -> CurveSpec:
    """The curve ``chart.forward(gamma(t))``."""
    if chart.dim != curve.dim:
        raise ValueError("chart and curve dimensions differ")
    on_curve = {f"x{k + 1}": curve.components[k] for k in range(curve.dim)}
    comps = tuple(simplify(substitute(e, on_curve)) for e in chart.forward)
    return CurveSpec(curve.dim, comps, curve.domain)


def reparametrize(curve: CurveSpec, alpha: float, beta: float) -> CurveSpec:
    """The curve ``u -> gamma(alpha u + beta)``; the domain is pulled back."""
    if alpha == 0:
        raise ValueError("alpha must be nonzero")
    sub = {"t": add(mul(Num(float(alpha)), T), Num(float(beta)))}
    comps = tuple(simplify(substitute(e, sub)) for e in curve.components)
    a, b = ((v - beta) / alpha for v in curve.domain)
    return CurveSpec(curve.dim, comps, (min(a, b), max(a, b)))
