"""Geodesic flow of an affine connection.

Integrates ``phi'' + Gamma(phi)(phi', phi') = 0`` with an adaptive
Dormand-Prince 5(4) pair and extracts the remainder ``h`` in
``phi(x, v, s) = x + s v + s^2/2 h(x, v, s)``.

The pair is applied to the first-order system ``(q, p)`` but evaluated in
Nystrom form (``q`` updates use ``A @ A`` and ``b @ A``), which is the same
method algebraically while keeping ``q_new - q0 - h p0`` free of roundoff
when the acceleration vanishes. Positions are integrated as displacements
from the start point for the same reason.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .expr import ExprDomainError
from .geometry import ConnectionField, christoffel_at, christoffel_partials

__all__ = [
    "GeodesicState", "GeodesicSolution", "IntegrationError", "StepSizeUnderflow",
    "NonFiniteState", "integrate_geodesic", "solve_geodesic", "solve_tangent_flow",
    "geodesic_h", "h_series", "taylor_residuals", "TaylorResiduals",
    "DEFAULT_TOL", "H_MIN", "H_MAX", "S_SWITCH",
]

DEFAULT_TOL = 1e-9
H_MIN = 1e-8
H_MAX = 0.1
S_SWITCH = 1e-3
H_TOL = 1e-13  # remainder extraction divides by s^2


class IntegrationError(ArithmeticError):
    def __init__(self, message: str, s_reached: float):
        super().__init__(f"{message} (reached s = {s_reached!r})")
        self.s_reached = s_reached


class StepSizeUnderflow(IntegrationError):
    pass


class NonFiniteState(IntegrationError):
    pass


class ConnectionFailure(IntegrationError):
    pass


# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = np.zeros((7, 7))
_A[1, :1] = [1 / 5]
_A[2, :2] = [3 / 40, 9 / 40]
_A[3, :3] = [44 / 45, -56 / 15, 32 / 9]
_A[4, :4] = [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]
_A[5, :5] = [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]
_A[6, :6] = [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]
_B = _A[6].copy()
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B - _B4
_A2 = _A @ _A
_BA = _B @ _A
_EA = _E @ _A

# quintic Hermite basis on [0, 1]: rows are (q0, h q0', h^2 q0'', q1, h q1', h^2 q1''),
# columns are coefficients of theta^0..theta^5
_HERMITE = np.array([
    [1, 0, 0, -10, 15, -6],
    [0, 1, 0, -6, 8, -3],
    [0, 0, 0.5, -1.5, 1.5, -0.5],
    [0, 0, 0, 10, -15, 6],
    [0, 0, 0, -4, 7, -3],
    [0, 0, 0, 0.5, -1, 0.5],
])


def _hermite_basis(order: int) -> np.ndarray:
    # rows: (q0, h q0', .., h^r q0^(r), q1, ..) for r = order; columns: theta powers.
    # Solved in exact rationals so the basis carries no roundoff.
    n = 2 * (order + 1)
    rows = [[Fraction(math.perm(k, d)) * end ** (k - d) if k >= d else Fraction(0) for k in range(n)]
            for end in (0, 1) for d in range(order + 1)]
    inv = [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]
    for c in range(n):
        piv = next(r for r in range(c, n) if rows[r][c] != 0)
        rows[c], rows[piv] = rows[piv], rows[c]
        inv[c], inv[piv] = inv[piv], inv[c]
        f = rows[c][c]
        rows[c] = [v / f for v in rows[c]]
        inv[c] = [v / f for v in inv[c]]
        for r in range(n):
            if r != c and rows[r][c] != 0:
                g = rows[r][c]
                rows[r] = [a - g * b for a, b in zip(rows[r], rows[c])]
                inv[r] = [a - g * b for a, b in zip(inv[r], inv[c])]
    return np.array(inv, dtype=float).T


# septic basis used when the jerk is known at the knots
_HERMITE7 = _hermite_basis(3)


@dataclass(frozen=True)
class GeodesicState:
    s: float
    pos: np.ndarray
    vel: np.ndarray


def _hermite_eval(left, right, h: float, th: float):
    """Interpolant ``(q, q', q'')`` at fraction ``th`` of a step of width ``h``.

    ``left`` and ``right`` are ``(q, p, a)`` or ``(q, p, a, jerk)``.
    """
    basis = _HERMITE if len(left) == 3 else _HERMITE7
    data = np.stack([h ** d * v for d, v in enumerate(left)] + [h ** d * v for d, v in enumerate(right)])
    k = np.arange(basis.shape[1])
    c = basis @ np.stack([th ** k, k * th ** np.maximum(k - 1, 0), k * (k - 1) * th ** np.maximum(k - 2, 0)]).T
    return c[:, 0] @ data, c[:, 1] @ data / h, c[:, 2] @ data / (h * h)


_DENSE_PROBES = (0.25, 0.75)


def _integrate(accel: Callable, q0: np.ndarray, p0: np.ndarray, s_end: float, tol: float,
               h_min: float, h_max: float, record: bool, jerk: Callable | None = None):
    """Integrate ``q'' = accel(q, q')`` from 0 to ``s_end``.

    Returns ``(q, p, knots)`` where ``knots`` (when ``record``) lists
    ``(s, q, p, a)`` at every accepted step for dense output.

    With ``jerk(q, p, a)`` given, knots also carry the jerk and each step is
    additionally accepted only if the septic interpolant satisfies the ODE
    to ``tol (1 + |a|)`` at the probe fractions. This bounds the dense
    output residual, which otherwise grows like local error over ``h^2``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = q0.size
    q = q0.astype(float).copy()
    p = p0.astype(float).copy()
    s = 0.0
    a0 = np.asarray(accel(q, p), float)
    j0 = np.asarray(jerk(q, p, a0), float) if jerk else None
    knots = [(0.0, q.copy(), p.copy(), a0.copy()) + ((j0,) if jerk else ())] if record else None
    if s_end == 0.0:
        return q, p, knots
    direction = 1.0 if s_end > 0 else -1.0
    h = min(h_max, abs(s_end))
    K = np.empty((7, n))
    K[0] = a0
    while direction * (s_end - s) > 0:
        remaining = abs(s_end - s)
        last = h >= remaining
        if last:
            h = remaining
        hs = direction * h
        for i in range(1, 7):
            qi = q + hs * _C[i] * p + hs * hs * (_A2[i, :i] @ K[:i])
            pi = p + hs * (_A[i, :i] @ K[:i])
            try:
                K[i] = accel(qi, pi)
            except ExprDomainError as exc:
                raise ConnectionFailure(str(exc), s) from exc
        q_new = q + hs * p + hs * hs * (_BA @ K)
        p_new = p + hs * (_B @ K)
        err_q = hs * hs * (_EA @ K)
        err_p = hs * (_E @ K)
        if not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(p_new))):
            if h <= h_min:
                raise NonFiniteState("non-finite state", s)
            h *= 0.2
            continue
        scale_q = tol * (1.0 + np.maximum(np.abs(q), np.abs(q_new)))
        scale_p = tol * (1.0 + np.maximum(np.abs(p), np.abs(p_new)))
        err = max(float(np.max(np.abs(err_q) / scale_q)), float(np.max(np.abs(err_p) / scale_p)))
        j_new, dense = None, 0.0
        if jerk and err <= 1.0:
            try:
                j_new = np.asarray(jerk(q_new, p_new, K[6]), float)
                scale_a = tol * (1.0 + max(float(np.max(np.abs(K[0]))), float(np.max(np.abs(K[6])))))
                # second derivatives of the interpolant cannot beat roundoff in q over h^2
                scale_a += 64 * np.finfo(float).eps * (1.0 + float(np.max(np.abs(q_new)))) / (h * h)
                for th in _DENSE_PROBES:
                    qt, pt, at = _hermite_eval((q, p, K[0], j0), (q_new, p_new, K[6], j_new), hs, th)
                    dense = max(dense, float(np.max(np.abs(at - np.asarray(accel(qt, pt))))) / scale_a)
            except ExprDomainError as exc:
                raise ConnectionFailure(str(exc), s) from exc
        if err <= 1.0 and dense <= 1.0:
            s = s_end if last else s + hs
            q, p = q_new, p_new
            K[0] = K[6]
            j0 = j_new
            if record:
                knots.append((s, q.copy(), p.copy(), K[0].copy()) + ((j0,) if jerk else ()))
            factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            if dense > 0.0:
                factor = min(factor, max(0.2, 0.9 * dense ** -0.25))
            h = min(h_max, h * factor)
        else:
            if h <= h_min and not (last and remaining < h_min):
                raise StepSizeUnderflow("step size underflow", s)
            shrink = 0.9 * err ** -0.2 if err > 1.0 else 0.9 * dense ** -0.25
            h = max(h_min, h * max(0.2, shrink))
    return q, p, knots


class GeodesicSolution:
    """Dense output of one integration leg.

    Between accepted steps the position (or, for tangent flows, the whole
    ``q`` block) is a quintic Hermite interpolant of ``q, q', q''``; the
    velocity and acceleration are its derivatives.
    """

    def __init__(self, knots, offset: np.ndarray):
        # drop a roundoff-length final step so no segment has zero width
        knots = [k for i, k in enumerate(knots)
                 if i + 1 == len(knots) or abs(knots[i + 1][0] - k[0]) > 1e-13 * max(1.0, abs(k[0]))]
        self.s = np.array([k[0] for k in knots])
        self.q = np.array([k[1] for k in knots])
        self.p = np.array([k[2] for k in knots])
        self.a = np.array([k[3] for k in knots])
        self.j = np.array([k[4] for k in knots]) if len(knots[0]) > 4 else None
        self.offset = offset
        self._order = np.argsort(self.s)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.s.min()), float(self.s.max())

    def _segment(self, s: float):
        order = self._order
        ss = self.s[order]
        if s < ss[0] - 1e-14 or s > ss[-1] + 1e-14:
            raise ValueError(f"s = {s} outside integrated span {self.span}")
        j = int(np.clip(np.searchsorted(ss, s) - 1, 0, len(ss) - 2))
        return order[j], order[j + 1]

    def evaluate(self, s: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(q, q', q'')`` at ``s``; ``q`` includes the start offset."""
        if len(self.s) == 1:
            return self.q[0] + self.offset, self.p[0], self.a[0]
        i0, i1 = self._segment(s)
        s0, s1 = self.s[i0], self.s[i1]
        h = s1 - s0
        th = (s - s0) / h
        tail = (self.j[i0],) if self.j is not None else ()
        left = (self.q[i0], self.p[i0], self.a[i0]) + tail
        tail = (self.j[i1],) if self.j is not None else ()
        right = (self.q[i1], self.p[i1], self.a[i1]) + tail
        q, dq, ddq = _hermite_eval(left, right, h, th)
        return q + self.offset, dq, ddq

    def state(self, s: float) -> GeodesicState:
        q, dq, _ = self.evaluate(s)
        m = self.offset.size
        return GeodesicState(float(s), q[:m], dq[:m])


def _check_inputs(conn: ConnectionField, x, v):
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    if x.shape != (conn.dim,) or v.shape != (conn.dim,):
        raise ValueError(f"x and v must have length {conn.dim}")
    return x, v


def _spray(conn: ConnectionField, x0: np.ndarray):
    kern = conn.kernels
    base = x0.tolist()

    def accel(q, p):
        pos = [b + d for b, d in zip(base, q.tolist())]
        return kern.accel(pos, p.tolist())

    return accel


def integrate_geodesic(conn: ConnectionField, x, v, s_target: float, tol: float = DEFAULT_TOL,
                       h_min: float = H_MIN, h_max: float = H_MAX) -> GeodesicState:
    """Geodesic ``phi(x, v, s_target)`` and its velocity.

    Raises :class:`StepSizeUnderflow`, :class:`NonFiniteState` or
    :class:`ConnectionFailure` (all :class:`IntegrationError`).
    """
    x, v = _check_inputs(conn, x, v)
    u, p, _ = _integrate(_spray(conn, x), np.zeros_like(x), v, float(s_target), tol, h_min, h_max, False)
    return GeodesicState(float(s_target), x + u, p)


def solve_geodesic(conn: ConnectionField, x, v, s_target: float, tol: float = DEFAULT_TOL,
                   h_min: float = H_MIN, h_max: float = H_MAX) -> GeodesicSolution:
    """Integrate from 0 to ``s_target`` keeping dense output."""
    x, v = _check_inputs(conn, x, v)
    tangent = conn.kernels.tangent
    base = x.tolist()

    def jerk(q, p, a):
        # d/ds of the spray along the solution: D(accel).(q', q'')
        pl = p.tolist()
        return tangent([b + d for b, d in zip(base, q.tolist())], pl, pl, a.tolist())

    _, _, knots = _integrate(_spray(conn, x), np.zeros_like(x), v, float(s_target), tol, h_min, h_max, True, jerk)
    return GeodesicSolution(knots, x)


def solve_tangent_flow(conn: ConnectionField, x, v, dx, dv, s_target: float, tol: float = DEFAULT_TOL,
                       h_min: float = H_MIN, h_max: float = H_MAX) -> GeodesicSolution:
    """Geodesic together with its linearisation along the initial variation ``(dx, dv)``.

    The ``q`` block of the solution is ``(phi, dphi)`` where ``dphi`` is the
    derivative of ``phi(x + e dx, v + e dv, s)`` in ``e`` at 0.
    """
    x, v = _check_inputs(conn, x, v)
    dx, dv = _check_inputs(conn, dx, dv)
    m = conn.dim
    kern = conn.kernels
    base = x.tolist()

    def accel(q, p):
        ql = q.tolist()
        pl = p.tolist()
        pos = [b + d for b, d in zip(base, ql[:m])]
        vel = pl[:m]
        return kern.accel(pos, vel) + kern.tangent(pos, vel, ql[m:], pl[m:])

    q0 = np.concatenate([np.zeros(m), dx])
    p0 = np.concatenate([v, dv])
    _, _, knots = _integrate(accel, q0, p0, float(s_target), tol, h_min, h_max, True)
    return GeodesicSolution(knots, np.concatenate([x, np.zeros(m)]))


# ---------------------------------------------------------------------------
# remainder term

def h_series(conn: ConnectionField, x, v) -> tuple[np.ndarray, np.ndarray]:
    """``h(x, v, 0)`` and ``dh/ds(x, v, 0)`` from the Christoffel symbols.

    ``h0 = -Gamma(v, v)`` and
    ``dh/ds = (-Gamma_{mn,k} + Gamma^l_{rk} Gamma^r_{mn} + Gamma^l_{kr} Gamma^r_{mn}) v^m v^n v^k / 3``.
    """
    x, v = _check_inputs(conn, x, v)
    G = christoffel_at(conn, x)
    dG = christoffel_partials(conn, x)
    h0 = -np.einsum("lmn,m,n->l", G, v, v)
    gvv = np.einsum("rmn,m,n->r", G, v, v)
    hs = (-np.einsum("lmnk,m,n,k->l", dG, v, v, v)
          + np.einsum("lrk,r,k->l", G, gvv, v)
          + np.einsum("lkr,k,r->l", G, v, gvv)) / 3.0
    return h0, hs


def geodesic_h(conn: ConnectionField, x, v, s: float, tol: float = H_TOL,
               s_switch: float = S_SWITCH) -> np.ndarray:
    """Remainder ``h(x, v, s)``.

    For ``|s| >= s_switch`` it is ``2 (phi - x - s v) / s^2`` from the
    integrator, below that the two-term series ``h0 + s dh/ds``.
    """
    x, v = _check_inputs(conn, x, v)
    if abs(s) < s_switch:
        h0, hs = h_series(conn, x, v)
        return h0 + s * hs
    u, _, _ = _integrate(_spray(conn, x), np.zeros_like(x), v, float(s), tol, H_MIN, H_MAX, False)
    return 2.0 * (u - s * v) / (s * s)


@dataclass(frozen=True)
class TaylorResiduals:
    """Max-norm residuals of the four remainder identities at ``(x, v)``."""

    h0: float
    dh_dx: float
    dh_dv: float
    dh_ds: float

    @property
    def worst(self) -> float:
        return max(self.h0, self.dh_dx, self.dh_dv, self.dh_ds)

    def as_dict(self) -> dict:
        return {"h0": self.h0, "dh_dx": self.dh_dx, "dh_dv": self.dh_dv, "dh_ds": self.dh_ds}


def _h_zero_from_flow(conn, x, v, delta):
    # symmetric averages at delta and 2 delta, Richardson-combined: O(delta^4)
    near = 0.5 * (geodesic_h(conn, x, v, delta) + geodesic_h(conn, x, v, -delta))
    far = 0.5 * (geodesic_h(conn, x, v, 2 * delta) + geodesic_h(conn, x, v, -2 * delta))
    return (4.0 * near - far) / 3.0


def _h_slope_from_flow(conn, x, v, delta):
    near = geodesic_h(conn, x, v, delta) - geodesic_h(conn, x, v, -delta)
    far = geodesic_h(conn, x, v, 2 * delta) - geodesic_h(conn, x, v, -2 * delta)
    return (8.0 * near - far) / (12.0 * delta)


def taylor_residuals(conn: ConnectionField, x, v, fd_step: float = 1e-4,
                     delta0: float = 2e-3, delta1: float = 1e-2) -> TaylorResiduals:
    """Compare the integrated remainder with its closed forms.

    ``h(x, v, 0)`` is read off the flow by symmetric averaging at
    ``s = +-delta0, +-2 delta0`` with one Richardson step; its ``x`` and
    ``v`` derivatives are central differences (step ``fd_step``) of that
    flow value; ``dh/ds`` is the Richardson-combined central difference of
    the flow remainder at ``s = +-delta1, +-2 delta1``.
    """
    x, v = _check_inputs(conn, x, v)
    m = conn.dim
    G = christoffel_at(conn, x)
    dG = christoffel_partials(conn, x)
    h0_formula, hs_formula = h_series(conn, x, v)
    r0 = float(np.max(np.abs(_h_zero_from_flow(conn, x, v, delta0) - h0_formula)))

    dh_dx_formula = -np.einsum("lmnk,m,n->lk", dG, v, v)
    dh_dv_formula = -np.einsum("lrn,n->lr", G, v) - np.einsum("lmr,m->lr", G, v)
    dh_dx = np.empty((m, m))
    dh_dv = np.empty((m, m))
    for k in range(m):
        e = np.zeros(m)
        e[k] = fd_step
        dh_dx[:, k] = (_h_zero_from_flow(conn, x + e, v, delta0)
                       - _h_zero_from_flow(conn, x - e, v, delta0)) / (2 * fd_step)
        dh_dv[:, k] = (_h_zero_from_flow(conn, x, v + e, delta0)
                       - _h_zero_from_flow(conn, x, v - e, delta0)) / (2 * fd_step)
    r1 = float(np.max(np.abs(dh_dx - dh_dx_formula)))
    r2 = float(np.max(np.abs(dh_dv - dh_dv_formula)))
    slope = _h_slope_from_flow(conn, x, v, delta1)
    r3 = float(np.max(np.abs(slope - hs_formula)))
    return TaylorResiduals(r0, r1, r2, r3)
