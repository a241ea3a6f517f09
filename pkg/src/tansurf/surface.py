"""Tangent surfaces ``f(t, s) = phi(gamma(t), gamma'(t), s)`` and their singularities.

The frame of the frontal is ``V1 = df/dt`` and ``V2 = F = (df/dt - df/ds) / s``
and ``df/dt`` comes from the linearised geodesic flow along the initial
variation ``(gamma', gamma'')``. Classification runs on the covariant jets of
the symmetrized connection; tangent surfaces only see the symmetric part.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ._parallel import parallel_map
from .curves import RANK_TOL, CurveSpec, covariant_jet, numerical_rank
from .expr import ExprError
from .geodesic import DEFAULT_TOL, integrate_geodesic, solve_tangent_flow
from .geometry import ConnectionField, christoffel_at, christoffel_partials, flat_connection

__all__ = [
    "Status", "Frame", "SurfacePatch", "PsiValue", "SingularityReport", "ScanResult",
    "FrameDegenerateError", "NotNondegenerateError", "tan_surface_point", "frontal_frame",
    "s_function", "characteristic_vector", "characteristic_vector_fd", "coframe",
    "characteristic_psi", "classify_point", "scan_interval", "tangent_surface",
]

S_BLEND = 1e-3  # below this |s| the quotient for F is replaced by blending
FRAME_TOL = 1e-11
BISECT_TOL = 1e-10
PSI_PRIME_RTOL = 1e-4


class FrameDegenerateError(ArithmeticError):
    pass


class NotNondegenerateError(ValueError):
    """``nabla gamma`` and ``nabla^2 gamma`` are linearly dependent."""


class Status(str, enum.Enum):
    CUSPIDAL_EDGE = "CuspidalEdge"
    FOLDED_UMBRELLA = "FoldedUmbrella"
    FOLD = "Fold"
    NOT_NONDEGENERATE = "NotNondegenerate"
    DEGENERATE_CHARACTERISTIC = "DegenerateCharacteristic"
    INCOMPLETE = "Incomplete"

    def __str__(self):
        return self.value


def _raw(curve: CurveSpec, t: float, k: int) -> np.ndarray:
    return covariant_jet(flat_connection(curve.dim), curve, t, k).raw


def tan_surface_point(conn: ConnectionField, curve: CurveSpec, t: float, s: float,
                      tol: float = DEFAULT_TOL) -> np.ndarray:
    """The surface point ``f(t, s)``."""
    x, v = _raw(curve, t, 1)
    return integrate_geodesic(conn, x, v, s, tol).pos


# ---------------------------------------------------------------------------
# frame and s-function

@dataclass(frozen=True)
class Frame:
    """Frontal frame at ``(t, s)`` together with ``f`` and ``df/ds``."""

    t: float
    s: float
    point: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    fs: np.ndarray

    @property
    def sigma(self) -> float:
        return _sigma(self.v1, self.fs, self.v1, self.v2)


class _RowFlow:
    """Tangent flows along one ruling, one leg per sign of ``s``."""

    def __init__(self, conn, curve, t, s_values, tol):
        x, v, a = _raw(curve, t, 2)
        self.m = curve.dim
        self.x, self.v = x, v
        self.F0 = covariant_jet(conn, curve, t, 2).nabla(2)
        s_values = np.asarray(s_values, float)
        self.legs = {}
        for sign in (1.0, -1.0):
            reach = max((sign * s for s in s_values), default=0.0)
            if reach > 0:
                reach = max(reach, S_BLEND)
                self.legs[sign] = solve_tangent_flow(conn, x, v, v, a, sign * reach, tol)

    def _raw_frame(self, s):
        if s == 0.0:
            return self.x.copy(), self.v.copy(), self.v.copy()
        q, dq, _ = self.legs[math.copysign(1.0, s)].evaluate(s)
        m = self.m
        return q[:m], q[m:], dq[:m]

    def frame(self, t, s) -> Frame:
        point, ft, fs = self._raw_frame(s)
        if abs(s) >= S_BLEND:
            F = (ft - fs) / s
        elif s == 0.0:
            F = self.F0.copy()
        else:
            sb = math.copysign(S_BLEND, s)
            _, ftb, fsb = self._raw_frame(sb)
            F = self.F0 + (s / sb) * ((ftb - fsb) / sb - self.F0)
        return Frame(float(t), float(s), point, ft, F, fs)


def frontal_frame(conn: ConnectionField, curve: CurveSpec, t: float, s: float,
                  tol: float = FRAME_TOL) -> Frame:
    """Frame ``(V1, V2)`` of the tangent surface at ``(t, s)``.

    ``V2`` is the quotient ``(df/dt - df/ds) / s`` for ``|s| >= 1e-3`` and a
    linear blend towards ``F(t, 0) = nabla^2 gamma(t)`` below.
    """
    return _RowFlow(conn, curve, t, [s], tol).frame(t, s)


def _wedge(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(a.size, 1)
    w = np.outer(a, b)
    return (w - w.T)[iu]


def _sigma(ft, fs, v1, v2) -> float:
    num = _wedge(ft, fs)
    den = _wedge(v1, v2)
    dd = float(den @ den)
    scale = float(np.linalg.norm(v1) * np.linalg.norm(v2))
    if dd == 0.0 or math.sqrt(dd) <= 1e-12 * scale:
        raise FrameDegenerateError("V1 and V2 are linearly dependent")
    return float(num @ den) / dd


def s_function(conn: ConnectionField, curve: CurveSpec, t: float, s: float,
               tol: float = FRAME_TOL) -> float:
    """Signed area density ``sigma`` with ``f_t ^ f_s = sigma V1 ^ V2``.

    Least-squares ratio over all wedge components; exactly 0 at ``s = 0``.
    """
    fr = frontal_frame(conn, curve, t, s, tol)
    if s == 0.0:
        return 0.0
    return _sigma(fr.v1, fr.fs, fr.v1, fr.v2)


# ---------------------------------------------------------------------------
# characteristic vector and function

def characteristic_vector(conn: ConnectionField, curve: CurveSpec, t: float,
                          mode: str = "general") -> np.ndarray:
    """Characteristic vector field ``(nabla_eta F)(t, 0)``.

    Parameters
    ----------
    mode : {"general", "torsion_free"}
        ``general`` evaluates the closed formula in the Christoffel symbols,
        valid for any connection. ``torsion_free`` returns
        ``nabla^3 gamma`` of ``conn`` itself, which equals the former only
        when ``conn`` is symmetric.
    """
    if mode == "torsion_free":
        return covariant_jet(conn, curve, t, 3).nabla(3)
    if mode != "general":
        raise ValueError(f"unknown mode {mode!r}")
    x, d1, d2, d3 = _raw(curve, t, 3)
    G = christoffel_at(conn, x)
    dG = christoffel_partials(conn, x)
    cubic = (np.einsum("lmnk,m,n,k->l", dG, d1, d1, d1)
             + 0.5 * np.einsum("lrm,rnk,m,n,k->l", G, G, d1, d1, d1)
             + 0.5 * np.einsum("lmr,rnk,m,n,k->l", G, G, d1, d1, d1))
    mixed = 1.5 * (np.einsum("lmn,m,n->l", G, d1, d2) + np.einsum("lnm,m,n->l", G, d1, d2))
    return d3 + cubic + mixed


def characteristic_vector_fd(conn: ConnectionField, curve: CurveSpec, t: float,
                             eps: float = 0.01, tol: float = 1e-12) -> np.ndarray:
    """Finite-difference ``(dF/dt - dF/ds)(t, 0)`` along the kernel direction.

    Central differences of ``F`` at ``(t +- e, -+e)`` for ``e = eps, 2 eps``,
    Richardson-combined. Only plain partials of ``F`` enter, so this is
    the characteristic vector computed with the flat chart connection.
    """
    def slope(e):
        fp = frontal_frame(conn, curve, t + e, -e, tol).v2
        fm = frontal_frame(conn, curve, t - e, e, tol).v2
        return (fp - fm) / (2 * e)

    return (4 * slope(eps) - slope(2 * eps)) / 3


def coframe(d1: np.ndarray, d2: np.ndarray, prev: np.ndarray | None = None) -> np.ndarray:
    """Orthonormal rows spanning the annihilator of ``span{d1, d2}``.

    For ``m = 3`` this is the normalized cross product. Otherwise the
    previous basis ``prev`` is projected onto the new complement and
    re-orthonormalized, or, without one, each row is signed so that its
    largest entry is positive.
    """
    m = d1.size
    if m == 3:
        c = np.cross(d1, d2)
        return (c / np.linalg.norm(c))[None, :]
    u, _, _ = np.linalg.svd(np.column_stack([d1, d2]), full_matrices=True)
    comp = u[:, 2:]
    if prev is not None and prev.shape == (m - 2, m):
        proj = comp @ (comp.T @ prev.T)
        pu, ps, pvt = np.linalg.svd(proj, full_matrices=False)
        if ps.size and ps[-1] > 1e-8:
            return (pu @ pvt).T
    rows = comp.T.copy()
    for r in rows:
        if r[np.argmax(np.abs(r))] < 0:
            r *= -1
    return rows


@dataclass(frozen=True)
class PsiValue:
    """Characteristic function at ``t``.

    ``psi`` pairs the orthonormal coframe with the characteristic vector;
    ``canonical`` (``m = 3`` only) uses ``nabla gamma x nabla^2 gamma``.
    """

    t: float
    psi: np.ndarray
    canonical: float | None
    basis: np.ndarray
    charvec: np.ndarray


def _psi_from_jet(cov: np.ndarray, t: float, prev=None) -> PsiValue:
    d1, d2, d3 = cov[0], cov[1], cov[2]
    basis = coframe(d1, d2, prev)
    canon = float(np.cross(d1, d2) @ d3) if d1.size == 3 else None
    return PsiValue(float(t), basis @ d3, canon, basis, d3)


def characteristic_psi(conn: ConnectionField, curve: CurveSpec, t: float, prev: np.ndarray | None = None,
                       tol: float = RANK_TOL) -> PsiValue:
    """Characteristic function ``psi(t)`` of dimension ``m - 2``.

    The characteristic vector is ``nabla^3 gamma`` of the symmetrized
    connection, which equals the general formula for ``conn``.
    Raises :class:`NotNondegenerateError` when ``rank(nabla g, nabla^2 g) < 2``.
    """
    if curve.dim < 3:
        raise ValueError("the characteristic function needs m >= 3")
    cov = covariant_jet(conn.symmetric, curve, t, 3).covariant
    if numerical_rank(cov[:2], tol).rank < 2:
        raise NotNondegenerateError(f"rank(nabla gamma, nabla^2 gamma) < 2 at t = {t}")
    return _psi_from_jet(cov, t, prev)


# ---------------------------------------------------------------------------
# classification

_RANK_KEYS = ("d1d2", "d1d2d3", "d1d2d4")


@dataclass(frozen=True)
class SingularityReport:
    t0: float
    status: Status
    ranks: dict
    singular_values: dict
    tolerance: float
    psi: tuple | None = None
    psi_canonical: float | None = None
    psi_prime: tuple | None = None
    psi_prime_reduced: tuple | None = None
    psi_prime_discrepancy: float | None = None
    message: str = ""
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def psi_prime_mismatch(self) -> bool:
        return self.psi_prime_discrepancy is not None and self.psi_prime_discrepancy > PSI_PRIME_RTOL

    def as_dict(self) -> dict:
        return {
            "status": self.status.value,
            "t0": self.t0,
            "ranks": dict(self.ranks),
            "psi": None if self.psi is None else list(self.psi),
            "psi_prime": None if self.psi_prime is None else list(self.psi_prime),
            "singular_values": {k: list(v) for k, v in self.singular_values.items()},
            "tolerance": self.tolerance,
            "psi_canonical": self.psi_canonical,
            "psi_prime_reduced": None if self.psi_prime_reduced is None else list(self.psi_prime_reduced),
            "psi_prime_discrepancy": self.psi_prime_discrepancy,
            "psi_prime_mismatch": self.psi_prime_mismatch,
            "message": self.message,
        }


def _tuple(a) -> tuple:
    return tuple(float(v) for v in a)


def classify_point(conn: ConnectionField, curve: CurveSpec, t0: float, tol: float = RANK_TOL) -> SingularityReport:
    """Classify the tangent surface singularity at ``(t0, 0)``.

    Decision tree on the covariant jet of the symmetrized connection:
    ``rank(nabla g, nabla^2 g) < 2`` gives ``NotNondegenerate``; ``m = 2``
    gives ``Fold``; ``rank(nabla g, nabla^2 g, nabla^3 g) = 3`` gives
    ``CuspidalEdge``; for ``m = 3``, ``rank(nabla g, nabla^2 g, nabla^4 g) = 3``
    gives ``FoldedUmbrella``; anything else is ``DegenerateCharacteristic``.
    """
    t0 = float(t0)
    m = curve.dim
    sym = conn.symmetric
    try:
        cov = covariant_jet(sym, curve, t0, 4).covariant
    except (ExprError, ArithmeticError) as exc:
        return SingularityReport(t0, Status.INCOMPLETE, {}, {}, tol, message=str(exc))
    if not np.all(np.isfinite(cov)):
        return SingularityReport(t0, Status.INCOMPLETE, {}, {}, tol, message="non-finite jet")
    picks = {"d1d2": (0, 1), "d1d2d3": (0, 1, 2), "d1d2d4": (0, 1, 3)}
    results = {k: numerical_rank(cov[list(ix)], tol) for k, ix in picks.items()}
    ranks = {k: r.rank for k, r in results.items()}
    svs = {k: r.singular_values for k, r in results.items()}

    def report(status, **kw):
        return SingularityReport(t0, status, ranks, svs, tol, **kw)

    if ranks["d1d2"] < 2:
        return report(Status.NOT_NONDEGENERATE)
    if m == 2:
        return report(Status.FOLD)
    pv = _psi_from_jet(cov, t0)
    kw = {"psi": _tuple(pv.psi), "psi_canonical": pv.canonical}
    if ranks["d1d2d3"] == 3:
        return report(Status.CUSPIDAL_EDGE, **kw)
    # psi(t0) vanishes: record psi' both ways
    reduced = pv.basis @ cov[3]
    kw["psi_prime_reduced"] = _tuple(reduced)
    h = 1e-4 * max(1.0, abs(t0))
    try:
        up = _psi_from_jet(covariant_jet(sym, curve, t0 + h, 3).covariant, t0 + h, pv.basis)
        dn = _psi_from_jet(covariant_jet(sym, curve, t0 - h, 3).covariant, t0 - h, pv.basis)
        fd = (up.psi - dn.psi) / (2 * h)
        kw["psi_prime"] = _tuple(fd)
        denom = max(float(np.linalg.norm(reduced)), float(np.linalg.norm(fd)))
        kw["psi_prime_discrepancy"] = float(np.linalg.norm(fd - reduced)) / denom if denom > 0 else 0.0
    except (ExprError, ArithmeticError) as exc:
        kw["message"] = f"psi' unavailable: {exc}"
    if m == 3 and ranks["d1d2d4"] == 3:
        return report(Status.FOLDED_UMBRELLA, **kw)
    return report(Status.DEGENERATE_CHARACTERISTIC, **kw)


# ---------------------------------------------------------------------------
# scanning

@dataclass(frozen=True)
class ScanResult:
    samples: list
    zeros: list  # refined psi zeros
    zero_reports: list


def _psi_canonical(conn, curve, t) -> float:
    cov = covariant_jet(conn.symmetric, curve, t, 3).covariant
    return float(np.cross(cov[0], cov[1]) @ cov[2])


def _bisect(conn, curve, a, b, fa) -> float:
    while b - a > BISECT_TOL:
        mid = 0.5 * (a + b)
        fm = _psi_canonical(conn, curve, mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (fa > 0):
            a, fa = mid, fm
        else:
            b = mid
    return 0.5 * (a + b)


def scan_interval(conn: ConnectionField, curve: CurveSpec, interval, n: int,
                  tol: float = RANK_TOL) -> ScanResult:
    """Classify ``n`` uniform samples and refine the zeros of the canonical psi.

    Sign changes between consecutive samples are bisected to
    ``|dt| <= 1e-10``. A run of samples where psi is negligible (rank of
    ``(nabla g, nabla^2 g, nabla^3 g)`` below 3) bounded by regular samples
    counts as one zero at its middle sample. If psi is negligible at every
    sample nothing is refined.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    a, b = (float(v) for v in interval)
    ts = np.linspace(a, b, n)
    samples = parallel_map(lambda t: classify_point(conn, curve, t, tol), ts)
    if curve.dim != 3:
        return ScanResult(samples, [], [])
    defined = {Status.CUSPIDAL_EDGE, Status.FOLDED_UMBRELLA, Status.DEGENERATE_CHARACTERISTIC}
    vals = [r.psi_canonical if r.status in defined else None for r in samples]
    small = [r.status in defined and r.ranks["d1d2d3"] < 3 for r in samples]
    zeros = []
    if any(v is not None and not z for v, z in zip(vals, small)):
        i = 0
        while i < n:
            if vals[i] is None:
                i += 1
                continue
            if small[i]:
                j = i
                while j + 1 < n and small[j + 1]:
                    j += 1
                zeros.append(float(ts[(i + j) // 2]))
                i = j + 1
                continue
            if i + 1 < n and vals[i + 1] is not None and not small[i + 1] and (vals[i] > 0) != (vals[i + 1] > 0):
                zeros.append(_bisect(conn, curve, ts[i], ts[i + 1], vals[i]))
            i += 1
    reports = parallel_map(lambda t: classify_point(conn, curve, t, tol), zeros)
    return ScanResult(samples, zeros, reports)


# ---------------------------------------------------------------------------
# surface grids

@dataclass(frozen=True)
class SurfacePatch:
    """Samples of ``f`` on ``t_grid x s_grid`` with the frontal frame and ``sigma``.

    ``points``, ``v1`` and ``v2`` have shape ``(nt, ns, m)`` and ``sigma``
    shape ``(nt, ns)``; ``sigma`` is ``nan`` where the frame degenerates.
    """

    t: np.ndarray
    s: np.ndarray
    points: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    sigma: np.ndarray


def _increasing(a, name):
    a = np.asarray(a, float)
    if a.ndim != 1 or a.size < 1 or np.any(np.diff(a) <= 0):
        raise ValueError(f"{name} must be a strictly increasing 1-d array")
    return a


def tangent_surface(conn: ConnectionField, curve: CurveSpec, t_grid, s_grid, tol: float = DEFAULT_TOL,
                    frames: bool = True) -> SurfacePatch:
    """Sample the tangent surface on a grid.

    Points are independent geodesic integrations per cell. Frames, when
    requested, come from one tangent flow per ``t`` row.
    """
    tg = _increasing(t_grid, "t grid")
    sg = _increasing(s_grid, "s grid")
    m = curve.dim
    nt, ns = tg.size, sg.size
    cells = [(i, j) for i in range(nt) for j in range(ns)]
    pts = parallel_map(lambda c: tan_surface_point(conn, curve, tg[c[0]], sg[c[1]], tol), cells)
    points = np.array(pts).reshape(nt, ns, m)
    v1 = np.full((nt, ns, m), np.nan)
    v2 = np.full((nt, ns, m), np.nan)
    sigma = np.full((nt, ns), np.nan)
    if frames:
        def row(i):
            flow = _RowFlow(conn, curve, tg[i], sg, FRAME_TOL)
            return [flow.frame(tg[i], s) for s in sg]

        for i, frs in enumerate(parallel_map(row, range(nt))):
            for j, fr in enumerate(frs):
                v1[i, j], v2[i, j] = fr.v1, fr.v2
                if sg[j] == 0.0:
                    sigma[i, j] = 0.0
                    continue
                try:
                    sigma[i, j] = fr.sigma
                except FrameDegenerateError:
                    pass
    return SurfacePatch(tg, sg, points, v1, v2, sigma)
