"""Monte-Carlo census of nabla-types along random polynomial curves.

Curves have standard-normal polynomial coefficients drawn from a Philox
generator keyed by ``(seed, index)``, so curve ``index`` is the same no
matter which worker builds it or in what order.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._parallel import parallel_map
from .curves import RANK_TOL, CurveSpec, nabla_type
from .expr import T, Num, mul, power, total
from .geometry import ConnectionField

__all__ = [
    "CurveSampler", "Violation", "CensusResult", "CENSUS_NOTE", "allowed_types",
    "sample_coefficients", "sample_random_curve", "polynomial_curve", "type_census",
]

CENSUS_NOTE = (
    "Genericity holds on an open dense set of smooth curves in the Whitney C-infinity "
    "topology. Random polynomial curves are a finite-dimensional proxy for that set, "
    "and only grid points are probed."
)

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class CurveSampler:
    """Random polynomial curves of ``degree`` in ``dim`` coordinates."""

    dim: int
    degree: int
    seed: int = 0
    domain: tuple = (-1.0, 1.0)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.degree < self.dim + 1:
            raise ValueError(f"degree must be >= dim + 1 = {self.dim + 1}")
        if not 0 <= self.seed <= _MASK64:
            raise ValueError("seed must fit in 64 bits")


def sample_coefficients(sampler: CurveSampler, index: int) -> np.ndarray:
    """Coefficient array of shape ``(dim, degree + 1)``, lowest power first."""
    if index < 0:
        raise ValueError("index must be >= 0")
    key = sampler.seed | (int(index) << 64)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.standard_normal((sampler.dim, sampler.degree + 1))


def polynomial_curve(coeffs, domain=(-1.0, 1.0)) -> CurveSpec:
    """Curve whose component ``i`` is ``sum_k coeffs[i, k] t^k``."""
    coeffs = np.asarray(coeffs, float)
    comps = []
    for row in coeffs:
        terms = [Num(float(row[0]))] + [
            mul(Num(float(c)), T if k == 1 else power(T, Num(float(k))))
            for k, c in enumerate(row[1:], start=1)
        ]
        comps.append(total(terms))
    return CurveSpec(coeffs.shape[0], tuple(comps), tuple(domain))


def sample_random_curve(sampler: CurveSampler, index: int) -> CurveSpec:
    return polynomial_curve(sample_coefficients(sampler, index), sampler.domain)


def allowed_types(m: int) -> frozenset:
    """Generic nabla-types ``(1, ..., m)`` and ``(1, ..., m - 1, m + 1)``."""
    base = tuple(range(1, m))
    return frozenset({base + (m,), base + (m + 1,)})


@dataclass(frozen=True)
class Violation:
    curve: object  # sample index, or the label of an injected curve
    t: float
    a: tuple
    complete: bool


@dataclass
class CensusResult:
    dim: int
    n_points: int
    histogram: Counter
    violations: list
    filtered: int = 0  # violations that vanished at the tighter tolerance
    note: str = CENSUS_NOTE
    per_curve: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        def key(a, complete):
            return ",".join(map(str, a)) + ("" if complete else "+incomplete")

        return {
            "note": self.note,
            "dim": self.dim,
            "points": self.n_points,
            "histogram": {key(*k): v for k, v in sorted(self.histogram.items())},
            "violations": [
                {"curve": v.curve, "t": v.t, "a": list(v.a), "complete": v.complete}
                for v in self.violations
            ],
            "filtered": self.filtered,
        }


def _census_curve(conn, curve, label, grid, tol, allowed, rmax):
    hist = Counter()
    bad = []
    filtered = 0
    for t in grid:
        nt = nabla_type(conn, curve, t, rmax, tol)
        hist[(nt.a, nt.complete)] += 1
        if nt.complete and nt.a in allowed:
            continue
        again = nabla_type(conn, curve, t, rmax, tol / 10)
        if again.complete and again.a in allowed:
            filtered += 1
            continue
        bad.append(Violation(label, float(t), nt.a, nt.complete))
    return hist, bad, filtered


def type_census(conn: ConnectionField, sampler: CurveSampler, n_curves: int, t_grid: Sequence[float],
                tol: float = RANK_TOL, extra_curves: Sequence = ()) -> CensusResult:
    """Histogram of nabla-types over random curves and grid points.

    Parameters
    ----------
    extra_curves : sequence of ``(label, curve)`` or ``(label, curve, conn)``
        Curves injected after the random ones; a third entry overrides the
        census connection for that curve.

    Points outside the generic list are re-tested at ``tol / 10`` and only
    kept as violations if they are still outside it.
    """
    if n_curves < 1:
        raise ValueError("n_curves must be >= 1")
    if conn.dim != sampler.dim:
        raise ValueError("connection and sampler dimensions differ")
    m = sampler.dim
    grid = [float(t) for t in t_grid]
    allowed = allowed_types(m)
    rmax = m + 2
    jobs = [(i, None, None) for i in range(n_curves)]
    jobs += [(e[0], e[1], e[2] if len(e) > 2 else None) for e in extra_curves]

    def work(job):
        label, curve, c = job
        if curve is None:
            curve = sample_random_curve(sampler, label)
        return _census_curve(conn if c is None else c, curve, label, grid, tol, allowed, rmax)

    hist = Counter()
    violations = []
    filtered = 0
    per_curve = {}
    for job, (h, bad, f) in zip(jobs, parallel_map(work, jobs)):
        hist.update(h)
        violations.extend(bad)
        filtered += f
        per_curve[job[0]] = len(bad)
    return CensusResult(m, len(jobs) * len(grid), hist, violations, filtered, per_curve=per_curve)
