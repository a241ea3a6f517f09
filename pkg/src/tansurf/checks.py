"""Self-consistency checks on a scene: remainder terms, sigma identity, characteristic-vector modes."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geodesic import taylor_residuals
from .scene import Scene
from .surface import _raw, characteristic_vector, s_function

__all__ = ["CheckReport", "run_checks", "TAYLOR_LIMIT", "SIGMA_LIMIT", "MODE_LIMIT"]

TAYLOR_LIMIT = 1e-4
SIGMA_LIMIT = 1e-6
MODE_LIMIT = 1e-9


@dataclass
class CheckReport:
    taylor: list = field(default_factory=list)  # one dict of four residuals per (x, v)
    taylor_max: float = 0.0
    sigma_max: float = 0.0
    mode_max: float = 0.0

    @property
    def passed(self) -> bool:
        return (self.taylor_max <= TAYLOR_LIMIT and self.sigma_max <= SIGMA_LIMIT
                and self.mode_max <= MODE_LIMIT)

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "taylor_max": self.taylor_max, "taylor_limit": TAYLOR_LIMIT,
            "sigma_max": self.sigma_max, "sigma_limit": SIGMA_LIMIT,
            "mode_max": self.mode_max, "mode_limit": MODE_LIMIT,
            "taylor": self.taylor,
        }


def run_checks(scene: Scene, n_taylor: int = 10, n_sigma: int = 50, n_modes: int = 11,
               seed: int = 0) -> CheckReport:
    """Run the three checks at seeded sample points.

    Half of the remainder-term points sit on the curve with ``v = gamma'``;
    the rest are perturbed off it. ``sigma + s`` is tested at random
    ``(t, s)`` with ``|s|`` in ``[0.05, 0.5]``. The general characteristic
    vector of the connection is compared with ``nabla^3 gamma`` of its
    symmetrization (relative to ``max(1, |value|)``).
    """
    conn, curve = scene.connection, scene.curve
    rng = np.random.default_rng(seed)
    a, b = curve.domain
    rep = CheckReport()
    m = curve.dim
    for k in range(n_taylor):
        t = a + (b - a) * (k + 0.5) / n_taylor
        x, v = _raw(curve, t, 1)
        if k % 2:
            x = x + 0.05 * rng.standard_normal(m)
            v = v + 0.3 * rng.standard_normal(m)
        res = taylor_residuals(conn, x, v)
        rep.taylor.append({"x": x.tolist(), "v": v.tolist(), **res.as_dict()})
        rep.taylor_max = max(rep.taylor_max, res.worst)
    for _ in range(n_sigma):
        t = rng.uniform(a, b)
        s = rng.uniform(0.05, 0.5) * rng.choice([-1.0, 1.0])
        rep.sigma_max = max(rep.sigma_max, abs(s_function(conn, curve, t, s) + s))
    sym = conn.symmetric
    for t in np.linspace(a, b, n_modes):
        g = characteristic_vector(conn, curve, t, "general")
        tf = characteristic_vector(sym, curve, t, "torsion_free")
        err = float(np.max(np.abs(g - tf))) / max(1.0, float(np.max(np.abs(tf))))
        rep.mode_max = max(rep.mode_max, err)
    return rep
