"""Tangent surfaces of curves in manifolds with an affine connection.

The main entry points are re-exported here; see the submodules for the
full API.
"""
from .curves import (
    CovariantJet, CurveSpec, NablaType, compose_curve, covariant_jet, is_torsionless,
    nabla_type, numerical_rank, reparametrize,
)
from .expr import diff_expr, eval_expr, parse_expr, simplify, to_str
from .geodesic import (
    GeodesicState, geodesic_h, integrate_geodesic, solve_geodesic, taylor_residuals,
)
from .geometry import (
    ChartMap, ConnectionField, MetricField, christoffel_at, christoffel_partials,
    flat_connection, levi_civita, symmetrize, transform_connection,
)
from .genericity import CurveSampler, sample_random_curve, type_census
from .scene import Scene, bundled_scene, load_scene
from .surface import (
    SingularityReport, Status, SurfacePatch, characteristic_psi, characteristic_vector,
    classify_point, frontal_frame, s_function, scan_interval, tan_surface_point,
    tangent_surface,
)

__version__ = "0.1.0"
