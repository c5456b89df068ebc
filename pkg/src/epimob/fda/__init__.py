from .basis import (
    BSplineBasis,
    SmoothedCurve,
    build_basis,
    common_domain,
    inner_product,
    l2_distance_sq,
    quadrature_nodes,
)
from .fcc import FccResult, first_fcc, project_fcc
from .registration import (
    RegistrationResult,
    estimate_shift,
    register_pair,
    register_set,
    register_to_fcc,
    shift_cost,
)
from .smoothing import (
    DEFAULT_LAMBDA_GRID,
    gcv_scores,
    gcv_select,
    normalize_curve,
    penalized_smooth,
    smooth_all,
)

__all__ = [
    "BSplineBasis",
    "SmoothedCurve",
    "build_basis",
    "common_domain",
    "inner_product",
    "l2_distance_sq",
    "quadrature_nodes",
    "FccResult",
    "first_fcc",
    "project_fcc",
    "RegistrationResult",
    "estimate_shift",
    "register_pair",
    "register_set",
    "register_to_fcc",
    "shift_cost",
    "DEFAULT_LAMBDA_GRID",
    "gcv_scores",
    "gcv_select",
    "normalize_curve",
    "penalized_smooth",
    "smooth_all",
]
