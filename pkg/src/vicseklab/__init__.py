"""Numerical laboratory for diffusion and singular-integral experiments
on self-similar diagonal cable systems."""

__version__ = "0.1.0"

from .geometry import (  # noqa: F401
    CablePoint,
    CableSystem,
    Skeleton,
    Soul,
    Subset,
    ball,
    build_vicsek,
    ball_in_skeleton,
    central_copies,
    geodesic,
    project_onto,
    skeleton_in_ball,
    soul_adapted,
    tree_distance,
    volume,
    volume_growth,
)
from .czdecomp import (  # noqa: F401
    Covering,
    CZDecomposition,
    MarginError,
    PartitionOfUnity,
    build_partition,
    bump_profile,
    cz_decompose,
    maximal_function,
    poincare_on_covering_ball,
    suggest_lambdas,
    whitney_cover,
)
from .experiments import (  # noqa: F401
    Lab,
    annulus_decay,
    build_tent,
    cz_fixture,
    cz_sweep,
    failure_mechanism,
    fit_loglog,
    gradient_isometry,
    harnack_gradient,
    heat_decay,
    heat_retention,
    interpolation_check,
    nash_point,
    nash_scan,
    phase_point,
    phase_scan,
    poincare_constants,
    poincare_empirical,
    poincare_report,
    rr_ratio,
    small_time_bound,
    tent_gradient_power,
    tent_report,
    truncation_sensitivity,
    volume_scaling,
)
