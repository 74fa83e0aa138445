"""Numerical toolkit for one-dimensional curvature-dimension calculus,
model isoperimetric profiles, needle decompositions of metric measure
spaces, and quantitative stability experiments built on them."""

__version__ = "0.1.0"

from .densities import (
    CurvatureParams,
    Density1D,
    INFINITE_COEFF,
    cd_density_from_latents,
    density_from_samples,
    density_from_text,
    density_ratio_bounds,
    density_sandwich,
    density_to_text,
    grid_density,
    is_cd_density,
    log_derivative_bounds,
    ModelDensity,
    model_density,
    random_cd_density,
    sigma_coeff,
    sine_power_density,
    tau_coeff,
    unique_max,
)
from .errors import (
    BudgetExceededError,
    ConfigError,
    DegenerateBallError,
    DegenerateDomainError,
    DegenerateRayError,
    InvalidParameterError,
    NeedlekitError,
    NoTriplesError,
    NonConvergenceError,
    OutOfDomainError,
    OverlapError,
    VolumeMismatchError,
)
from .localize import (
    AntipodalResult,
    BallLocalization,
    DeficitReport,
    MainTheoremReport,
    NeedleDecomposition,
    Potential,
    Ray,
    RayClassification,
    antipodal_check,
    ball_localization,
    classify_rays,
    cyclical_monotonicity_check,
    deficit_report,
    dense_primal_value,
    extract_rays,
    fit_ray_density,
    kantorovich_potential,
    localization_function,
    markov_bound,
    quantify,
    transport_relation,
)
from .mmspace import (
    DiscreteSpace,
    check_triangle,
    cut_perimeter,
    space_from_text,
    space_to_text,
    sym_diff_mass,
)
from .intervals import (
    BruteForceResult,
    IntervalSet,
    QuantitativeRatio,
    RATIO_SENTINEL,
    SweepResult,
    boundary_points,
    brute_force_min,
    intervals_from_text,
    intervals_to_text,
    perimeter_1d,
    quantitative_ratio,
    quantitative_sweep,
    sweep_csv,
    sym_diff_volume,
    volume,
)
from .profiles import (
    ConcavityGapResult,
    ConstantBundle,
    IdentityCheckResult,
    ModelProfile,
    ProfileMinimum,
    QuantileRadii,
    concavity_gap,
    deficit_1d,
    diameter_gap_slope,
    lambda_of,
    minimize_profile,
    model_mass_ratio_inf,
    model_profile,
    one_sided_profile,
    profile_concavity_constant,
    profile_derivative,
    profile_identity_check,
    profile_table,
    quantile_radii,
    small_volume_limit_extrapolated,
    solve_eta_N,
    window_density,
    window_profile,
)
from .spaces import (
    CapSet,
    SpaceSpec,
    make_cap_set,
    make_perturbed_cap,
    make_segment,
    make_sphere2,
    make_suspension,
)
from .sinepower import (
    isoperimetric_value,
    model_cdf,
    model_quantile,
    model_value,
    omega_n,
    sin_power_integral,
    sin_power_mass,
    sin_power_quantile,
    small_volume_profile_limit,
)
