"""Scaling-law fitting, collinearity diagnostics, and design planning.

The package answers three questions about (model size, token count,
loss) experiment sets: what does a parametric scaling law say the loss
is, how identifiable are that law's coefficients under the design that
produced the data, and what design would make them identifiable.
"""

from .dataset import (
    ExperimentDataset,
    NoiseModel,
    Observation,
    Split,
    generate_collinear,
    generate_grid,
    mark_holdout,
    merge,
)
from .conditioning import (
    CIReport,
    GramDiagnostics,
    PowerSumProfile,
    ci_half_widths,
    ci_report,
    cs_gap_determinant,
    diagnose,
    eigendecompose_small,
    gram_matrix,
    kappa_scale_pair,
    power_sum_profile,
    sloppy_leverage,
    weighted_variance,
)
from .evaluation import (
    ComparisonRecord,
    HoldoutMetrics,
    IsoFlopCurve,
    MseDecomposition,
    SweepRecord,
    WinRate,
    analytic_mse_prediction,
    curve_anchored_rmse,
    holdout_metrics,
    isoflop_curves,
    misspecification_ratio,
    regime_a_sweep,
    regime_a_win_rate,
    wilson_interval,
    win_rate,
)
from .fitter import (
    FitConfig,
    FitResult,
    Huber,
    SeedProtocol,
    SquaredError,
    fit,
    gauss_newton_step,
    profile_reduced_fit,
    restart_seed,
)
from .laws import (
    EffectiveSizes,
    ExponentGap,
    LawKind,
    LawParams,
    PARAM_NAMES,
    SCALE_BLOCK,
    default_bounds,
    effective_sizes,
    evaluate,
    exponent_gap,
    jacobian,
    jacobian_row,
    kaplan_compositional,
    reduce_on_ray,
    sensitivities,
)
from .planner import (
    DesignPlan,
    DiversityReport,
    Priors,
    Regime,
    RMinResult,
    bounding_box_nc,
    classify_regime,
    diversity_check,
    plan_design,
    r_min,
)

__version__ = "0.1.0"
