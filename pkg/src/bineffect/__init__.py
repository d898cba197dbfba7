"""Estimation of causal effects for binarized continuous treatments.

The package covers the binarized average treatment effect (BATE) and the
policy effect of binarization (PEB) with four estimators (regression with
M-estimation standard errors, IPW with bootstrap standard errors, AIPW and
TMLE with influence-curve standard errors), plus a simulation subsystem with
an exact quadrature truth oracle.
"""

from .core import (
    BinarizationRule,
    ConvergenceError,
    CsvSchema,
    DegenerateArmError,
    Direction,
    EstimandKind,
    EstimandSpec,
    EstimateReport,
    EstimationError,
    ObservationSet,
    QuadratureError,
    SeparationError,
    SingularDesignError,
    ValidationError,
    binarize,
    load_csv,
    positivity_diagnostic,
    save_csv,
    z_quantile,
)
from .estimators import (
    ESTIMATOR_NAMES,
    BootstrapConfig,
    InfluenceRecord,
    SandwichComponents,
    TmleFit,
    aipw_influence,
    bootstrap_se,
    delta_method_se,
    estimate,
    estimate_aipw,
    estimate_ipw,
    estimate_reg,
    estimate_tmle,
    sandwich_variance,
    tmle_update,
)
from .nuisance import (
    OutcomeModel,
    PropensityModel,
    RegressionFit,
    fit_logistic,
    fit_ols_interacted,
    predict_outcome,
)
from .simulation import (
    DgpSpec,
    McResult,
    McRow,
    TruthReport,
    cubic_sine_outcome,
    density_curve,
    mc_results_to_csv,
    run_monte_carlo,
    sample_dgp,
    truth_oracle,
)

__version__ = "0.1.0"

__all__ = [
    "BinarizationRule",
    "BootstrapConfig",
    "ConvergenceError",
    "CsvSchema",
    "DegenerateArmError",
    "DgpSpec",
    "Direction",
    "ESTIMATOR_NAMES",
    "EstimandKind",
    "EstimandSpec",
    "EstimateReport",
    "EstimationError",
    "InfluenceRecord",
    "McResult",
    "McRow",
    "ObservationSet",
    "OutcomeModel",
    "PropensityModel",
    "QuadratureError",
    "RegressionFit",
    "SandwichComponents",
    "SeparationError",
    "SingularDesignError",
    "TmleFit",
    "TruthReport",
    "ValidationError",
    "aipw_influence",
    "binarize",
    "bootstrap_se",
    "cubic_sine_outcome",
    "delta_method_se",
    "density_curve",
    "estimate",
    "estimate_aipw",
    "estimate_ipw",
    "estimate_reg",
    "estimate_tmle",
    "fit_logistic",
    "fit_ols_interacted",
    "load_csv",
    "mc_results_to_csv",
    "positivity_diagnostic",
    "predict_outcome",
    "run_monte_carlo",
    "sample_dgp",
    "sandwich_variance",
    "save_csv",
    "tmle_update",
    "truth_oracle",
    "z_quantile",
]
