"""Covariate-adjusted ATE estimation for randomized trials: ANCOVA, prognostic scores and TMLE."""

from .data import (
    AugmentedTrialDataset,
    DataError,
    DesignSpec,
    HistoricalDataset,
    TrialDataset,
    build_design,
    counterfactual_designs,
    read_historical_csv,
    read_trial_csv,
    write_historical_csv,
    write_trial_csv,
)
from .estimators import (
    EstimateResult,
    EstimationError,
    ancova_estimate,
    if_variance,
    oracle_adjust_estimate,
    plugin_ate,
    prognostic_adjust_estimate,
    tmle_epsilon,
    tmle_estimate,
    unadjusted_estimate,
    within_trial_estimate,
)
from .learners import CrossFitPlan, LearnerSpec, cross_fit_predict, default_library, discrete_super_learner

__version__ = "0.1.0"

__all__ = [
    "AugmentedTrialDataset",
    "DataError",
    "DesignSpec",
    "HistoricalDataset",
    "TrialDataset",
    "build_design",
    "counterfactual_designs",
    "read_historical_csv",
    "read_trial_csv",
    "write_historical_csv",
    "write_trial_csv",
    "EstimateResult",
    "EstimationError",
    "ancova_estimate",
    "if_variance",
    "oracle_adjust_estimate",
    "plugin_ate",
    "prognostic_adjust_estimate",
    "tmle_epsilon",
    "tmle_estimate",
    "unadjusted_estimate",
    "within_trial_estimate",
    "CrossFitPlan",
    "LearnerSpec",
    "cross_fit_predict",
    "default_library",
    "discrete_super_learner",
]
