"""Active clinical trials for learning individualized treatment rules."""
from __future__ import annotations

__version__ = "0.1.0"

from ._accel import USE_NUMBA
from .baselines import LinearItr, aipwe_contrast, aipwe_targets, aipwe_value, fit_ols_itr, passive_ols
from .evaluation import (
    RateFit,
    aev,
    cross_validate,
    ipw_value,
    margin_exponent,
    mc_value,
    rate_fit,
    weighted_mean_outcome,
)
from .gp import GpConfig, GpContrastModel, GpHyperparams, fit_hyperparameters, log_marginal_likelihood
from .kernel import KernelConfig, KernelContrastModel, contrast_ci, local_bandwidth, nw_estimate
from .sample_size import SampleSizeInputs, bootstrap_ctilde, bound_value, invert_bound, theta_exponent
from .scenarios import Dataset, ScenarioSpec, get_scenario, load_pool, write_pool
from .trial import AL_BV, AL_GP, TrialConfig, TrialResult, replay_pool, run_active_trial

__all__ = [
    "__version__", "USE_NUMBA",
    "Dataset", "ScenarioSpec", "get_scenario", "load_pool", "write_pool",
    "KernelConfig", "KernelContrastModel", "local_bandwidth", "nw_estimate", "contrast_ci",
    "GpConfig", "GpHyperparams", "GpContrastModel", "fit_hyperparameters", "log_marginal_likelihood",
    "AL_BV", "AL_GP", "TrialConfig", "TrialResult", "run_active_trial", "replay_pool",
    "LinearItr", "fit_ols_itr", "passive_ols", "aipwe_targets", "aipwe_contrast", "aipwe_value",
    "RateFit", "mc_value", "aev", "ipw_value", "weighted_mean_outcome", "margin_exponent", "rate_fit",
    "cross_validate",
    "SampleSizeInputs", "theta_exponent", "bound_value", "invert_bound", "bootstrap_ctilde",
]
