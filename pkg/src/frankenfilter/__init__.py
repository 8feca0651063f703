"""Adaptive particle filtering toolkit: an adaptively-sized unbiased filter
for models with vanishing conditional likelihoods, baselines, tuning rules,
pseudo-marginal inference, and exact verification oracles."""

from .core import (
    Dataset,
    FilterConfig,
    FilterConfigError,
    IntervalRecord,
    LikelihoodEstimate,
    RngStream,
    derive_substream,
)
from .filters import (
    alive_filter,
    alive_hard_threshold,
    bootstrap_pf,
    frankenfilter_basic,
    frankenfilter_general,
    frankenfilter_one_step,
    make_alive_estimator,
    make_alive_hard_estimator,
    make_bootstrap_estimator,
    make_frankenfilter_estimator,
)
from .models import build_model, load_dataset, save_dataset, synthesize_dataset
from .pmmh import Chain, ProposalConfig, ess_multivariate, ess_univariate, pmmh_run

__all__ = [
    "Dataset",
    "FilterConfig",
    "FilterConfigError",
    "IntervalRecord",
    "LikelihoodEstimate",
    "RngStream",
    "derive_substream",
    "alive_filter",
    "alive_hard_threshold",
    "bootstrap_pf",
    "frankenfilter_basic",
    "frankenfilter_general",
    "frankenfilter_one_step",
    "make_alive_estimator",
    "make_alive_hard_estimator",
    "make_bootstrap_estimator",
    "make_frankenfilter_estimator",
    "build_model",
    "load_dataset",
    "save_dataset",
    "synthesize_dataset",
    "Chain",
    "ProposalConfig",
    "ess_multivariate",
    "ess_univariate",
    "pmmh_run",
]

__version__ = "0.1.0"
