"""FIML estimation of a recursive trivariate model with one continuous and two
ordinal outcomes, plus a latent-variable SEM first stage."""

__version__ = "0.1.0"

from .distributions import bvn_cdf, chisq_sf, std_normal_cdf, std_normal_pdf, std_normal_quantile
from .estimation import EstimationOptions, EstimationResult, estimate, estimate_restricted
from .inference import (
    FitStats,
    MarginalEffectsTable,
    fit_stats,
    lr_test,
    marginal_effect_continuous,
    marginal_effect_dummy,
    marginal_effects_table,
)
from .likelihood import cell_probability, loglik_gradient, total_loglik
from .model import Dataset, ModelSpec, ParameterSet
from .sem import SemResult, SemSpec, factor_scores, fit_sem, implied_covariance
from .simulation import SimConfig, mc_cell_probability, paper_like_recipes, sample_dataset

__all__ = [
    "Dataset", "EstimationOptions", "EstimationResult", "FitStats", "MarginalEffectsTable",
    "ModelSpec", "ParameterSet", "SemResult", "SemSpec", "SimConfig", "bvn_cdf",
    "cell_probability", "chisq_sf", "estimate", "estimate_restricted", "factor_scores",
    "fit_sem", "fit_stats", "implied_covariance", "loglik_gradient", "lr_test",
    "marginal_effect_continuous", "marginal_effect_dummy", "marginal_effects_table",
    "mc_cell_probability", "paper_like_recipes", "sample_dataset", "std_normal_cdf",
    "std_normal_pdf", "std_normal_quantile", "total_loglik",
]
