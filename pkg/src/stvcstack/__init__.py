"""Exact-sampling Bayesian inference for spatially-temporally varying
coefficient count models, combined across a grid of candidate models by
predictive stacking."""

from .errors import (
    ConfigError,
    DomainError,
    FactorizationError,
    NumericalError,
    ParameterError,
    StvcError,
)
from .expfam import DyParams, Family, FamilySpec, Psi, dy_sample, ef_log_density
from .kernel import MaternKernel, SpaceTimeKernel, corr_matrix, decay_for_effective_range
from .chol import BlockedFactor, chol_delete_block, cholesky, tri_solve
from .model import CandidateModel, Dataset, Hyperparams, PosteriorSample, posterior_sample, project
from .predict import pointwise_pred_density, predict_latent, predict_response
from .stack import (
    StackingResult,
    build_grid,
    compute_loo_matrix,
    fit_stacking,
    make_folds,
    mlpd,
    solve_weights,
    stacked_sample,
)
from .simulate import SimConfig, simulate_dataset

__version__ = "0.1.0"
