"""Elastic-net multiple kernel learning with rate and support diagnostics."""

from .errors import (
    ConfigError,
    IllPosedError,
    InconsistentModelError,
    InsufficientSpectrumError,
    InvalidInputError,
    MklError,
    NumericalError,
)
from .kernels import BlockFunction, GramBlock, KernelSpec, block_from_matrix, block_norms, gram, grams, spectral_decay
from .operators import cov_apply, incoherence, irrepresentable_score, kappa_min, resolvent_solve, rho
from .solver import (
    MklModel,
    MklProblem,
    RegPenalty,
    closed_form_l2,
    fit,
    kkt_residual,
    objective,
    predict,
    prox_group_elastic,
    zero_threshold,
)
from .theory import TheoryParams, lambda_schedule, rate_exponents, regime, sparse_rate_bound, thresholds

__version__ = "0.1.0"
