"""Network response regression: low-rank intercept plus sparse covariate effects.

Fits a generalized linear model to a population of adjacency matrices over a
shared node set, with subject covariates acting on individual edges. The
intercept matrix is estimated in factored low-rank form and the covariate
slope tensor under a hard sparsity budget, by alternating gradient descent
with truncation.
"""

from netreg.analysis import (
    CommunityAssignment,
    detect_communities,
    error_report,
    estimation_errors,
    f1_support,
    nmi,
    select_edges,
)
from netreg.glm import (
    DivergenceError,
    EdgeFamily,
    NetworkDataset,
    aug_loss,
    grad_b,
    grad_theta,
    grad_u,
    grad_u_sym,
    grad_v,
    neg_loglik,
)
from netreg.optim import (
    FactorModel,
    FitResult,
    Hyperparams,
    distance_d,
    ebic,
    fit_asym,
    fit_sym,
    init_asym,
    init_sym,
    sparsity_from_fraction,
    tune,
)
from netreg.simulate import SimConfig, SimTruth, generate, run_replications
from netreg.tensor import (
    SvdResult,
    frobenius,
    mode3_product,
    svd_r,
    tensor_matrix_inner,
    truncate,
    truncate_symmetric,
)

__all__ = [
    "CommunityAssignment",
    "DivergenceError",
    "EdgeFamily",
    "FactorModel",
    "FitResult",
    "Hyperparams",
    "NetworkDataset",
    "SimConfig",
    "SimTruth",
    "SvdResult",
    "aug_loss",
    "detect_communities",
    "distance_d",
    "ebic",
    "error_report",
    "estimation_errors",
    "f1_support",
    "fit_asym",
    "fit_sym",
    "frobenius",
    "generate",
    "grad_b",
    "grad_theta",
    "grad_u",
    "grad_u_sym",
    "grad_v",
    "init_asym",
    "init_sym",
    "mode3_product",
    "neg_loglik",
    "nmi",
    "run_replications",
    "select_edges",
    "sparsity_from_fraction",
    "svd_r",
    "tensor_matrix_inner",
    "truncate",
    "truncate_symmetric",
    "tune",
]

__version__ = "0.1.0"
