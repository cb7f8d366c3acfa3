"""Gaussian process regression with warped likelihoods for quality estimation.

Standard and Warped GPs with EQ / Matern kernels, full predictive
distributions evaluated by NLPD, and minimum-Bayes-risk point predictions
under asymmetric losses, plus a cross-validation experiment harness.
"""

from .exceptions import (
    ConvergenceError,
    DataError,
    DomainError,
    ExperimentError,
    GpqeError,
    IllConditionedError,
    LossOverflowError,
    OptimizationError,
    SupportViolationError,
    UndefinedCorrelationError,
)
from .gp import (
    Dataset,
    Hyperparams,
    LatentPredictive,
    ModelSpec,
    NllGradient,
    TrainedModel,
    fit_cache,
    nll,
    nll_gradients,
    nll_value_and_gradients,
    predict_latent,
)
from .kernels import (
    GramGradients,
    KernelFamily,
    KernelParams,
    KernelSpec,
    LengthscaleMode,
    cross_gram,
    gram_gradients,
    gram_matrix,
    kernel_eval,
    scaled_sq_distance,
)
from .metrics import EvalRecord, al_loss, linex_loss, mae, nlpd, pearson_pvalue, pearson_r
from .optimize import (
    OptimizeConfig,
    OptimizeReport,
    TwoPassResult,
    minimize_nll,
    two_pass_fit,
)
from .predictive import (
    PredictiveDistribution,
    QuadratureRule,
    bayes_estimate_al,
    bayes_estimate_linex,
    from_model,
    log_density,
    mean_and_variance,
    median,
    quantile,
)
from .warping import (
    WarpFamily,
    WarpGradients,
    WarpParams,
    WarpSpec,
    warp,
    warp_deriv,
    warp_inverse,
    warp_param_gradients,
)
from .dataio import load_dataset
from .experiment import (
    ExperimentConfig,
    ExperimentReport,
    FoldResult,
    ModelResult,
    generate_synthetic,
    kfold_split,
    run_experiment,
    write_reports,
)

__version__ = "0.1.0"
