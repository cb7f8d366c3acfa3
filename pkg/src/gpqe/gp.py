"""Exact GP regression in latent space.

A model is a zero-mean GP over the warped responses z = f(y) with a Gaussian
observation noise sigma_n^2.  Fitting caches the Cholesky factor L of
K + sigma_n^2 I and the weight vector alpha = (K + sigma_n^2 I)^{-1} z, from
which the negative log marginal likelihood,

    nll = 1/2 z^T alpha + sum_i log L_ii + n/2 log 2 pi - sum_i log f'(y_i),

its analytic gradients, and latent predictive posteriors all follow.  The
Jacobian sum vanishes for the identity warp, recovering a standard GP.

Cholesky failures are retried with jitter 1e-10 * mean(diag) escalating by
factors of ten up to 1e-4 * mean(diag) before giving up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from .exceptions import IllConditionedError
from .kernels import KernelParams, KernelSpec, cross_gram, gram_gradients, gram_matrix
from .warping import (
    WarpFamily,
    WarpParams,
    WarpSpec,
    warp,
    warp_deriv,
    warp_param_gradients,
)

_JITTER_START = 1e-10
_JITTER_STOP = 1e-4
_VARIANCE_FLOOR = 1e-12

IDENTITY_WARP = WarpSpec(WarpFamily.IDENTITY)


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with an aligned response vector."""

    features: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        y = np.asarray(self.responses, dtype=float)
        if x.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {x.shape}")
        if y.ndim != 1:
            raise ValueError(f"responses must be 1-d, got shape {y.shape}")
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"{x.shape[0]} feature rows vs {y.shape[0]} responses")
        if x.shape[0] < 1:
            raise ValueError("dataset must contain at least one instance")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain non-finite values")
        if not np.all(np.isfinite(y)):
            raise ValueError("responses contain non-finite values")
        object.__setattr__(self, "features", x.copy())
        object.__setattr__(self, "responses", y.copy())

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class ModelSpec:
    """Kernel and warp choice, fixed before any parameters are learned."""

    kernel: KernelSpec
    warp: WarpSpec = IDENTITY_WARP


@dataclass(frozen=True)
class Hyperparams:
    """Kernel, noise, and (optionally) warp hyperparameters.

    The constructor accepts noise_variance == 0 so that noise-free synthetic
    draws can be described; fitting and likelihood evaluation require > 0.
    """

    kernel: KernelParams
    noise_variance: float
    warp: WarpParams | None = None

    def __post_init__(self):
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        if not self.noise_variance >= 0 or not math.isfinite(self.noise_variance):
            raise ValueError(f"noise variance must be nonnegative, got {self.noise_variance}")


@dataclass(frozen=True)
class LatentPredictive:
    """Mean and variance of the latent (warped) response at a test input."""

    mean: float | np.ndarray
    variance: float | np.ndarray


@dataclass(frozen=True)
class TrainedModel:
    """Cached factorization realizing the closed-form GP posterior.

    cholesky_factor is lower-triangular with
    cholesky_factor @ cholesky_factor.T == K + (noise + jitter) I, and
    weight_vector solves that system against the warped responses.
    """

    dataset: Dataset
    spec: ModelSpec
    hyperparams: Hyperparams
    cholesky_factor: np.ndarray
    weight_vector: np.ndarray
    warped_responses: np.ndarray
    jitter: float


@dataclass(frozen=True)
class NllGradient:
    """Gradient of the NLL over all hyperparameters, in natural (not log) space."""

    variance: float
    lengthscales: np.ndarray
    noise_variance: float
    warp_a: np.ndarray
    warp_b: np.ndarray
    warp_c: np.ndarray


def _warp_params(hp: Hyperparams) -> WarpParams:
    return hp.warp if hp.warp is not None else WarpParams.empty()


def stabilized_cholesky(matrix: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor and the jitter needed to obtain it.

    Jitter starts at 1e-10 * mean(diag) and escalates tenfold per failure up
    to 1e-4 * mean(diag), past which IllConditionedError is raised.
    """
    scale = float(np.mean(np.diag(matrix)))
    jitter = 0.0
    n = matrix.shape[0]
    while True:
        try:
            shifted = matrix if jitter == 0.0 else matrix + jitter * np.eye(n)
            return cholesky(shifted, lower=True), jitter
        except LinAlgError:
            jitter = _JITTER_START * scale if jitter == 0.0 else jitter * 10.0
            if jitter > _JITTER_STOP * scale:
                raise IllConditionedError(
                    f"covariance matrix is not positive definite even with jitter "
                    f"{_JITTER_STOP * scale:.3e}"
                ) from None


def fit_cache(dataset: Dataset, spec: ModelSpec, hyperparams: Hyperparams) -> TrainedModel:
    """Factorize the noisy Gram matrix and cache the prediction weights."""
    if hyperparams.noise_variance <= 0:
        raise ValueError("fitting requires a strictly positive noise variance")
    z = warp(spec.warp, _warp_params(hyperparams), dataset.responses)
    gram = gram_matrix(spec.kernel, hyperparams.kernel, dataset.features)
    noisy = gram + hyperparams.noise_variance * np.eye(dataset.n)
    factor, jitter = stabilized_cholesky(noisy)
    alpha = cho_solve((factor, True), z)
    return TrainedModel(
        dataset=dataset,
        spec=spec,
        hyperparams=hyperparams,
        cholesky_factor=factor,
        weight_vector=alpha,
        warped_responses=z,
        jitter=jitter,
    )


def _log_jacobian(dataset: Dataset, spec: ModelSpec, hyperparams: Hyperparams) -> float:
    if spec.warp.family is WarpFamily.IDENTITY:
        return 0.0
    deriv = warp_deriv(spec.warp, _warp_params(hyperparams), dataset.responses)
    return float(np.sum(np.log(deriv)))


def nll(dataset: Dataset, spec: ModelSpec, hyperparams: Hyperparams) -> float:
    """Negative log marginal likelihood of the (warped) responses."""
    model = fit_cache(dataset, spec, hyperparams)
    return nll_from_model(model)


def nll_from_model(model: TrainedModel) -> float:
    quad = 0.5 * float(model.warped_responses @ model.weight_vector)
    half_logdet = float(np.sum(np.log(np.diag(model.cholesky_factor))))
    const = 0.5 * model.dataset.n * math.log(2.0 * math.pi)
    return quad + half_logdet + const - _log_jacobian(model.dataset, model.spec, model.hyperparams)


def nll_gradients(dataset: Dataset, spec: ModelSpec, hyperparams: Hyperparams) -> NllGradient:
    """Analytic NLL gradient over kernel, noise, and warp hyperparameters."""
    return nll_value_and_gradients(dataset, spec, hyperparams)[1]


def nll_value_and_gradients(
    dataset: Dataset, spec: ModelSpec, hyperparams: Hyperparams
) -> tuple[float, NllGradient]:
    """NLL and its gradient from a single factorization (the training workhorse).

    Kernel and noise parts use the trace identity
    d nll / d theta = 1/2 tr((Ky^{-1} - alpha alpha^T) dKy/dtheta); warp parts
    combine alpha^T dz/dtheta with the Jacobian correction.
    """
    model = fit_cache(dataset, spec, hyperparams)
    value = nll_from_model(model)

    factor = model.cholesky_factor
    alpha = model.weight_vector
    inv = cho_solve((factor, True), np.eye(dataset.n))
    q = inv - np.outer(alpha, alpha)

    kernel_grads = gram_gradients(spec.kernel, hyperparams.kernel, dataset.features)
    d_variance = 0.5 * float(np.sum(q * kernel_grads.variance))
    d_lengthscales = np.array([0.5 * np.sum(q * g) for g in kernel_grads.lengthscales])
    d_noise = 0.5 * float(np.trace(q))

    if spec.warp.family is WarpFamily.TANH_SUM:
        wg = warp_param_gradients(spec.warp, _warp_params(hyperparams), dataset.responses)
        d_a = wg.f_a @ alpha - wg.log_deriv_a.sum(axis=1)
        d_b = wg.f_b @ alpha - wg.log_deriv_b.sum(axis=1)
        d_c = wg.f_c @ alpha - wg.log_deriv_c.sum(axis=1)
    else:
        d_a = d_b = d_c = np.empty(0)

    grad = NllGradient(
        variance=d_variance,
        lengthscales=d_lengthscales,
        noise_variance=d_noise,
        warp_a=d_a,
        warp_b=d_b,
        warp_c=d_c,
    )
    return value, grad


def predict_latent(model: TrainedModel, x: np.ndarray) -> LatentPredictive:
    """Latent predictive posterior at one test input (1-d) or a batch (2-d).

    The returned variance includes the observation noise, so it describes a
    new observation rather than the noise-free latent function.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = x[None, :] if single else x
    ks = cross_gram(model.spec.kernel, model.hyperparams.kernel, model.dataset.features, xs)
    mean = ks.T @ model.weight_vector
    v = solve_triangular(model.cholesky_factor, ks, lower=True)
    latent_var = model.hyperparams.kernel.variance - np.sum(v * v, axis=0)
    variance = np.maximum(latent_var, 0.0) + model.hyperparams.noise_variance
    variance = np.maximum(variance, _VARIANCE_FLOOR)
    if single:
        return LatentPredictive(mean=float(mean[0]), variance=float(variance[0]))
    return LatentPredictive(mean=mean, variance=variance)
