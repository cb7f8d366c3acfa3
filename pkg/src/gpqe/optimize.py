"""Hyperparameter training: log-space L-BFGS with restarts and two-pass ARD.

All positivity-constrained parameters (kernel variance, lengthscales, noise
variance, tanh-warp a and b) are optimized as logarithms, so they stay
positive by construction; the tanh offsets c are optimized raw.  The packed
parameter vector is laid out as

    [log variance | log lengthscales | log noise | log a | log b | c].

Training minimizes the NLL with L-BFGS (a quasi-Newton method with Wolfe
line search) from several random initializations, keeping the best run.
The two-pass procedure first fits an isotropic kernel with restarts, then
expands the single lengthscale to one per feature and fine-tunes from that
point.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from .exceptions import IllConditionedError, OptimizationError
from .gp import (
    Dataset,
    Hyperparams,
    ModelSpec,
    NllGradient,
    TrainedModel,
    fit_cache,
    nll_value_and_gradients,
)
from .kernels import KernelFamily, KernelParams, KernelSpec, LengthscaleMode
from .warping import WarpFamily, WarpParams, WarpSpec

_PENALTY = 1e25


@dataclass(frozen=True)
class OptimizeConfig:
    """Settings for one training run.

    grad_tol is on the infinity norm of the packed (log-space) gradient;
    nll_tol is on the relative NLL decrease between accepted steps.
    """

    restarts: int = 10
    max_iters: int = 1000
    grad_tol: float = 1e-5
    nll_tol: float = 1e-9
    seed: int = 0
    pass2_lengthscales_only: bool = False
    record_trace: bool = False

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (self.grad_tol > 0 and self.nll_tol > 0):
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class RestartResult:
    """Outcome of a single optimization run."""

    nll: float
    iterations: int
    converged: bool
    grad_inf_norm: float
    message: str


@dataclass(frozen=True)
class OptimizeReport:
    """Best hyperparameters plus per-restart bookkeeping."""

    best_hyperparams: Hyperparams
    best_nll: float
    best_index: int
    restarts: tuple[RestartResult, ...]
    nll_traces: tuple[tuple[float, ...], ...] | None = None

    @property
    def restart_nlls(self) -> tuple[float, ...]:
        return tuple(r.nll for r in self.restarts)

    @property
    def iteration_counts(self) -> tuple[int, ...]:
        return tuple(r.iterations for r in self.restarts)

    @property
    def converged_flags(self) -> tuple[bool, ...]:
        return tuple(r.converged for r in self.restarts)


@dataclass(frozen=True)
class TwoPassResult:
    """Fitted model from the ARD pass, with both optimization reports."""

    model: TrainedModel
    pass1: OptimizeReport
    pass2: OptimizeReport

    @property
    def final_nll(self) -> float:
        return self.pass2.best_nll


def _n_lengthscales(spec: ModelSpec, dim: int) -> int:
    return 1 if spec.kernel.lengthscale_mode is LengthscaleMode.ISOTROPIC else dim


def _n_warp_terms(spec: ModelSpec) -> int:
    return spec.warp.terms if spec.warp.family is WarpFamily.TANH_SUM else 0


def pack_hyperparams(hp: Hyperparams, spec: ModelSpec) -> np.ndarray:
    """Map hyperparameters to the unconstrained optimization vector."""
    parts = [
        [np.log(hp.kernel.variance)],
        np.log(hp.kernel.lengthscales),
        [np.log(hp.noise_variance)],
    ]
    if _n_warp_terms(spec):
        wp = hp.warp
        parts += [np.log(wp.a), np.log(wp.b), wp.c]
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def unpack_hyperparams(theta: np.ndarray, spec: ModelSpec, dim: int) -> Hyperparams:
    """Inverse of pack_hyperparams for a given model spec and input dim."""
    n_ls = _n_lengthscales(spec, dim)
    terms = _n_warp_terms(spec)
    expected = 2 + n_ls + 3 * terms
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (expected,):
        raise ValueError(f"expected packed vector of length {expected}, got {theta.shape}")
    variance = float(np.exp(theta[0]))
    lengthscales = np.exp(theta[1 : 1 + n_ls])
    noise = float(np.exp(theta[1 + n_ls]))
    warp_params = None
    if terms:
        rest = theta[2 + n_ls :]
        warp_params = WarpParams(
            a=np.exp(rest[:terms]),
            b=np.exp(rest[terms : 2 * terms]),
            c=rest[2 * terms :],
        )
    return Hyperparams(
        kernel=KernelParams(variance=variance, lengthscales=lengthscales),
        noise_variance=noise,
        warp=warp_params,
    )


def gradient_to_packed(grad: NllGradient, hp: Hyperparams) -> np.ndarray:
    """Chain rule from natural-space gradients to the packed log-space vector."""
    parts = [
        [grad.variance * hp.kernel.variance],
        grad.lengthscales * hp.kernel.lengthscales,
        [grad.noise_variance * hp.noise_variance],
    ]
    if grad.warp_a.size:
        parts += [grad.warp_a * hp.warp.a, grad.warp_b * hp.warp.b, grad.warp_c]
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def _random_init(rng: np.random.Generator, spec: ModelSpec, dim: int, responses: np.ndarray) -> np.ndarray:
    """Draw one packed starting point.

    log variance, log noise ~ U[-2, 1]; log lengthscales ~ U[-1, 2] (sane for
    standardized features); tanh a, b log-uniform on [e^-2, 1] so the initial
    warp stays near the identity; tanh offsets c follow the response moments.
    """
    n_ls = _n_lengthscales(spec, dim)
    parts = [
        rng.uniform(-2.0, 1.0, size=1),
        rng.uniform(-1.0, 2.0, size=n_ls),
        rng.uniform(-2.0, 1.0, size=1),
    ]
    terms = _n_warp_terms(spec)
    if terms:
        parts.append(rng.uniform(-2.0, 0.0, size=terms))
        parts.append(rng.uniform(-2.0, 0.0, size=terms))
        parts.append(rng.normal(float(np.mean(responses)), float(np.std(responses)), size=terms))
    return np.concatenate(parts)


def _make_objective(dataset: Dataset, spec: ModelSpec):
    # line searches may probe wild parameter values; those evaluations are
    # penalized rather than allowed to raise or warn
    def objective(theta: np.ndarray) -> tuple[float, np.ndarray]:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
            try:
                hp = unpack_hyperparams(theta, spec, dataset.dim)
                value, grad = nll_value_and_gradients(dataset, spec, hp)
                packed = gradient_to_packed(grad, hp)
            except (IllConditionedError, ValueError, FloatingPointError, OverflowError):
                return _PENALTY, np.zeros_like(theta)
        if not np.isfinite(value) or not np.all(np.isfinite(packed)):
            return _PENALTY, np.zeros_like(theta)
        return value, packed

    return objective


def _run_single(
    dataset: Dataset,
    spec: ModelSpec,
    theta0: np.ndarray,
    config: OptimizeConfig,
    fixed_mask: np.ndarray | None = None,
) -> tuple[RestartResult, np.ndarray, list[float]]:
    """One L-BFGS run; entries of fixed_mask that are True are held frozen."""
    objective = _make_objective(dataset, spec)
    if fixed_mask is None:
        fixed_mask = np.zeros(theta0.shape, dtype=bool)
    free = ~fixed_mask
    base = theta0.copy()

    def reduced(theta_free: np.ndarray) -> tuple[float, np.ndarray]:
        theta = base.copy()
        theta[free] = theta_free
        value, grad = objective(theta)
        return value, grad[free]

    trace: list[float] = []
    callback = None
    if config.record_trace:
        trace.append(reduced(theta0[free])[0])

        def callback(theta_free):
            trace.append(reduced(theta_free)[0])

    result = _scipy_minimize(
        reduced,
        theta0[free],
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        options={"maxiter": config.max_iters, "ftol": config.nll_tol, "gtol": config.grad_tol},
    )
    theta = base.copy()
    theta[free] = result.x
    final_value, final_grad = reduced(result.x)
    failed = not np.isfinite(final_value) or final_value >= _PENALTY
    grad_norm = float(np.max(np.abs(final_grad))) if final_grad.size else 0.0
    message = result.message if isinstance(result.message, str) else str(result.message)
    outcome = RestartResult(
        nll=float("nan") if failed else float(final_value),
        iterations=int(result.nit),
        converged=(not failed) and grad_norm <= config.grad_tol,
        grad_inf_norm=grad_norm,
        message="numerical failure" if failed else message,
    )
    return outcome, theta, trace


def _minimize_from(
    dataset: Dataset,
    spec: ModelSpec,
    inits: list[np.ndarray],
    config: OptimizeConfig,
    fixed_mask: np.ndarray | None = None,
) -> OptimizeReport:
    outcomes: list[RestartResult] = []
    finals: list[np.ndarray] = []
    traces: list[tuple[float, ...]] = []
    for theta0 in inits:
        outcome, theta, trace = _run_single(dataset, spec, theta0, config, fixed_mask)
        outcomes.append(outcome)
        finals.append(theta)
        traces.append(tuple(trace))
    nlls = np.array([o.nll for o in outcomes])
    if not np.any(np.isfinite(nlls)):
        raise OptimizationError(
            f"all {len(inits)} restarts failed numerically",
            diagnostics=[f"restart {i}: {o.message}" for i, o in enumerate(outcomes)],
        )
    best_index = int(np.nanargmin(nlls))
    return OptimizeReport(
        best_hyperparams=unpack_hyperparams(finals[best_index], spec, dataset.dim),
        best_nll=float(nlls[best_index]),
        best_index=best_index,
        restarts=tuple(outcomes),
        nll_traces=tuple(traces) if config.record_trace else None,
    )


def minimize_nll(dataset: Dataset, spec: ModelSpec, config: OptimizeConfig) -> OptimizeReport:
    """Minimize the NLL from config.restarts random starts; deterministic in seed."""
    if dataset.n < 2:
        raise ValueError("training requires at least two instances")
    rng = np.random.default_rng(config.seed)
    inits = [_random_init(rng, spec, dataset.dim, dataset.responses) for _ in range(config.restarts)]
    return _minimize_from(dataset, spec, inits, config)


def two_pass_fit(
    dataset: Dataset,
    kernel: KernelSpec | KernelFamily,
    warp_spec: WarpSpec,
    config: OptimizeConfig,
) -> TwoPassResult:
    """Isotropic optimization with restarts, then an ARD fine-tuning pass.

    Pass 2 starts from the pass-1 optimum with the single lengthscale copied
    across all features, so its NLL can only improve.  By default all
    parameters move in pass 2; set config.pass2_lengthscales_only to freeze
    everything except the per-feature lengthscales.
    """
    family = kernel.family if isinstance(kernel, KernelSpec) else kernel
    iso_spec = ModelSpec(KernelSpec(family, LengthscaleMode.ISOTROPIC), warp_spec)
    pass1 = minimize_nll(dataset, iso_spec, config)

    ard_spec = ModelSpec(KernelSpec(family, LengthscaleMode.ARD), warp_spec)
    hp1 = pass1.best_hyperparams
    hp0 = replace(
        hp1,
        kernel=KernelParams(
            variance=hp1.kernel.variance,
            lengthscales=np.full(dataset.dim, hp1.kernel.lengthscales[0]),
        ),
    )
    theta0 = pack_hyperparams(hp0, ard_spec)
    fixed_mask = None
    if config.pass2_lengthscales_only:
        fixed_mask = np.ones(theta0.shape, dtype=bool)
        fixed_mask[1 : 1 + dataset.dim] = False
    pass2 = _minimize_from(dataset, ard_spec, [theta0], config, fixed_mask)
    model = fit_cache(dataset, ard_spec, pass2.best_hyperparams)
    return TwoPassResult(model=model, pass1=pass1, pass2=pass2)
