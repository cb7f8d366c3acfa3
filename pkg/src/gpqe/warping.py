"""Monotonic warping functions mapping observed responses to latent space.

Three families:

* identity: f(y) = y (a plain GP),
* log:      f(y) = ln y, defined for y > 0,
* tanh sum: f(y) = y + sum_i a_i * tanh(b_i * (y + c_i)).

The tanh-sum family is strictly increasing whenever every a_i > 0 and
b_i > 0, which the parameter container enforces; its inverse has no closed
form and is computed by a safeguarded Newton iteration (Newton steps with a
bisection fallback inside a bracket).  Because |f(y) - y| <= sum_i a_i, the
interval [z - sum(a), z + sum(a)] always brackets the preimage of z.

Per-parameter gradients of both f(y) and log f'(y) are provided; the latter
enter the Jacobian term of the warped marginal likelihood.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import ConvergenceError, DomainError


class WarpFamily(enum.Enum):
    IDENTITY = "identity"
    LOG = "log"
    TANH_SUM = "tanh_sum"


@dataclass(frozen=True)
class WarpSpec:
    """Warping family plus, for the tanh-sum family, the number of terms."""

    family: WarpFamily
    terms: int = 0

    def __post_init__(self):
        if self.family is WarpFamily.TANH_SUM:
            if self.terms < 1:
                raise ValueError("tanh-sum warp needs at least one term")
        elif self.terms != 0:
            raise ValueError(f"{self.family.value} warp carries no terms")


@dataclass(frozen=True)
class WarpParams:
    """Tanh-sum coefficients.  a_i > 0 and b_i > 0 keep f monotonic."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float)).copy()
        b = np.atleast_1d(np.asarray(self.b, dtype=float)).copy()
        c = np.atleast_1d(np.asarray(self.c, dtype=float)).copy()
        for name, arr in (("a", a), ("b", b), ("c", c)):
            if arr.ndim != 1:
                raise ValueError(f"{name} must be a 1-d vector")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite, got {arr}")
        if not (a.size == b.size == c.size):
            raise ValueError("a, b, c must have equal length")
        if a.size and (np.any(a <= 0) or np.any(b <= 0)):
            raise ValueError("a and b entries must be strictly positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @classmethod
    def empty(cls) -> "WarpParams":
        return cls(np.empty(0), np.empty(0), np.empty(0))

    @property
    def terms(self) -> int:
        return self.a.size


@dataclass(frozen=True)
class WarpGradients:
    """Per-parameter partials of f(y) and of log f'(y), shape (terms,) + y.shape."""

    f_a: np.ndarray
    f_b: np.ndarray
    f_c: np.ndarray
    log_deriv_a: np.ndarray
    log_deriv_b: np.ndarray
    log_deriv_c: np.ndarray


def _check_params(spec: WarpSpec, params: WarpParams | None) -> WarpParams:
    if params is None:
        params = WarpParams.empty()
    if spec.family is WarpFamily.TANH_SUM:
        if params.terms != spec.terms:
            raise ValueError(f"warp expects {spec.terms} terms, parameters carry {params.terms}")
    elif params.terms != 0:
        raise ValueError(f"{spec.family.value} warp takes no parameters")
    return params


def _tanh_pieces(params: WarpParams, y: np.ndarray):
    """tanh(t_i) and sech^2(t_i) for t_i = b_i (y + c_i), shapes (terms, len(y))."""
    t = params.b[:, None] * (y[None, :] + params.c[:, None])
    th = np.tanh(t)
    return t, th, 1.0 - th * th


def _warp_flat(spec: WarpSpec, params: WarpParams, y: np.ndarray) -> np.ndarray:
    if spec.family is WarpFamily.IDENTITY:
        return y.copy()
    if spec.family is WarpFamily.LOG:
        if np.any(y <= 0):
            raise DomainError("log warp requires strictly positive responses")
        return np.log(y)
    _, th, _ = _tanh_pieces(params, y)
    return y + params.a @ th


def _warp_deriv_flat(spec: WarpSpec, params: WarpParams, y: np.ndarray) -> np.ndarray:
    if spec.family is WarpFamily.IDENTITY:
        return np.ones_like(y)
    if spec.family is WarpFamily.LOG:
        if np.any(y <= 0):
            raise DomainError("log warp requires strictly positive responses")
        return 1.0 / y
    _, _, sech2 = _tanh_pieces(params, y)
    return 1.0 + (params.a * params.b) @ sech2


def _dispatch(fn, spec, params, y):
    arr = np.asarray(y, dtype=float)
    out = fn(spec, params, arr.ravel())
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def warp(spec: WarpSpec, params: WarpParams | None, y):
    """f(y).  Strictly increasing in y for all valid parameters."""
    return _dispatch(_warp_flat, spec, _check_params(spec, params), y)


def warp_deriv(spec: WarpSpec, params: WarpParams | None, y):
    """f'(y).  Always >= 1 for the tanh-sum family, 1/y for log, 1 for identity."""
    return _dispatch(_warp_deriv_flat, spec, _check_params(spec, params), y)


def warp_inverse(spec: WarpSpec, params: WarpParams | None, z, max_iter: int = 100):
    """Solve f(y) = z for y.

    Identity and log warps invert in closed form.  The tanh-sum family uses
    safeguarded Newton inside the bracket [z - sum(a), z + sum(a)], stopping
    when |f(y) - z| <= 1e-10 * max(1, |z|).  Raises ConvergenceError, with
    the best iterate and residual attached, if the budget runs out.
    """
    params = _check_params(spec, params)
    arr = np.asarray(z, dtype=float)
    flat = arr.ravel()
    if spec.family is WarpFamily.IDENTITY:
        out = flat.copy()
    elif spec.family is WarpFamily.LOG:
        out = np.exp(flat)
    else:
        out = _tanh_sum_inverse(params, flat, max_iter)
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def _tanh_sum_inverse(params: WarpParams, z: np.ndarray, max_iter: int) -> np.ndarray:
    reach = params.a.sum()
    lo = z - reach
    hi = z + reach
    tol = 1e-10 * np.maximum(1.0, np.abs(z))
    y = z.copy()
    resid = np.empty_like(z)
    done = np.zeros(z.shape, dtype=bool)
    spec = WarpSpec(WarpFamily.TANH_SUM, params.terms)
    for _ in range(max_iter):
        resid = _warp_flat(spec, params, y) - z
        done = np.abs(resid) <= tol
        if done.all():
            return y
        # shrink the bracket around the sign change (f is increasing)
        hi = np.where(resid > 0, np.minimum(hi, y), hi)
        lo = np.where(resid < 0, np.maximum(lo, y), lo)
        step = resid / _warp_deriv_flat(spec, params, y)
        cand = y - step
        outside = ~np.isfinite(cand) | (cand <= lo) | (cand >= hi)
        cand = np.where(outside, 0.5 * (lo + hi), cand)
        y = np.where(done, y, cand)
    resid = _warp_flat(spec, params, y) - z
    if np.all(np.abs(resid) <= tol):
        return y
    worst = float(np.max(np.abs(resid)))
    raise ConvergenceError(
        f"warp inversion did not converge in {max_iter} iterations (residual {worst:.3e})",
        best=y,
        residual=worst,
    )


def warp_param_gradients(spec: WarpSpec, params: WarpParams | None, y) -> WarpGradients:
    """Partials of f(y) and log f'(y) with respect to a, b, c.

    With t_i = b_i (y + c_i), s_i = sech^2(t_i) and f' = 1 + sum_i a_i b_i s_i:

        df/da_i = tanh(t_i)
        df/db_i = a_i (y + c_i) s_i
        df/dc_i = a_i b_i s_i
        df'/da_i = b_i s_i
        df'/db_i = a_i s_i (1 - 2 t_i tanh(t_i))
        df'/dc_i = -2 a_i b_i^2 s_i tanh(t_i)

    and the log-derivative partials divide through by f'.
    """
    params = _check_params(spec, params)
    arr = np.asarray(y, dtype=float)
    flat = arr.ravel()
    if spec.family is not WarpFamily.TANH_SUM:
        empty = np.empty((0,) + arr.shape)
        return WarpGradients(empty, empty, empty, empty, empty, empty)

    a = params.a[:, None]
    b = params.b[:, None]
    c = params.c[:, None]
    t, th, sech2 = _tanh_pieces(params, flat)
    deriv = 1.0 + (params.a * params.b) @ sech2

    f_a = th
    f_b = a * (flat[None, :] + c) * sech2
    f_c = a * b * sech2
    d_deriv_a = b * sech2
    d_deriv_b = a * sech2 * (1.0 - 2.0 * t * th)
    d_deriv_c = -2.0 * a * b * b * sech2 * th

    shape = (params.terms,) + arr.shape
    return WarpGradients(
        f_a=f_a.reshape(shape),
        f_b=f_b.reshape(shape),
        f_c=f_c.reshape(shape),
        log_deriv_a=(d_deriv_a / deriv).reshape(shape),
        log_deriv_b=(d_deriv_b / deriv).reshape(shape),
        log_deriv_c=(d_deriv_c / deriv).reshape(shape),
    )
