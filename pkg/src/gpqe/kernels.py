"""Stationary covariance functions for GP regression.

Three kernel families over a shared scaled squared distance

    r2(x, x') = sum_i (x_i - x'_i)^2 / l_i^2

with either a single (isotropic) lengthscale or one lengthscale per input
dimension (ARD):

    EQ:   k = sigma_v * exp(-r2 / 2)
    M32:  k = sigma_v * (1 + sqrt(3 r2)) * exp(-sqrt(3 r2))
    M52:  k = sigma_v * (1 + sqrt(5 r2) + 5 r2 / 3) * exp(-sqrt(5 r2))

All three forms are linear in the variance ``sigma_v`` and non-increasing in
``r2``.  Analytic gradients with respect to the variance and every
lengthscale are provided for marginal-likelihood training.  The derivative
with respect to ``r2`` is smooth for all three families (the apparent
``sqrt(r2)`` singularity cancels), so gradients at coincident inputs are
exactly zero rather than NaN.

No jitter is added here; numerical stabilization of covariance matrices is
the responsibility of the calling inference code.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist


class KernelFamily(enum.Enum):
    EQ = "eq"
    MATERN32 = "matern32"
    MATERN52 = "matern52"


class LengthscaleMode(enum.Enum):
    ISOTROPIC = "isotropic"
    ARD = "ard"


@dataclass(frozen=True)
class KernelSpec:
    """Immutable choice of kernel family and lengthscale tying."""

    family: KernelFamily
    lengthscale_mode: LengthscaleMode = LengthscaleMode.ISOTROPIC


@dataclass(frozen=True)
class KernelParams:
    """Kernel hyperparameters: variance sigma_v and lengthscale vector l.

    The lengthscale vector has one entry in isotropic mode and one entry per
    input dimension in ARD mode.  All entries must be strictly positive.
    """

    variance: float
    lengthscales: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        object.__setattr__(self, "variance", float(self.variance))
        object.__setattr__(self, "lengthscales", ls)
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")
        if ls.ndim != 1 or ls.size == 0:
            raise ValueError("lengthscales must be a non-empty 1-d vector")
        if not np.all(np.isfinite(ls)) or not np.all(ls > 0):
            raise ValueError(f"all lengthscales must be positive and finite, got {ls}")

    @property
    def n_lengthscales(self) -> int:
        return self.lengthscales.size


@dataclass(frozen=True)
class GramGradients:
    """Partial derivatives of a Gram matrix, one n-by-n block per parameter."""

    variance: np.ndarray
    lengthscales: list[np.ndarray]


def check_compatible(spec: KernelSpec, params: KernelParams, dim: int) -> None:
    """Validate that the lengthscale vector matches the mode and input dim."""
    if spec.lengthscale_mode is LengthscaleMode.ISOTROPIC:
        if params.n_lengthscales != 1:
            raise ValueError(
                f"isotropic kernel takes exactly one lengthscale, got {params.n_lengthscales}"
            )
    elif params.n_lengthscales != dim:
        raise ValueError(
            f"ARD kernel over {dim}-d inputs takes {dim} lengthscales, got {params.n_lengthscales}"
        )


def scaled_sq_distance(x: np.ndarray, xp: np.ndarray, params: KernelParams) -> float:
    """Scaled squared distance r2 = sum_i (x_i - x'_i)^2 / l_i^2.

    Symmetric in its two arguments and zero iff x == x'.
    """
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    if x.ndim != 1 or xp.ndim != 1 or x.shape != xp.shape:
        raise ValueError(f"inputs must be equal-length vectors, got {x.shape} and {xp.shape}")
    ls = params.lengthscales
    if ls.size not in (1, x.size):
        raise ValueError(f"{ls.size} lengthscales are not broadcastable to {x.size}-d inputs")
    d = (x - xp) / ls
    return float(d @ d)


def _value_from_r2(family: KernelFamily, variance: float, r2):
    """Kernel value as a function of the scaled squared distance."""
    if family is KernelFamily.EQ:
        return variance * np.exp(-0.5 * r2)
    if family is KernelFamily.MATERN32:
        s = np.sqrt(3.0 * r2)
        return variance * (1.0 + s) * np.exp(-s)
    if family is KernelFamily.MATERN52:
        s = np.sqrt(5.0 * r2)
        return variance * (1.0 + s + s * s / 3.0) * np.exp(-s)
    raise ValueError(f"unknown kernel family {family!r}")


def _dvalue_dr2(family: KernelFamily, variance: float, r2):
    """d k / d r2.  Finite everywhere, including r2 = 0, for all families."""
    if family is KernelFamily.EQ:
        return -0.5 * variance * np.exp(-0.5 * r2)
    if family is KernelFamily.MATERN32:
        return -1.5 * variance * np.exp(-np.sqrt(3.0 * r2))
    if family is KernelFamily.MATERN52:
        s = np.sqrt(5.0 * r2)
        return -(5.0 / 6.0) * variance * (1.0 + s) * np.exp(-s)
    raise ValueError(f"unknown kernel family {family!r}")


def kernel_eval(spec: KernelSpec, params: KernelParams, x: np.ndarray, xp: np.ndarray) -> float:
    """Evaluate the covariance between two input vectors."""
    r2 = scaled_sq_distance(x, xp, params)
    return float(_value_from_r2(spec.family, params.variance, r2))


def _scaled_r2_matrix(params: KernelParams, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    xs = x / params.lengthscales
    zs = z / params.lengthscales
    # cdist evaluates each pair independently, so the result is exactly
    # symmetric with an exactly-zero diagonal when x is z
    return cdist(xs, zs, metric="sqeuclidean")


def _as_matrix(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty 2-d array, got shape {x.shape}")
    return x


def gram_matrix(spec: KernelSpec, params: KernelParams, x: np.ndarray) -> np.ndarray:
    """Symmetric n-by-n covariance matrix K[i, j] = k(x_i, x_j)."""
    x = _as_matrix(x, "x")
    check_compatible(spec, params, x.shape[1])
    r2 = _scaled_r2_matrix(params, x, x)
    return _value_from_r2(spec.family, params.variance, r2)


def cross_gram(spec: KernelSpec, params: KernelParams, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Cross-covariance matrix between two input sets, shape (n, m)."""
    x = _as_matrix(x, "x")
    z = _as_matrix(z, "z")
    if x.shape[1] != z.shape[1]:
        raise ValueError(f"input dims differ: {x.shape[1]} vs {z.shape[1]}")
    check_compatible(spec, params, x.shape[1])
    r2 = _scaled_r2_matrix(params, x, z)
    return _value_from_r2(spec.family, params.variance, r2)


def gram_gradients(spec: KernelSpec, params: KernelParams, x: np.ndarray) -> GramGradients:
    """Analytic partials of the Gram matrix w.r.t. variance and lengthscales.

    Every family is linear in the variance, so dK/dvariance = K / variance.
    Lengthscale gradients go through the chain rule in r2; the factor
    dr2/dl_j = -2 (x_j - x'_j)^2 / l_j^3 vanishes at coincident inputs, which
    keeps Matern gradients finite on duplicated rows.
    """
    x = _as_matrix(x, "x")
    check_compatible(spec, params, x.shape[1])
    ls = params.lengthscales
    r2 = _scaled_r2_matrix(params, x, x)
    d_variance = _value_from_r2(spec.family, 1.0, r2)
    dk_dr2 = _dvalue_dr2(spec.family, params.variance, r2)

    d_lengthscales = []
    if spec.lengthscale_mode is LengthscaleMode.ISOTROPIC:
        # r2 = (sum_j d_j^2) / l^2  =>  dr2/dl = -2 r2 / l
        d_lengthscales.append(dk_dr2 * (-2.0 * r2 / ls[0]))
    else:
        for j in range(x.shape[1]):
            col = x[:, j]
            sq_diff = (col[:, None] - col[None, :]) ** 2
            d_lengthscales.append(dk_dr2 * (-2.0 * sq_diff / ls[j] ** 3))
    return GramGradients(variance=d_variance, lengthscales=d_lengthscales)
