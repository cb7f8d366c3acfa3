import numpy as np
import pytest

from gpqe import (
    Dataset,
    Hyperparams,
    KernelFamily,
    KernelParams,
    KernelSpec,
    LengthscaleMode,
    ModelSpec,
    WarpFamily,
    WarpParams,
    WarpSpec,
)

ALL_FAMILIES = tuple(KernelFamily)
ALL_WARP_NAMES = ("none", "log", "tanh1", "tanh2", "tanh3")


def make_warp_spec(name: str) -> WarpSpec:
    if name == "none":
        return WarpSpec(WarpFamily.IDENTITY)
    if name == "log":
        return WarpSpec(WarpFamily.LOG)
    if name.startswith("tanh"):
        return WarpSpec(WarpFamily.TANH_SUM, int(name[4:]))
    raise ValueError(name)


def random_dataset(rng, n=12, dim=3, positive=True) -> Dataset:
    x = rng.normal(size=(n, dim))
    y = rng.normal(size=n)
    if positive:
        y = np.abs(y) + 0.1
    return Dataset(x, y)


def random_hyperparams(rng, spec: ModelSpec, dim: int, responses=None) -> Hyperparams:
    n_ls = 1 if spec.kernel.lengthscale_mode is LengthscaleMode.ISOTROPIC else dim
    kernel = KernelParams(
        variance=float(np.exp(rng.uniform(-1, 1))),
        lengthscales=np.exp(rng.uniform(-0.5, 1.0, size=n_ls)),
    )
    warp = None
    if spec.warp.family is WarpFamily.TANH_SUM:
        terms = spec.warp.terms
        center = 0.0 if responses is None else float(np.mean(responses))
        warp = WarpParams(
            a=np.exp(rng.uniform(-2, 0, size=terms)),
            b=np.exp(rng.uniform(-2, 0, size=terms)),
            c=rng.normal(center, 1.0, size=terms),
        )
    return Hyperparams(kernel=kernel, noise_variance=float(np.exp(rng.uniform(-2, 0))), warp=warp)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
