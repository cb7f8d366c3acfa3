import math

import numpy as np
import pytest

from gpqe import (
    Dataset,
    Hyperparams,
    IllConditionedError,
    KernelFamily,
    KernelParams,
    KernelSpec,
    LengthscaleMode,
    ModelSpec,
    OptimizeConfig,
    WarpFamily,
    WarpParams,
    WarpSpec,
    fit_cache,
    gram_matrix,
    kernel_eval,
    minimize_nll,
    nll,
    nll_gradients,
    nll_value_and_gradients,
    predict_latent,
    warp,
    warp_deriv,
)
from gpqe.experiment import generate_synthetic
from gpqe.gp import stabilized_cholesky
from gpqe.optimize import gradient_to_packed, pack_hyperparams, unpack_hyperparams

from conftest import ALL_WARP_NAMES, make_warp_spec, random_dataset, random_hyperparams

EQ_ISO = ModelSpec(KernelSpec(KernelFamily.EQ))


def dense_nll_oracle(dataset, spec, hp):
    """NLL via explicit inverse and slogdet, no Cholesky shortcuts."""
    params = hp.warp if hp.warp is not None else None
    z = warp(spec.warp, params, dataset.responses)
    noisy = gram_matrix(spec.kernel, hp.kernel, dataset.features) + hp.noise_variance * np.eye(
        dataset.n
    )
    inv = np.linalg.inv(noisy)
    _, logdet = np.linalg.slogdet(noisy)
    value = 0.5 * z @ inv @ z + 0.5 * logdet + 0.5 * dataset.n * math.log(2 * math.pi)
    if spec.warp.family is not WarpFamily.IDENTITY:
        value -= float(np.sum(np.log(warp_deriv(spec.warp, params, dataset.responses))))
    return float(value)


def dense_predict_oracle(dataset, spec, hp, x):
    """Latent predictive mean/variance via an explicit matrix inverse."""
    params = hp.warp if hp.warp is not None else None
    z = warp(spec.warp, params, dataset.responses)
    noisy = gram_matrix(spec.kernel, hp.kernel, dataset.features) + hp.noise_variance * np.eye(
        dataset.n
    )
    inv = np.linalg.inv(noisy)
    ks = np.array([kernel_eval(spec.kernel, hp.kernel, xi, x) for xi in dataset.features])
    mean = ks @ inv @ z
    var = hp.kernel.variance - ks @ inv @ ks + hp.noise_variance
    return float(mean), float(var)


class TestFitCache:
    def test_two_point_cholesky_by_hand(self):
        x = np.array([[0.0], [1.0]])
        y = np.array([0.3, -0.2])
        hp = Hyperparams(KernelParams(1.5, [0.8]), 0.2)
        model = fit_cache(Dataset(x, y), EQ_ISO, hp)

        k01 = 1.5 * math.exp(-0.5 / 0.8**2)
        a = 1.5 + 0.2
        l11 = math.sqrt(a)
        l21 = k01 / l11
        l22 = math.sqrt(a - k01**2 / a)
        np.testing.assert_allclose(
            model.cholesky_factor, [[l11, 0.0], [l21, l22]], rtol=1e-14
        )

    def test_factor_reconstructs_noisy_gram(self, rng):
        ds = random_dataset(rng, n=15, dim=3)
        hp = random_hyperparams(rng, EQ_ISO, 3)
        model = fit_cache(ds, EQ_ISO, hp)
        noisy = gram_matrix(EQ_ISO.kernel, hp.kernel, ds.features) + hp.noise_variance * np.eye(15)
        rebuilt = model.cholesky_factor @ model.cholesky_factor.T
        rel = np.linalg.norm(rebuilt - noisy) / np.linalg.norm(noisy)
        assert rel < 1e-8

    def test_weight_vector_solves_system(self, rng):
        spec = ModelSpec(KernelSpec(KernelFamily.MATERN52), WarpSpec(WarpFamily.TANH_SUM, 2))
        ds = random_dataset(rng, n=12, dim=2)
        hp = random_hyperparams(rng, spec, 2, ds.responses)
        model = fit_cache(ds, spec, hp)
        noisy = gram_matrix(spec.kernel, hp.kernel, ds.features) + hp.noise_variance * np.eye(12)
        residual = np.linalg.norm(noisy @ model.weight_vector - model.warped_responses)
        assert residual < 1e-8

    def test_noise_free_limit_interpolates(self, rng):
        ds = random_dataset(rng, n=10, dim=2)
        hp = Hyperparams(KernelParams(1.0, [1.0]), 1e-12)
        model = fit_cache(ds, EQ_ISO, hp)
        pred = predict_latent(model, ds.features[4])
        assert pred.mean == pytest.approx(ds.responses[4], abs=1e-5)
        assert pred.variance < 1e-8

    def test_identity_warp_equals_absent_warp(self, rng):
        ds = random_dataset(rng, n=9, dim=2)
        kp = KernelParams(0.9, [1.1])
        with_empty = Hyperparams(kp, 0.3, WarpParams.empty())
        with_none = Hyperparams(kp, 0.3, None)
        assert nll(ds, EQ_ISO, with_empty) == pytest.approx(nll(ds, EQ_ISO, with_none), abs=1e-12)

    def test_zero_noise_rejected_for_fitting(self, rng):
        ds = random_dataset(rng, n=4, dim=1)
        with pytest.raises(ValueError):
            fit_cache(ds, EQ_ISO, Hyperparams(KernelParams(1.0, [1.0]), 0.0))

    def test_jitter_escalation_gives_up_on_indefinite_matrix(self):
        with pytest.raises(IllConditionedError):
            stabilized_cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_duplicate_rows_are_stabilized(self):
        x = np.array([[1.0, 2.0]] * 3 + [[0.0, 0.0]])
        ds = Dataset(x, np.array([1.0, 1.0, 1.0, 0.0]))
        hp = Hyperparams(KernelParams(1.0, [1.0]), 1e-12)
        model = fit_cache(ds, EQ_ISO, hp)
        assert np.all(np.isfinite(model.weight_vector))


class TestNll:
    def test_single_standard_normal_point(self):
        # k(x,x) + noise = 1 and y = 0: the standard normal log-density
        ds = Dataset(np.zeros((1, 1)), np.zeros(1))
        hp = Hyperparams(KernelParams(0.6, [1.0]), 0.4)
        assert nll(ds, EQ_ISO, hp) == pytest.approx(0.9189385332046727, abs=1e-12)

    @pytest.mark.parametrize("warp_name", ALL_WARP_NAMES)
    def test_matches_dense_logpdf_oracle(self, warp_name, rng):
        spec = ModelSpec(KernelSpec(KernelFamily.MATERN32), make_warp_spec(warp_name))
        ds = random_dataset(rng, n=14, dim=3)
        hp = random_hyperparams(rng, spec, 3, ds.responses)
        assert nll(ds, spec, hp) == pytest.approx(dense_nll_oracle(ds, spec, hp), abs=1e-8)

    def test_permutation_invariance(self, rng):
        spec = ModelSpec(KernelSpec(KernelFamily.EQ), WarpSpec(WarpFamily.LOG))
        ds = random_dataset(rng, n=12, dim=2)
        hp = random_hyperparams(rng, spec, 2)
        perm = rng.permutation(12)
        shuffled = Dataset(ds.features[perm], ds.responses[perm])
        assert abs(nll(ds, spec, hp) - nll(shuffled, spec, hp)) < 1e-10

    def test_warped_nll_is_standard_plus_jacobian(self, rng):
        # with warp parameters frozen, recompute via a plain GP on f(y)
        spec = ModelSpec(KernelSpec(KernelFamily.EQ), WarpSpec(WarpFamily.TANH_SUM, 2))
        ds = random_dataset(rng, n=10, dim=2)
        hp = random_hyperparams(rng, spec, 2, ds.responses)
        z = warp(spec.warp, hp.warp, ds.responses)
        jacobian = float(np.sum(np.log(warp_deriv(spec.warp, hp.warp, ds.responses))))
        plain = nll(
            Dataset(ds.features, z), EQ_ISO, Hyperparams(hp.kernel, hp.noise_variance)
        )
        assert nll(ds, spec, hp) == pytest.approx(plain - jacobian, abs=1e-10)


class TestNllGradients:
    @pytest.mark.parametrize("warp_name", ALL_WARP_NAMES)
    def test_matches_log_space_finite_differences(self, warp_name, rng):
        spec = ModelSpec(
            KernelSpec(KernelFamily.MATERN52, LengthscaleMode.ARD), make_warp_spec(warp_name)
        )
        ds = random_dataset(rng, n=20, dim=3)
        hp = random_hyperparams(rng, spec, 3, ds.responses)
        theta = pack_hyperparams(hp, spec)
        _, grad = nll_value_and_gradients(ds, spec, hp)
        packed = gradient_to_packed(grad, hp)
        step = 1e-5
        for i in range(theta.size):
            up, down = theta.copy(), theta.copy()
            up[i] += step
            down[i] -= step
            fd = (
                nll(ds, spec, unpack_hyperparams(up, spec, 3))
                - nll(ds, spec, unpack_hyperparams(down, spec, 3))
            ) / (2 * step)
            assert abs(packed[i] - fd) / max(abs(fd), 1e-8) < 1e-4

    def test_directional_derivative_consistency(self, rng):
        spec = ModelSpec(KernelSpec(KernelFamily.EQ), WarpSpec(WarpFamily.TANH_SUM, 1))
        ds = random_dataset(rng, n=15, dim=2)
        hp = random_hyperparams(rng, spec, 2, ds.responses)
        theta = pack_hyperparams(hp, spec)
        _, grad = nll_value_and_gradients(ds, spec, hp)
        packed = gradient_to_packed(grad, hp)
        step = 1e-6
        for _ in range(5):
            direction = rng.normal(size=theta.size)
            direction /= np.linalg.norm(direction)
            fd = (
                nll(ds, spec, unpack_hyperparams(theta + step * direction, spec, 2))
                - nll(ds, spec, unpack_hyperparams(theta - step * direction, spec, 2))
            ) / (2 * step)
            analytic = packed @ direction
            assert abs(analytic - fd) / max(abs(fd), 1e-8) < 1e-4

    def test_finite_on_duplicate_rows_with_tiny_noise(self):
        x = np.array([[0.4, 0.4], [0.4, 0.4], [1.0, -1.0], [0.2, 0.9]])
        ds = Dataset(x, np.array([1.0, 1.0, -0.5, 0.3]))
        hp = Hyperparams(KernelParams(1.0, [1.0]), 1e-10)
        grad = nll_gradients(ds, EQ_ISO, hp)
        assert np.isfinite(grad.variance)
        assert np.all(np.isfinite(grad.lengthscales))
        assert np.isfinite(grad.noise_variance)

    def test_gradient_small_at_reported_optimum(self, rng):
        ds = random_dataset(rng, n=25, dim=2)
        report = minimize_nll(ds, EQ_ISO, OptimizeConfig(restarts=2, max_iters=500, seed=4))
        best = report.restarts[report.best_index]
        if best.converged:
            assert best.grad_inf_norm < 1e-4


class TestPredictLatent:
    def test_far_point_reverts_to_prior(self, rng):
        ds = random_dataset(rng, n=8, dim=2)
        hp = Hyperparams(KernelParams(1.3, [0.6]), 0.2)
        model = fit_cache(ds, EQ_ISO, hp)
        pred = predict_latent(model, np.array([500.0, -500.0]))
        assert pred.mean == pytest.approx(0.0, abs=1e-10)
        assert pred.variance == pytest.approx(1.3 + 0.2, rel=1e-10)

    @pytest.mark.parametrize("warp_name", ["none", "tanh2"])
    def test_matches_dense_inverse_oracle(self, warp_name, rng):
        spec = ModelSpec(KernelSpec(KernelFamily.MATERN52), make_warp_spec(warp_name))
        ds = random_dataset(rng, n=18, dim=3)
        hp = random_hyperparams(rng, spec, 3, ds.responses)
        model = fit_cache(ds, spec, hp)
        for _ in range(5):
            x = rng.normal(size=3)
            pred = predict_latent(model, x)
            mean, var = dense_predict_oracle(ds, spec, hp, x)
            assert pred.mean == pytest.approx(mean, abs=1e-8)
            assert pred.variance == pytest.approx(var, abs=1e-8)

    def test_batch_matches_single(self, rng):
        ds = random_dataset(rng, n=10, dim=2)
        hp = random_hyperparams(rng, EQ_ISO, 2)
        model = fit_cache(ds, EQ_ISO, hp)
        xs = rng.normal(size=(6, 2))
        batch = predict_latent(model, xs)
        for i in range(6):
            single = predict_latent(model, xs[i])
            assert batch.mean[i] == pytest.approx(single.mean, rel=1e-14)
            assert batch.variance[i] == pytest.approx(single.variance, rel=1e-14)

    def test_posterior_variance_bounded_by_prior(self, rng):
        for _ in range(10):
            ds = random_dataset(rng, n=12, dim=2)
            hp = random_hyperparams(rng, EQ_ISO, 2)
            model = fit_cache(ds, EQ_ISO, hp)
            pred = predict_latent(model, rng.normal(size=(20, 2)))
            bound = hp.kernel.variance + hp.noise_variance + 1e-8
            assert np.all(pred.variance <= bound)
            assert np.all(pred.variance > 0)


class TestDatasetValidation:
    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Dataset(np.array([[np.nan]]), np.array([1.0]))
        with pytest.raises(ValueError):
            Dataset(np.array([[1.0]]), np.array([np.inf]))

    def test_rejects_mismatched_rows(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), np.zeros(2))

    def test_hyperparams_reject_negative_noise(self):
        with pytest.raises(ValueError):
            Hyperparams(KernelParams(1.0, [1.0]), -0.1)


def test_hyperparameter_recovery_from_known_prior():
    # data sampled from a known GP prior: the fitted variance and noise
    # should land within a factor of two of the truth
    true_spec = ModelSpec(KernelSpec(KernelFamily.EQ, LengthscaleMode.ISOTROPIC))
    true_hp = Hyperparams(KernelParams(1.0, [1.0]), 0.1)
    ds = generate_synthetic(100, 2, true_spec, true_hp, seed=7)
    report = minimize_nll(ds, true_spec, OptimizeConfig(restarts=4, max_iters=500, seed=1))
    fitted = report.best_hyperparams
    assert 0.5 <= fitted.kernel.variance / true_hp.kernel.variance <= 2.0
    assert 0.5 <= fitted.noise_variance / true_hp.noise_variance <= 2.0
