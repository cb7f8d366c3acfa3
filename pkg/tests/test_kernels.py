import numpy as np
import pytest

from gpqe import (
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
from gpqe.kernels import _value_from_r2

EQ_ISO = KernelSpec(KernelFamily.EQ, LengthscaleMode.ISOTROPIC)


class TestScaledSqDistance:
    def test_zero_at_coincident_points(self, rng):
        x = rng.normal(size=4)
        params = KernelParams(1.0, np.exp(rng.normal(size=4)))
        assert scaled_sq_distance(x, x, params) == 0.0

    def test_unit_displacement(self):
        params = KernelParams(1.0, [1.0, 1.0])
        assert scaled_sq_distance(np.array([1.0, 0.0]), np.zeros(2), params) == 1.0

    def test_hand_evaluated_sum(self):
        # (2/2)^2 + (2/1)^2 = 5
        params = KernelParams(1.0, [2.0, 1.0])
        assert scaled_sq_distance(np.array([2.0, 2.0]), np.zeros(2), params) == pytest.approx(5.0)

    def test_symmetry(self, rng):
        params = KernelParams(1.0, np.exp(rng.normal(size=3)))
        for _ in range(20):
            x, xp = rng.normal(size=3), rng.normal(size=3)
            assert scaled_sq_distance(x, xp, params) == scaled_sq_distance(xp, x, params)

    def test_dimension_mismatch(self):
        params = KernelParams(1.0, [1.0])
        with pytest.raises(ValueError):
            scaled_sq_distance(np.zeros(2), np.zeros(3), params)

    def test_non_broadcastable_lengthscales(self):
        params = KernelParams(1.0, [1.0, 1.0, 1.0])
        with pytest.raises(ValueError):
            scaled_sq_distance(np.zeros(2), np.zeros(2), params)


class TestKernelEval:
    @pytest.mark.parametrize("family", list(KernelFamily))
    def test_value_at_zero_distance_is_variance(self, family, rng):
        spec = KernelSpec(family)
        variance = 2.7
        params = KernelParams(variance, [1.3])
        x = rng.normal(size=5)
        assert kernel_eval(spec, params, x, x) == pytest.approx(variance)

    def test_eq_analytic_plugin(self):
        # r2 = 2 with unit variance: exp(-1)
        params = KernelParams(1.0, [1.0])
        x = np.array([np.sqrt(2.0)])
        assert kernel_eval(EQ_ISO, params, x, np.zeros(1)) == pytest.approx(np.exp(-1.0))

    def test_matern52_value_at_unit_r2(self):
        # (1 + sqrt(5) + 5/3) exp(-sqrt(5)), evaluated symbolically with mpmath
        spec = KernelSpec(KernelFamily.MATERN52)
        params = KernelParams(1.0, [1.0])
        value = kernel_eval(spec, params, np.array([1.0]), np.zeros(1))
        assert value == pytest.approx(0.52399410883182031, rel=1e-14)

    @pytest.mark.parametrize("family", list(KernelFamily))
    def test_range_and_decay(self, family):
        variance = 1.7
        r2 = np.linspace(0.0, 40.0, 400)
        values = _value_from_r2(family, variance, r2)
        assert np.all(values > 0)
        assert np.all(values <= variance)
        assert np.all(np.diff(values) <= 0)

    @pytest.mark.parametrize("family", list(KernelFamily))
    def test_symmetry(self, family, rng):
        spec = KernelSpec(family, LengthscaleMode.ARD)
        params = KernelParams(1.2, np.exp(rng.normal(size=3)))
        for _ in range(10):
            x, xp = rng.normal(size=3), rng.normal(size=3)
            assert kernel_eval(spec, params, x, xp) == kernel_eval(spec, params, xp, x)


class TestGramMatrix:
    def test_single_point(self):
        params = KernelParams(3.5, [1.0])
        gram = gram_matrix(EQ_ISO, params, np.zeros((1, 2)))
        np.testing.assert_allclose(gram, [[3.5]])

    def test_duplicated_rows_give_variance(self):
        params = KernelParams(2.0, [1.0])
        x = np.array([[0.5, 1.0], [0.5, 1.0], [3.0, -1.0]])
        gram = gram_matrix(EQ_ISO, params, x)
        assert gram[0, 1] == pytest.approx(2.0)
        np.testing.assert_allclose(np.diag(gram), 2.0)

    @pytest.mark.parametrize("family", list(KernelFamily))
    @pytest.mark.parametrize("mode", list(LengthscaleMode))
    def test_matches_double_loop_oracle(self, family, mode, rng):
        spec = KernelSpec(family, mode)
        n_ls = 1 if mode is LengthscaleMode.ISOTROPIC else 3
        params = KernelParams(1.4, np.exp(rng.normal(size=n_ls)))
        x = rng.normal(size=(5, 3))
        gram = gram_matrix(spec, params, x)
        oracle = np.array(
            [[kernel_eval(spec, params, x[i], x[j]) for j in range(5)] for i in range(5)]
        )
        np.testing.assert_allclose(gram, oracle, rtol=1e-14)
        np.testing.assert_allclose(gram, gram.T, rtol=0, atol=0)

    @pytest.mark.parametrize("family", list(KernelFamily))
    def test_positive_semidefinite(self, family, rng):
        spec = KernelSpec(family)
        for trial in range(10):
            n = int(rng.integers(2, 21))
            params = KernelParams(float(np.exp(rng.normal())), [float(np.exp(rng.normal()))])
            x = rng.normal(size=(n, 4))
            gram = gram_matrix(spec, params, x)
            eigenvalues = np.linalg.eigvalsh(gram)
            assert eigenvalues.min() >= -1e-8 * params.variance

    def test_isotropic_matches_ard_with_tied_lengthscales(self, rng):
        x = rng.normal(size=(8, 4))
        for family in KernelFamily:
            iso = gram_matrix(
                KernelSpec(family, LengthscaleMode.ISOTROPIC), KernelParams(1.3, [0.7]), x
            )
            ard = gram_matrix(
                KernelSpec(family, LengthscaleMode.ARD), KernelParams(1.3, np.full(4, 0.7)), x
            )
            np.testing.assert_allclose(iso, ard, rtol=0, atol=1e-12)

    def test_lengthscale_count_enforced(self, rng):
        x = rng.normal(size=(4, 3))
        with pytest.raises(ValueError):
            gram_matrix(EQ_ISO, KernelParams(1.0, [1.0, 1.0]), x)
        with pytest.raises(ValueError):
            gram_matrix(
                KernelSpec(KernelFamily.EQ, LengthscaleMode.ARD), KernelParams(1.0, [1.0]), x
            )

    def test_cross_gram_matches_eval(self, rng):
        spec = KernelSpec(KernelFamily.MATERN32, LengthscaleMode.ARD)
        params = KernelParams(0.9, np.exp(rng.normal(size=2)))
        x = rng.normal(size=(4, 2))
        z = rng.normal(size=(3, 2))
        kxz = cross_gram(spec, params, x, z)
        oracle = np.array(
            [[kernel_eval(spec, params, x[i], z[j]) for j in range(3)] for i in range(4)]
        )
        np.testing.assert_allclose(kxz, oracle, rtol=1e-14)


def _fd_gram(spec, params, x, bump):
    """Central finite difference of the Gram matrix under a params bump."""
    step = 1e-5
    up = gram_matrix(spec, bump(params, +step), x)
    down = gram_matrix(spec, bump(params, -step), x)
    return (up - down) / (2 * step)


class TestGramGradients:
    def test_variance_gradient_is_gram_at_unit_variance(self, rng):
        x = rng.normal(size=(6, 2))
        for family in KernelFamily:
            spec = KernelSpec(family)
            params = KernelParams(1.0, [0.8])
            grads = gram_gradients(spec, params, x)
            np.testing.assert_allclose(grads.variance, gram_matrix(spec, params, x), rtol=1e-14)

    @pytest.mark.parametrize("family", list(KernelFamily))
    @pytest.mark.parametrize("mode", list(LengthscaleMode))
    def test_matches_finite_differences(self, family, mode, rng):
        spec = KernelSpec(family, mode)
        n_ls = 1 if mode is LengthscaleMode.ISOTROPIC else 3
        for _ in range(5):
            params = KernelParams(
                float(np.exp(rng.normal())), np.exp(rng.normal(size=n_ls) * 0.5)
            )
            x = rng.normal(size=(7, 3))
            grads = gram_gradients(spec, params, x)

            fd_var = _fd_gram(
                spec, params, x, lambda p, s: KernelParams(p.variance + s, p.lengthscales)
            )
            scale = np.maximum(np.abs(fd_var), 1e-8)
            assert np.max(np.abs(grads.variance - fd_var) / scale) < 1e-4

            for j in range(n_ls):
                def bump(p, s, j=j):
                    ls = p.lengthscales.copy()
                    ls[j] += s
                    return KernelParams(p.variance, ls)

                fd_ls = _fd_gram(spec, params, x, bump)
                scale = np.maximum(np.abs(fd_ls), 1e-8)
                assert np.max(np.abs(grads.lengthscales[j] - fd_ls) / scale) < 1e-4

    @pytest.mark.parametrize("family", list(KernelFamily))
    def test_lengthscale_gradient_zero_at_coincident_points(self, family):
        # duplicated rows: the diagonal block of dK/dl must be exactly zero
        spec = KernelSpec(family)
        params = KernelParams(1.0, [0.5])
        x = np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]])
        grads = gram_gradients(spec, params, x)
        dl = grads.lengthscales[0]
        assert dl[0, 0] == 0.0 and dl[0, 1] == 0.0 and dl[1, 0] == 0.0
        assert np.all(np.isfinite(dl))


class TestKernelParamsValidation:
    def test_rejects_nonpositive_variance(self):
        with pytest.raises(ValueError):
            KernelParams(0.0, [1.0])
        with pytest.raises(ValueError):
            KernelParams(-1.0, [1.0])

    def test_rejects_nonpositive_lengthscales(self):
        with pytest.raises(ValueError):
            KernelParams(1.0, [1.0, 0.0])
        with pytest.raises(ValueError):
            KernelParams(1.0, [])

    def test_spec_is_immutable(self):
        spec = KernelSpec(KernelFamily.EQ)
        with pytest.raises(AttributeError):
            spec.family = KernelFamily.MATERN32
