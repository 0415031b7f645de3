import time

import numpy as np
import pytest

from conftest import random_reference_set
from kmpfuse.demonstrations import Dims
from kmpfuse.errors import DataError
from kmpfuse.gmm import ReferenceSet, build_reference_set, fit_training_gmm
from kmpfuse.kmp import (
    KmpHyperparams,
    aleatoric_direct,
    epistemic,
    epistemic_gradient,
    epistemic_with_gradient,
    kernel_matrix,
    kmp_fit,
    kmp_from_dict,
    kmp_predict,
    kmp_to_dict,
    rbf_kernel,
)


def one_ref_model(s1=0.3, mu1=2.0, var1=0.25, lam=0.5, length=0.7, jitter=1e-8):
    refs = ReferenceSet(
        inputs=np.array([[s1]]), means=np.array([[mu1]]),
        covariances=np.array([[[var1]]]), dims=Dims(0, 1, 1, 1),
    )
    return kmp_fit(refs, KmpHyperparams(lam=lam, lengths=np.array([length]), jitter=jitter))


class TestRbfKernel:
    def test_zero_distance(self):
        a = np.array([0.4, -1.2, 3.0])
        assert rbf_kernel(a, a, np.array([1.0, 2.0, 0.5])) == 1.0

    def test_unit_mahalanobis_distance(self):
        lengths = np.array([0.3, 1.0, 2.0])
        a = np.zeros(3)
        b = np.array([0.3, 0.0, 0.0])
        assert rbf_kernel(a, b, lengths) == pytest.approx(np.exp(-0.5), abs=1e-15)

    def test_symmetry_exact(self):
        rng = np.random.default_rng(0)
        lengths = np.array([0.5, 1.5])
        for _ in range(100):
            a, b = rng.normal(size=2), rng.normal(size=2)
            assert rbf_kernel(a, b, lengths) == rbf_kernel(b, a, lengths)

    def test_matrix_matches_scalar(self):
        rng = np.random.default_rng(1)
        lengths = np.array([0.7, 0.9, 1.3])
        a = rng.normal(size=(4, 3))
        b = rng.normal(size=(5, 3))
        mat = kernel_matrix(a, b, lengths)
        for i in range(4):
            for j in range(5):
                assert mat[i, j] == pytest.approx(rbf_kernel(a[i], b[j], lengths), abs=1e-14)


class TestFit:
    def test_one_by_one_system(self):
        # With N=1, O=1 the regularized system is the scalar 1 + lam * var.
        lam, var, mu = 0.5, 0.25, 2.0
        model = one_ref_model(mu1=mu, var1=var, lam=lam)
        pred = kmp_predict(model, model.refs.inputs[0])
        assert pred.mean[0] == pytest.approx(mu / (1.0 + lam * var), rel=1e-12)

    def test_duplicate_refs_escalate_jitter(self):
        refs = ReferenceSet(
            inputs=np.array([[0.5], [0.5]]),
            means=np.array([[1.0], [1.0]]),
            covariances=np.array([[[0.1]], [[0.1]]]),
            dims=Dims(0, 1, 1, 1),
        )
        model = kmp_fit(refs, KmpHyperparams(lam=0.5, lengths=np.array([1.0]), jitter=0.0))
        assert model.jitter_plain > 0.0

    def test_benchmark_scale_fit(self, zee_training):
        mixture = fit_training_gmm(zee_training.joint(), zee_training.dims, 20, seed=0)
        refs = build_reference_set(mixture, 500, seed=1)
        start = time.perf_counter()
        model = kmp_fit(refs, KmpHyperparams(lam=0.5, lengths=np.array([0.04, 0.04])))
        assert time.perf_counter() - start < 10.0
        assert model.n_refs == 500

    def test_length_dim_mismatch(self):
        refs = random_reference_set()
        with pytest.raises(Exception):
            kmp_fit(refs, KmpHyperparams(lam=0.5, lengths=np.array([1.0])))


class TestPredict:
    def test_single_reference_closed_form(self):
        lam, var, mu, jitter = 0.5, 0.25, 2.0, 1e-8
        model = one_ref_model(mu1=mu, var1=var, lam=lam, jitter=jitter)
        pred = kmp_predict(model, model.refs.inputs[0])
        assert pred.mean[0] == pytest.approx(mu / (1.0 + lam * var), rel=1e-12)
        assert pred.epistemic == pytest.approx(1.0 - 1.0 / (1.0 + jitter), abs=1e-12)

    def test_epistemic_interpolates_at_refs(self, small_model):
        for s in small_model.refs.inputs[:5]:
            assert epistemic(small_model, s) <= 1e-6

    def test_far_query(self, small_model):
        s_far = np.array([50.0, -60.0])
        k_row = small_model.kernel_row(s_far)
        assert k_row.max() < 1e-12
        pred = kmp_predict(small_model, s_far)
        assert np.linalg.norm(pred.mean) <= 1e-9
        assert pred.epistemic == pytest.approx(1.0, abs=1e-9)

    def test_rejects_bad_queries(self, small_model):
        with pytest.raises(DataError):
            kmp_predict(small_model, np.array([1.0]))
        with pytest.raises(DataError):
            kmp_predict(small_model, np.array([np.nan, 0.0]))

    def test_epistemic_range(self, small_model):
        rng = np.random.default_rng(4)
        for s in rng.uniform(-3, 3, size=(200, 2)):
            sig = epistemic(small_model, s)
            assert -1e-9 <= sig <= 1.0 + 1e-9

    def test_covariance_symmetric_near_psd(self, small_model):
        rng = np.random.default_rng(5)
        for s in rng.uniform(-2, 2, size=(50, 2)):
            pred = kmp_predict(small_model, s)
            assert np.abs(pred.covariance - pred.covariance.T).max() < 1e-9
            eigs = np.linalg.eigvalsh(pred.covariance)
            assert eigs.min() >= -1e-8 * np.linalg.norm(pred.covariance)

    def test_permutation_equivariance(self):
        refs = random_reference_set(n_refs=15, seed=9)
        hyper = KmpHyperparams(lam=0.5, lengths=np.array([0.6, 0.8]))
        model = kmp_fit(refs, hyper)
        perm = np.random.default_rng(0).permutation(refs.size)
        shuffled = ReferenceSet(
            inputs=refs.inputs[perm], means=refs.means[perm],
            covariances=refs.covariances[perm], dims=refs.dims,
        )
        model_p = kmp_fit(shuffled, hyper)
        rng = np.random.default_rng(1)
        for s in rng.uniform(-1, 1, size=(20, 2)):
            a, b = kmp_predict(model, s), kmp_predict(model_p, s)
            np.testing.assert_allclose(a.mean, b.mean, atol=1e-10)
            np.testing.assert_allclose(a.covariance, b.covariance, atol=1e-8)
            assert a.epistemic == pytest.approx(b.epistemic, abs=1e-10)


class TestDecomposition:
    def test_scalar_identity(self, small_model):
        # Unscaled covariance trace splits into epistemic + aleatoric parts.
        rng = np.random.default_rng(6)
        o = small_model.dims.output
        lam, n = small_model.hyper.lam, small_model.n_refs
        for s in rng.uniform(-2, 2, size=(50, 2)):
            pred = kmp_predict(small_model, s)
            lhs = (lam / n) * np.trace(pred.covariance) / o
            rhs = pred.epistemic + np.trace(pred.aleatoric) / o
            assert abs(lhs - rhs) <= 1e-6 * (1.0 + pred.epistemic)

    def test_direct_aleatoric_matches_identity(self):
        refs = random_reference_set(n_refs=14, seed=12)
        model = kmp_fit(refs, KmpHyperparams(lam=0.5, lengths=np.array([0.7, 0.9])))
        rng = np.random.default_rng(7)
        for s in rng.uniform(-1.5, 1.5, size=(10, 2)):
            pred = kmp_predict(model, s)
            direct = aleatoric_direct(model, s)
            err = np.linalg.norm(direct - pred.aleatoric)
            assert err <= 1e-6


class TestGradient:
    def test_vanishes_at_isolated_reference(self):
        refs = random_reference_set(n_refs=6, seed=3, spread=4.0)
        model = kmp_fit(refs, KmpHyperparams(lam=0.5, lengths=np.array([0.3, 0.3])))
        grad = epistemic_gradient(model, refs.inputs[0])
        assert np.abs(grad).max() <= 1e-6

    def test_one_reference_closed_form(self):
        length, jitter, d = 0.7, 1e-8, 0.25
        model = one_ref_model(length=length, jitter=jitter)
        s1 = model.refs.inputs[0, 0]
        grad = epistemic_gradient(model, np.array([s1 + d]))
        expected = (2 * d / length**2) * np.exp(-(d / length) ** 2) / (1.0 + jitter)
        assert grad[0] == pytest.approx(expected, rel=1e-9)

    def test_matches_finite_differences(self, small_model):
        rng = np.random.default_rng(8)
        h = 1e-5
        worst = 0.0
        for s in rng.uniform(-1.5, 1.5, size=(50, 2)):
            sig, grad = epistemic_with_gradient(small_model, s)
            fd = np.empty_like(grad)
            for i in range(2):
                e = np.zeros(2)
                e[i] = h
                fd[i] = (epistemic(small_model, s + e) - epistemic(small_model, s - e)) / (2 * h)
            scale = max(np.linalg.norm(fd), 1e-8)
            worst = max(worst, np.linalg.norm(grad - fd) / scale)
        assert worst <= 1e-4


class TestSerialization:
    def test_roundtrip_rebuilds_factorizations(self, small_model):
        doc = kmp_to_dict(small_model)
        back = kmp_from_dict(doc)
        rng = np.random.default_rng(10)
        for s in rng.uniform(-1, 1, size=(10, 2)):
            a, b = kmp_predict(small_model, s), kmp_predict(back, s)
            np.testing.assert_array_equal(a.mean, b.mean)
            assert a.epistemic == b.epistemic
