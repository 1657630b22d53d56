import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from debiasable.costs import CostMatrix, eval_inf_rep, is_debiasable
from debiasable.instances import pairwise_power, squared_distances
from debiasable.kernels import (
    Embedding,
    embed_negative_definite,
    gaussian_feature_samples,
    gaussian_features_mc,
    gibbs_kernel,
    is_negative_definite,
    is_psd,
    log_kernel_debias_check,
    lse_cost,
    mean_embedding_grams,
)

C41 = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
seeds = st.integers(0, 2**32 - 1)


def pairwise_distances(f):
    return np.sqrt(squared_distances(f)) if f.shape[1] else np.zeros((f.shape[0],) * 2)


class TestGibbs:
    def test_zero_cost(self):
        np.testing.assert_array_equal(gibbs_kernel(np.zeros((3, 3)), 0.7).entries, 1.0)

    def test_infinite_off_diagonal(self):
        c = np.full((3, 3), np.inf)
        np.fill_diagonal(c, 0.0)
        np.testing.assert_array_equal(gibbs_kernel(c, 1.0).entries, np.eye(3))

    def test_counterexample_entries(self):
        k = gibbs_kernel(C41, 1.0).entries
        assert set(np.unique(k)) == {np.exp(-1.0), 1.0}
        assert k[0, 1] == np.exp(-1.0)

    def test_bad_epsilon(self):
        with pytest.raises(ValueError):
            gibbs_kernel(C41, 0.0)


class TestPsd:
    def test_gaussian_kernel(self):
        x = np.random.default_rng(0).random((6, 2))
        assert is_psd(gibbs_kernel(squared_distances(x), 1.0)).verdict

    def test_identity(self):
        cert = is_psd(np.eye(4))
        assert cert.verdict and cert.min_eigenvalue == pytest.approx(1.0)

    def test_counterexample_kernel_recorded(self):
        # exp(-C) has a 2x2 block [[1, e^-1], [e^-1, 1]] with a coupled third row of ones
        cert = is_psd(gibbs_kernel(C41, 1.0))
        expected = np.linalg.eigvalsh(np.exp(-C41))[0]
        assert cert.min_eigenvalue == pytest.approx(expected)
        assert cert.verdict == (expected >= -1e-9)


class TestNegativeDefinite:
    def test_squared_distances(self):
        x = np.random.default_rng(1).random((8, 3))
        assert is_negative_definite(squared_distances(x)).verdict

    @pytest.mark.parametrize("p", [0.5, 1.0, 2.0])
    def test_powers(self, p):
        x = np.random.default_rng(2).random(9)
        assert is_negative_definite(pairwise_power(x, p=p)).verdict

    def test_cubic_counterexample(self):
        c = pairwise_power(np.array([0.0, 1.0, 2.0, 5.0]), p=3)
        cert = is_negative_definite(c)
        assert not cert.verdict
        a = cert.worst_vector
        assert abs(a.sum()) <= 1e-12
        assert a @ c @ a == pytest.approx(cert.quadratic_value)
        assert cert.quadratic_value > 1.0

    def test_infinite_rejected(self):
        with pytest.raises(ValueError):
            is_negative_definite([[0.0, np.inf], [np.inf, 0.0]])

    @settings(max_examples=50, deadline=None)
    @given(seeds)
    def test_bridge_to_psd(self, seed):
        rng = np.random.default_rng(seed)
        c = squared_distances(rng.random((6, 2))) + np.repeat(rng.random(6)[:, None], 6, 1)
        c = c + c.T
        assert is_negative_definite(c).verdict
        for eps in (0.1, 1.0, 10.0):
            assert is_psd(gibbs_kernel(c, eps)).verdict


class TestEmbedding:
    def test_rigid_motion(self):
        x = np.random.default_rng(3).random((5, 3))
        e = embed_negative_definite(squared_distances(x))
        np.testing.assert_allclose(
            pairwise_distances(e.features), np.sqrt(squared_distances(x)), atol=1e-9
        )

    def test_one_point(self):
        e = embed_negative_definite([[2.5]])
        assert e.rank == 0 and e.offsets[0] == 1.25
        np.testing.assert_array_equal(e.reconstruct(), [[2.5]])

    def test_absolute_distance(self):
        c = pairwise_power(np.random.default_rng(4).random(5), p=1)
        e = embed_negative_definite(c)
        assert np.abs(e.reconstruct() - c).max() <= 1e-8

    def test_with_offsets(self):
        rng = np.random.default_rng(5)
        d = rng.random(4)
        c = squared_distances(rng.random((4, 2))) + d[:, None] + d[None, :]
        e = embed_negative_definite(c)
        np.testing.assert_allclose(e.offsets, d, atol=1e-15)
        assert np.abs(e.reconstruct() - c).max() <= 1e-8

    def test_rejects_non_negative_definite(self):
        with pytest.raises(ValueError, match="not negative definite"):
            embed_negative_definite(pairwise_power(np.array([0.0, 1.0, 2.0, 5.0]), p=3))


def mc_z_scores(est, exact):
    se = est.stderr
    random_entries = se > 1e-12 * np.abs(est.estimate)
    assert np.all(np.abs(est.estimate - exact)[~random_entries] <= 1e-12 * exact[~random_entries])
    return np.abs(est.estimate - exact)[random_entries] / se[random_entries]


class TestGaussianFeatures:
    def test_rank_zero_exact(self):
        e = Embedding(np.zeros((3, 0)), np.array([0.0, 0.5, 1.0]))
        r = gaussian_features_mc(e, 0.5, 10, seed=0)
        np.testing.assert_allclose(r.estimate, np.exp(-(e.offsets[:, None] + e.offsets) / 0.5))
        np.testing.assert_array_equal(r.stderr, 0.0)

    def test_squared_distance(self):
        c = squared_distances(np.array([0.0, 0.2, -0.3]))
        r = gaussian_features_mc(embed_negative_definite(c), 1.0, 10**5, seed=11)
        assert mc_z_scores(r, np.exp(-c)).max() <= 4.0

    def test_absolute_distance(self):
        c = pairwise_power(np.array([0.0, 0.1, -0.1, 0.2]), p=1)
        r = gaussian_features_mc(embed_negative_definite(c), 0.5, 2 * 10**5, seed=12)
        assert mc_z_scores(r, np.exp(-c / 0.5)).max() <= 4.0

    def test_block_stream_reproducible(self):
        e = embed_negative_definite(squared_distances(np.array([0.0, 0.3, 0.5])))
        a = gaussian_features_mc(e, 1.0, 20000, seed=3)
        b = gaussian_features_mc(e, 1.0, 20000, seed=3)
        np.testing.assert_array_equal(a.estimate, b.estimate)
        # the stacked samples reproduce the same mean
        lr = gaussian_feature_samples(e, 1.0, 20000, seed=3)
        direct = np.exp(lr[:, None, :] + lr[None, :, :]).mean(axis=2)
        np.testing.assert_allclose(direct, a.estimate, rtol=1e-12)

    def test_zero_samples(self):
        e = Embedding(np.zeros((1, 0)), np.zeros(1))
        with pytest.raises(ValueError):
            gaussian_features_mc(e, 1.0, 0, seed=0)


class TestLseCost:
    def test_single_atom(self):
        psi = np.random.default_rng(6).random((4, 3))
        lam = np.array([0.0, 1.0, 0.0])
        np.testing.assert_allclose(
            lse_cost(psi, lam, 0.3).entries, psi[:, 1][:, None] + psi[:, 1][None, :], atol=1e-14
        )

    @settings(max_examples=100, deadline=None)
    @given(seeds, st.sampled_from([0.1, 1.0, 5.0]))
    def test_dominates_inf_rep_and_debiasable(self, seed, eps):
        rng = np.random.default_rng(seed)
        psi = rng.normal(size=(5, 8))
        lam = rng.dirichlet(np.ones(8))
        c = lse_cost(psi, lam, eps)
        assert np.all(c.entries >= eval_inf_rep(psi).entries - 1e-12)
        assert is_debiasable(c, tol=1e-10).verdict

    def test_lebesgue_grid(self):
        eps, step = 1.0, 1e-3
        grid = np.arange(-10, 11, step)
        x = np.array([0.0, 0.5, 1.3])
        psi = 2 * squared_distances(x, grid)
        c = lse_cost(psi, np.full(grid.size, step), eps).entries
        expected = squared_distances(x) - eps * np.log(np.sqrt(np.pi * eps / 4))
        np.testing.assert_allclose(c, expected, atol=1e-9)

    def test_empty_pair_infinite(self):
        psi = np.array([[0.0, np.inf], [np.inf, 0.0]])
        c = lse_cost(psi, [0.5, 0.5], 1.0).entries
        assert np.isposinf(c[0, 1]) and np.isfinite(c[0, 0])


class TestGrams:
    def test_equal_weights(self):
        k = gibbs_kernel(squared_distances(np.random.default_rng(7).random((4, 2))), 1.0)
        a = np.array([0.1, 0.2, 0.3, 0.4])
        g = mean_embedding_grams(k, a, a)
        assert g.inner_ab == g.norm2_a == g.norm2_b

    def test_diracs(self):
        k = np.arange(9.0).reshape(3, 3)
        k = k + k.T
        g = mean_embedding_grams(k, np.eye(3)[0], np.eye(3)[2])
        assert (g.norm2_a, g.norm2_b, g.inner_ab) == (k[0, 0], k[2, 2], k[0, 2])

    @settings(max_examples=100, deadline=None)
    @given(seeds)
    def test_cauchy_schwarz(self, seed):
        rng = np.random.default_rng(seed)
        k = gibbs_kernel(squared_distances(rng.random((5, 2))), 0.5)
        g = mean_embedding_grams(k, rng.random(5), rng.random(5))
        assert g.inner_ab**2 <= g.norm2_a * g.norm2_b + 1e-12


class TestLogKernel:
    def test_gaussian_kernel(self):
        k = gibbs_kernel(squared_distances(np.random.default_rng(8).random((5, 2))), 1.0)
        cert = log_kernel_debias_check(k, 1.0)
        assert cert.verdict and cert.agree

    def test_injected_violation(self):
        k = np.eye(3) * 0.5 + 0.1
        k[0, 1] = k[1, 0] = 0.9
        cert = log_kernel_debias_check(k, 1.0)
        assert not cert.verdict and cert.agree and cert.witness == (0, 1)

    @settings(max_examples=200, deadline=None)
    @given(seeds, st.booleans())
    def test_random_psd_always_debiasable(self, seed, strict):
        rng = np.random.default_rng(seed)
        v = np.abs(rng.normal(size=(5, 3)))  # nonnegative Gram entries
        k = v @ v.T
        cert = log_kernel_debias_check(k, 0.7, strict=strict)
        assert cert.agree
        if not strict:
            assert cert.verdict

    def test_zero_entries(self):
        k = np.diag([1.0, 0.0, 2.0])
        for strict in (False, True):
            assert log_kernel_debias_check(k, 1.0, strict=strict).agree
