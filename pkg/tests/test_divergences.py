import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from debiasable.costs import debias
from debiasable.divergences import (
    CSV_COLUMNS,
    DivergenceReport,
    debiased_uot,
    mmd_embedding_check,
    mmd_squared,
    negdef_iff_mmd_nonneg,
    sinkhorn_divergence,
)
from debiasable.instances import pairwise_power, squared_distances
from debiasable.measures import DiscreteMeasure
from debiasable.solvers import ot_infinity, sinkhorn_symmetric

C41 = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
MU41 = np.array([0.5, 0.5, 0.0])
NU41 = np.array([0.0, 0.0, 1.0])
seeds = st.integers(0, 2**32 - 1)


def cloud(seed, n=6, d=2):
    rng = np.random.default_rng(seed)
    return squared_distances(rng.random((n, d))), rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))


class TestReport:
    def test_identity(self):
        r = DivergenceReport("entropic", 1.0, 0.7, 0.3, 0.1)
        assert r.debiased == 0.7 - 0.15 - 0.05

    def test_csv_row(self):
        r = DivergenceReport("uot", 0.5, 1 / 3, 0.1, 0.2, rho=2.0, tol=1e-10, seed=4)
        text = r.to_csv()
        assert "\r" not in text
        rows = list(csv.reader(io.StringIO(text)))
        assert tuple(rows[0]) == CSV_COLUMNS
        assert float(rows[1][3]) == 1 / 3  # lossless
        assert rows[1][8] == "4"

    def test_json_inf_epsilon(self):
        r = mmd_squared(C41, MU41, NU41)
        data = json.loads(json.dumps(r.to_json()))
        assert data["epsilon"] == "inf" and data["kind"] == "mmd"

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            DivergenceReport("other", 1.0, 0, 0, 0)


class TestSinkhornDivergence:
    def test_equal_measures(self):
        c, a, _ = cloud(0)
        assert abs(sinkhorn_divergence(c, a, a, 0.5).debiased) <= 2e-9

    def test_counterexample(self):
        r = sinkhorn_divergence(C41, MU41, NU41, 1.0)
        assert abs(r.raw_xy) <= 1e-9
        assert r.debiased < -1e-3
        assert r.debiased == pytest.approx(-0.5 * sinkhorn_symmetric(C41, MU41, 1.0).primal_value, abs=1e-9)

    def test_random_clouds_nonnegative(self):
        for seed in range(100):
            c, a, b = cloud(seed)
            for eps in (0.1, 1.0):
                assert sinkhorn_divergence(c, a, b, eps).debiased >= -1e-8

    @settings(max_examples=20, deadline=None)
    @given(seeds, st.sampled_from([0.2, 1.0]))
    def test_symmetry(self, seed, eps):
        c, a, b = cloud(seed)
        assert sinkhorn_divergence(c, a, b, eps).debiased == pytest.approx(
            sinkhorn_divergence(c, b, a, eps).debiased, abs=2e-9
        )

    @settings(max_examples=20, deadline=None)
    @given(seeds, st.sampled_from([0.3, 1.0, 5.0]))
    def test_dirac_reduction(self, seed, eps):
        rng = np.random.default_rng(seed)
        c = squared_distances(rng.random((4, 2))) + np.diag(rng.random(4))
        i, j = rng.choice(4, 2, replace=False)
        r = sinkhorn_divergence(c, np.eye(4)[i], np.eye(4)[j], eps)
        assert r.debiased == pytest.approx(debias(c).entries[i, j], abs=2e-9)

    def test_large_epsilon_limit(self):
        c, a, b = cloud(1)
        r = sinkhorn_divergence(c, a, b, 1e4)
        assert r.raw_xy == pytest.approx(ot_infinity(c, a, b), abs=1e-2)
        assert r.debiased == pytest.approx(mmd_squared(c, a, b).debiased, abs=3e-2)

    def test_exact_epsilon_zero(self):
        x = np.random.default_rng(2).random(4)
        y = np.random.default_rng(3).random(4)
        pts = np.concatenate([x, y])
        c = squared_distances(pts)
        mu = DiscreteMeasure(np.r_[np.full(4, 0.25), np.zeros(4)], pts)
        nu = DiscreteMeasure(np.r_[np.zeros(4), np.full(4, 0.25)], pts)
        r = sinkhorn_divergence(c, mu, nu, 0.0)
        assert r.kind == "eps0"
        assert r.self_xx == 0.0 and r.self_yy == 0.0
        assert r.debiased >= -1e-12


class TestDebiasedUOT:
    @pytest.mark.parametrize("mass", [0.3, 1.0, 2.0])
    def test_equal_measures(self, mass):
        c, a, _ = cloud(3)
        assert abs(debiased_uot(c, mass * a, mass * a, 0.5, 1.0).debiased) <= 2e-9

    def test_negative_definite_random(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            c = squared_distances(rng.random((5, 2)))
            a = rng.dirichlet(np.ones(5)) * rng.uniform(0.5, 2)
            b = rng.dirichlet(np.ones(5)) * rng.uniform(0.5, 2)
            assert debiased_uot(c, a, b, 0.5, 1.0).debiased >= -1e-8

    def test_large_rho_approaches_counterexample(self):
        bal = sinkhorn_divergence(C41, MU41, NU41, 1.0).debiased
        assert debiased_uot(C41, MU41, NU41, 1.0, 1e6).debiased == pytest.approx(bal, abs=1e-3)

    @settings(max_examples=10, deadline=None)
    @given(seeds)
    def test_symmetry(self, seed):
        c, a, b = cloud(seed, n=4)
        r1, r2 = debiased_uot(c, a, 2 * b, 0.5, 1.0), debiased_uot(c, 2 * b, a, 0.5, 1.0)
        assert r1.debiased == pytest.approx(r2.debiased, abs=2e-9)


class TestMMD:
    def test_equal(self):
        c, a, _ = cloud(5)
        assert mmd_squared(c, a, a).debiased == 0.0

    def test_two_diracs(self):
        c = squared_distances(np.array([0.0, 1.5]))
        assert mmd_squared(c, [1.0, 0.0], [0.0, 1.0]).debiased == pytest.approx(c[0, 1])

    @settings(max_examples=50, deadline=None)
    @given(seeds)
    def test_embedding_form(self, seed):
        rng = np.random.default_rng(seed)
        c = pairwise_power(rng.random(6), p=1)
        a, b = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6))
        r = mmd_embedding_check(c, a, b, seed=seed)
        assert r.mmd >= 0.0
        assert r.mmd == pytest.approx(r.embedding_form, abs=1e-9)
        assert r.psi_at_midpoint == pytest.approx(r.ot_infinity, abs=1e-9)
        assert r.min_perturbed >= r.psi_at_midpoint

    def test_embedding_form_with_offsets(self):
        rng = np.random.default_rng(6)
        d = rng.random(5)
        c = squared_distances(rng.random((5, 3))) + d[:, None] + d[None, :]
        a, b = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
        r = mmd_embedding_check(c, a, b)
        assert r.psi_at_midpoint == pytest.approx(r.ot_infinity, abs=1e-9)


class TestNegDefEquivalence:
    def test_squared_distance(self):
        c = squared_distances(np.random.default_rng(7).random((6, 2)))
        cert = negdef_iff_mmd_nonneg(c, 500, seed=1)
        assert cert.negative_definite and cert.min_mmd >= -1e-10 and cert.trials == 500

    def test_cubic_counterexample(self):
        c = pairwise_power(np.array([0.0, 1.0, 2.0, 5.0]), p=3)
        cert = negdef_iff_mmd_nonneg(c, 10, seed=1)
        assert not cert.negative_definite
        mu, nu, value = cert.counterexample
        assert mu.is_probability() and nu.is_probability()
        assert value < 0 and value == mmd_squared(c, mu, nu).debiased

    def test_zero_cost(self):
        cert = negdef_iff_mmd_nonneg(np.zeros((4, 4)), 50)
        assert cert.negative_definite and cert.min_mmd == 0.0
