import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from debiasable.costs import (
    CostMatrix,
    InfRepresentation,
    NotDebiasableError,
    constructive_inf_rep,
    debias,
    eval_inf_rep,
    inf_convolve,
    inf_costs,
    is_debiasable,
    minimizer_sets,
    one_step_tilde,
    shift_by_g,
    strict_via_minimizer_sets,
    sum_costs,
)
from debiasable.instances import random_dyadic_debiasable, squared_distances

C41 = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
seeds = st.integers(0, 2**32 - 1)


def no_nan(c):
    return not np.isnan(c.entries).any()


class TestCostMatrix:
    def test_rejects_neg_inf(self):
        with pytest.raises(ValueError):
            CostMatrix([[0.0, -np.inf], [-np.inf, 0.0]])

    def test_symmetric_flag_checked(self):
        with pytest.raises(ValueError):
            CostMatrix([[0.0, 1.0], [2.0, 0.0]], symmetric=True)

    def test_json_encodes_inf(self):
        c = CostMatrix([[0.0, np.inf], [np.inf, 1.5]], symmetric=True)
        data = json.loads(json.dumps(c.to_json()))
        assert data["entries"][0][1] == "inf"
        back = CostMatrix.from_json(data)
        np.testing.assert_array_equal(back.entries, c.entries)
        assert back.symmetric


class TestDebias:
    def test_zero_diagonal(self):
        rng = np.random.default_rng(0)
        c = CostMatrix.from_array(rng.random((4, 4)) + np.eye(4))
        c = CostMatrix.from_array(c.entries + c.entries.T)
        np.testing.assert_array_equal(np.diag(debias(c).entries), 0.0)

    def test_counterexample_matrix_unchanged(self):
        np.testing.assert_array_equal(debias(C41).entries, C41)

    def test_squared_distance_unchanged(self):
        x = np.random.default_rng(1).random((3, 2))
        c = squared_distances(x)
        np.testing.assert_array_equal(debias(c).entries, c)

    def test_inf_minus_inf_is_inf(self):
        c = CostMatrix([[np.inf, np.inf], [np.inf, 0.0]], symmetric=True)
        c0 = debias(c).entries
        assert np.all(np.isposinf(c0[0])) and c0[1, 1] == 0.0

    def test_needs_symmetric(self):
        with pytest.raises(ValueError):
            debias([[0.0, 1.0], [2.0, 0.0]])


class TestIsDebiasable:
    def test_squared_distance(self):
        x = np.random.default_rng(2).random((5, 3))
        assert is_debiasable(squared_distances(x)).verdict

    def test_negative_gram(self):
        v = np.random.default_rng(3).normal(size=(4, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        c = CostMatrix.from_array(-(v @ v.T))
        # direct scan: c0 = |x - y|^2 / 2 for unit vectors
        c0 = -(v @ v.T) + 0.5 + 0.5
        assert np.all(c0 >= -1e-12)
        assert is_debiasable(c, tol=1e-12).verdict

    def test_injected_violation_witness(self):
        c = np.zeros((4, 4))
        c[1, 2] = c[2, 1] = -0.5
        cert = is_debiasable(c)
        assert not cert.verdict and cert.witness == (1, 2) and cert.value == -0.5

    def test_witness_lexicographic(self):
        c = np.zeros((3, 3))
        c[0, 2] = c[2, 0] = c[1, 2] = c[2, 1] = -1.0
        assert is_debiasable(c).witness == (0, 2)

    def test_strict(self):
        assert is_debiasable(squared_distances([0.0, 1.0, 3.0]), strict=True).verdict
        assert not is_debiasable(C41, strict=True).verdict


class TestInfRepresentation:
    def test_one_point(self):
        rep = constructive_inf_rep([[3.0]])
        assert np.isfinite(rep.psi).sum() == 1 and rep.psi[0, 0] == 1.5
        np.testing.assert_array_equal(eval_inf_rep(rep).entries, [[3.0]])

    def test_roundtrip_squared_distance(self):
        x = np.arange(4.0) / 4
        c = squared_distances(x)
        np.testing.assert_array_equal(eval_inf_rep(constructive_inf_rep(c)).entries, c)

    def test_roundtrip_counterexample(self):
        np.testing.assert_array_equal(eval_inf_rep(constructive_inf_rep(C41)).entries, C41)

    def test_rejects_non_debiasable(self):
        c = np.zeros((3, 3))
        c[0, 1] = c[1, 0] = -1.0
        with pytest.raises(NotDebiasableError) as err:
            constructive_inf_rep(c)
        assert err.value.witness == (0, 1)

    @settings(max_examples=200, deadline=None)
    @given(seeds, st.integers(1, 7), st.sampled_from([0.0, 0.3]))
    def test_roundtrip_exact(self, seed, n, inf_prob):
        c = random_dyadic_debiasable(np.random.default_rng(seed), n, inf_prob=inf_prob)
        back = eval_inf_rep(constructive_inf_rep(c))
        np.testing.assert_array_equal(back.entries, c.entries)

    @settings(max_examples=100, deadline=None)
    @given(seeds)
    def test_eval_output_debiasable(self, seed):
        rng = np.random.default_rng(seed)
        psi = rng.normal(size=(5, 7))
        psi[rng.random(psi.shape) < 0.3] = np.inf
        c = eval_inf_rep(psi)
        assert no_nan(c)
        assert is_debiasable(c, tol=0.0).verdict

    def test_metric_psi_bound(self):
        x = np.random.default_rng(4).random((5, 2))
        c = np.sqrt(squared_distances(x))
        out = eval_inf_rep(c).entries
        assert np.all(out <= 2 * c + 1e-15)
        assert np.all(out <= c + c.T)
        np.testing.assert_array_equal(np.diag(out), 0.0)

    def test_midpoint_grid_recovers_squared_distance(self):
        grid = np.arange(-8, 9) / 8.0
        x = grid[::2]  # every midpoint of x lies on the grid
        psi = 2 * squared_distances(x, grid)
        np.testing.assert_allclose(eval_inf_rep(psi).entries, squared_distances(x), atol=1e-15)

    def test_single_zero_column(self):
        np.testing.assert_array_equal(eval_inf_rep(np.zeros((3, 1))).entries, 0.0)

    def test_infinite_row_gives_infinite_row(self):
        psi = np.array([[0.0, 1.0], [np.inf, np.inf]])
        out = eval_inf_rep(psi).entries
        assert np.all(np.isposinf(out[1])) and out[0, 0] == 0.0


class TestMinimizerSets:
    def test_constructive_rep_of_strict_cost(self):
        c = squared_distances([0.0, 0.5, 2.0])
        assert strict_via_minimizer_sets(constructive_inf_rep(c)).verdict

    def test_shared_column_not_strict(self):
        psi = np.array([[0.0, 1.0], [0.0, 2.0], [5.0, 0.0]])
        cert = strict_via_minimizer_sets(psi)
        assert not cert.verdict and cert.witness == (0, 1)
        assert debias(eval_inf_rep(psi)).entries[0, 1] == 0.0

    def test_one_point_vacuous(self):
        assert strict_via_minimizer_sets(np.array([[1.0, 2.0]])).verdict

    def test_infinite_row_empty_set(self):
        assert minimizer_sets(np.array([[np.inf, np.inf]]))[0] == frozenset()

    @settings(max_examples=200, deadline=None)
    @given(seeds, st.integers(1, 6), st.sampled_from([0.0, 0.3]))
    def test_agrees_with_direct_scan(self, seed, n, inf_prob):
        rng = np.random.default_rng(seed)
        c = random_dyadic_debiasable(rng, n, scale=4, inf_prob=inf_prob)  # coarse grid hits c0 = 0
        rep = constructive_inf_rep(c)
        assert strict_via_minimizer_sets(rep).verdict == is_debiasable(c, strict=True, tol=1e-9).verdict


class TestCombinators:
    def random_debiasable(self, rng, n=5):
        psi = rng.normal(size=(n, 6))
        return eval_inf_rep(psi)

    def test_weighted_sum(self):
        rng = np.random.default_rng(5)
        a, b = squared_distances(rng.random((4, 2))), squared_distances(rng.random((4, 2)))
        assert is_debiasable(sum_costs([a, b], [1, 2]), tol=1e-12).verdict

    def test_negative_coefficient(self):
        with pytest.raises(ValueError):
            sum_costs([np.zeros((2, 2))], [-1.0])

    def test_zero_coefficient_on_inf(self):
        inf_c = np.full((2, 2), np.inf)
        out = sum_costs([np.eye(2), inf_c], [1.0, 0.0])
        np.testing.assert_array_equal(out.entries, np.eye(2))

    def test_empty_inf(self):
        with pytest.raises(ValueError):
            inf_costs([])

    @settings(max_examples=200, deadline=None)
    @given(seeds)
    def test_closure(self, seed):
        rng = np.random.default_rng(seed)
        a, b = self.random_debiasable(rng), self.random_debiasable(rng)
        f = CostMatrix.from_array(rng.normal(size=(5, 5)))
        outs = [
            sum_costs([a, b], rng.random(2)),
            inf_costs([a, b]),
            shift_by_g(a, rng.normal(size=5)),
            inf_convolve(a, f),
        ]
        for out in outs:
            assert no_nan(out)
            assert is_debiasable(out, tol=1e-12).verdict

    def test_inf_convolve_with_self(self):
        c = squared_distances(np.random.default_rng(6).random((4, 1)))
        out = inf_convolve(c, c).entries
        brute = np.array(
            [[min(c[u, i] + c[v, j] + c[u, v] for u in range(4) for v in range(4)) for j in range(4)]
             for i in range(4)]
        )
        np.testing.assert_allclose(out, brute, atol=1e-15)
        assert np.all(out <= c + 1e-15)
        assert is_debiasable(out, tol=1e-12).verdict


class TestOneStepTilde:
    def test_diagonal_preserved(self):
        c = squared_distances(np.random.default_rng(7).random((5, 2)))
        np.testing.assert_array_equal(np.diag(one_step_tilde(c).entries), np.diag(c))

    def test_counterexample_matrix(self):
        t = one_step_tilde(C41).entries
        brute = np.array([[min(C41[i, k] + C41[k, j] - C41[k, k] for k in range(3)) for j in range(3)]
                          for i in range(3)])
        np.testing.assert_array_equal(t, brute)
        assert np.all(t <= C41)
        np.testing.assert_array_equal(np.diag(t), np.diag(C41))

    def test_constant(self):
        np.testing.assert_array_equal(one_step_tilde(np.full((3, 3), 2.5)).entries, 2.5)

    @settings(max_examples=100, deadline=None)
    @given(seeds)
    def test_always_debiasable(self, seed):
        c = np.random.default_rng(seed).normal(size=(5, 5))
        t = one_step_tilde(CostMatrix.from_array(c + c.T))
        assert is_debiasable(t, tol=1e-12).verdict

    @settings(max_examples=100, deadline=None)
    @given(seeds, st.sampled_from([0.0, 0.3]))
    def test_sandwich_and_strictness(self, seed, inf_prob):
        c = random_dyadic_debiasable(np.random.default_rng(seed), 5, scale=4, inf_prob=inf_prob)
        t = one_step_tilde(c).entries
        d = np.diag(c.entries)
        assert np.all(d[:, None] / 2 + d[None, :] / 2 <= t)
        assert np.all(t <= c.entries)
        assert no_nan(one_step_tilde(c))
        if is_debiasable(t, strict=True).verdict:
            assert is_debiasable(c, strict=True).verdict
