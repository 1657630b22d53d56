"""The thirteen acceptance criteria as callable checks.

Each check takes a seed, derives its generator from ``(seed, criterion name)``
and returns a :class:`CriterionResult` listing every named assertion.  The
test suite and the ``suite`` subcommand both run these functions.
"""

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np

from . import costs
from .decomposition import (
    UniformGrid,
    barycenter_decompose,
    entropic_interpolation,
    gaussian_identity_check,
    midpoint_eta,
    ot_infrep_check,
    saddle_value_check,
)
from .divergences import negdef_iff_mmd_nonneg, sinkhorn_divergence
from .instances import pairwise_power, random_dyadic_debiasable, rng_for, squared_distances
from .kernels import embed_negative_definite, gaussian_features_mc
from .measures import (
    DiscreteMeasure,
    glue,
    kl_chain_check,
    kl_decomp2_check,
    kl_three_decomposition,
    random_coupling_with_pair_marginals,
)
from .solvers import eot_scalar_oracle, exact_ot_bruteforce, sinkhorn, sinkhorn_symmetric

COUNTEREXAMPLE_COST = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
COUNTEREXAMPLE_MU = np.array([0.5, 0.5, 0.0])
COUNTEREXAMPLE_NU = np.array([0.0, 0.0, 1.0])


@dataclass
class Assertion:
    name: str
    value: float
    bound: float
    relation: str
    passed: bool

    def describe(self):
        return f"{self.name}: {self.value:.6g} {self.relation} {self.bound:.6g}"


@dataclass
class CriterionResult:
    number: int
    name: str
    assertions: List[Assertion] = field(default_factory=list)
    detail: Dict[str, object] = field(default_factory=dict)
    runtime: float = 0.0
    budget: float = np.inf
    error: str = ""

    @property
    def passed(self):
        return not self.error and self.runtime < self.budget and all(a.passed for a in self.assertions)

    @property
    def failures(self):
        out = [a.describe() for a in self.assertions if not a.passed]
        if self.error:
            out.append(f"error: {self.error}")
        if self.runtime >= self.budget:
            out.append(f"runtime: {self.runtime:.2f}s >= {self.budget:g}s")
        return out

    def summary_line(self):
        status = "PASS" if self.passed else "FAIL"
        tail = "" if self.passed else " | " + "; ".join(self.failures)
        return f"[{status}] {self.number:2d} {self.name} ({self.runtime:.2f}s){tail}"

    def to_json(self):
        return {
            "number": self.number,
            "name": self.name,
            "passed": self.passed,
            "assertions": [a.__dict__ for a in self.assertions],
            "detail": self.detail,
            "error": self.error,
        }


class _Checker:
    def __init__(self, result):
        self.result = result

    def le(self, name, value, bound):
        value = float(value)
        self.result.assertions.append(Assertion(name, value, bound, "<=", bool(value <= bound)))

    def ge(self, name, value, bound):
        value = float(value)
        self.result.assertions.append(Assertion(name, value, bound, ">=", bool(value >= bound)))

    def lt(self, name, value, bound):
        value = float(value)
        self.result.assertions.append(Assertion(name, value, bound, "<", bool(value < bound)))


def _uniform_1d_pair(rng, k):
    x = np.r_[rng.random(k), rng.random(k)]
    mu = DiscreteMeasure(np.r_[np.full(k, 1 / k), np.zeros(k)], x)
    nu = DiscreteMeasure(np.r_[np.zeros(k), np.full(k, 1 / k)], x)
    return x, mu, nu


def counterexample(chk, rng):
    r = sinkhorn_divergence(COUNTEREXAMPLE_COST, COUNTEREXAMPLE_MU, COUNTEREXAMPLE_NU, 1.0)
    half_self = -0.5 * sinkhorn_symmetric(COUNTEREXAMPLE_COST, COUNTEREXAMPLE_MU, 1.0).primal_value
    chk.le("abs_ot_mu_nu", abs(r.raw_xy), 1e-9)
    chk.le("abs_S_minus_half_self", abs(r.debiased - half_self), 2e-9)
    chk.lt("S_eps", r.debiased, -1e-3)
    return {"raw_xy": r.raw_xy, "self_xx": r.self_xx, "debiased": r.debiased}


def gaussian_identity(chk, rng):
    worst = 0.0
    for d in (1, 2):
        for eps in (0.25, 1.0):
            for _ in range(5):
                x, y = rng.random(d), rng.random(d)
                worst = max(worst, gaussian_identity_check(x, y, eps).relative_error)
    chk.le("max_relative_error", worst, 1e-6)
    return {"max_relative_error": worst, "cases": 20}


def decomposition_equality(chk, rng):
    gaps, iters, flags, mono = [], [], 0, 0.0
    for _ in range(20):
        n, nz = int(rng.integers(2, 6)), int(rng.integers(2, 13))
        eps = float(rng.choice([0.5, 1.0]))
        psi = 2 * rng.random((n, nz))
        lam, mu, nu = rng.dirichlet(np.ones(nz)), rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
        sol = barycenter_decompose(psi, lam, mu, nu, eps)
        gaps.append(sol.gap)
        iters.append(sol.iterations)
        flags += bool(sol.flags)
        mono = max(mono, float(np.max(np.diff(sol.value_history), initial=-np.inf)))
    chk.le("max_relative_gap", max(gaps), 1e-6)
    return {"max_relative_gap": max(gaps), "max_iterations": max(iters), "flagged": flags,
            "max_objective_increase": mono}


def midpoint_gaussian(chk, rng):
    eps, x, y = 1.0, 0.0, 1.0
    grid = UniformGrid.around(np.array([[x], [y]]), eps)
    psi = 2 * squared_distances(np.array([x, y]), grid.points)
    sol = barycenter_decompose(psi, grid.lebesgue_weights(), [1.0, 0.0], [0.0, 1.0], eps)
    eta = DiscreteMeasure(sol.eta.weights, grid.points)
    mean, std, target = eta.mean()[0], eta.std()[0], np.sqrt(eps / 8)
    chk.le("mean_deviation", abs(mean - 0.5 * (x + y)), 2 * grid.step)
    chk.le("std_deviation", abs(std - target), 0.05 * target + grid.step)
    return {"mean": mean, "std": std, "std_target": target, "step": grid.step}


def interpolation(chk, rng):
    detail = {}
    for r in entropic_interpolation(0.0, 2.0, 1.0, [0.25, 0.5, 0.75]):
        tag = f"t={r.t:g}"
        chk.le(f"{tag}_mean_deviation", r.mean_deviation, 2 * r.step)
        chk.le(f"{tag}_std_deviation", r.std_deviation, 0.05 * r.std_stated + r.step)
        detail[tag] = {"mean": float(r.mean[0]), "std": float(r.std[0]),
                       "std_target": r.std_stated, "std_gibbs": r.std_gibbs}
    return detail


MC_INSTANCES = (
    ("sqeuclidean_3pt", squared_distances(np.array([0.0, 0.2, -0.3])), 1.0),
    ("abs_4pt", pairwise_power(np.array([0.0, 0.02, -0.02, 0.04]), p=1), 0.5),
)


def monte_carlo(chk, rng):
    seed = int(rng.integers(2**32))
    detail = {"seed": seed}
    for label, c, eps in MC_INSTANCES:
        e = embed_negative_definite(c)
        k = np.exp(-c / eps)
        est = {n: gaussian_features_mc(e, eps, n, seed) for n in (10**4, 4 * 10**4, 16 * 10**4, 10**5)}
        ref = est[10**5]
        noisy = ref.stderr > 1e-12 * ref.estimate
        z = np.abs(ref.estimate - k)[noisy] / ref.stderr[noisy]
        chk.le(f"{label}_max_z", z.max(initial=0.0), 4.0)
        chk.le(f"{label}_deterministic_error", np.abs(ref.estimate - k)[~noisy].max(initial=0.0), 0.0)
        r1 = est[4 * 10**4].stderr[noisy] / est[10**4].stderr[noisy]
        r2 = est[16 * 10**4].stderr[noisy] / est[4 * 10**4].stderr[noisy]
        ratios = np.r_[r1, r2]
        chk.ge(f"{label}_se_ratio_min", ratios.min(), 0.4)
        chk.le(f"{label}_se_ratio_max", ratios.max(), 0.6)
        detail[label] = {"max_z": float(z.max(initial=0.0)), "ratio_min": float(ratios.min()),
                         "ratio_max": float(ratios.max())}
    return detail


def saddle_value(chk, rng):
    gaps, resid = [], []
    for _ in range(20):
        c = squared_distances(rng.random((5, 2)))
        eps = float(rng.choice([0.5, 1.0]))
        r = saddle_value_check(c, rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5)), eps)
        gaps.append(r.value_gap / (1 + abs(r.ot_value)))
        resid.append(r.stationarity_residual)
    chk.le("max_relative_value_gap", max(gaps), 1e-6)
    chk.le("max_stationarity_residual", max(resid), 1e-10)
    return {"max_relative_value_gap": max(gaps), "max_stationarity_residual": max(resid)}


def epsilon_infinity(chk, rng):
    seed = int(rng.integers(2**32))
    detail = {}
    negdef = {
        "sqeuclidean_2d": squared_distances(rng.random((6, 2))),
        "abs_1d": pairwise_power(rng.random(6), p=1),
    }
    for label, c in negdef.items():
        cert = negdef_iff_mmd_nonneg(c, 500, seed)
        chk.ge(f"{label}_certified", float(cert.negative_definite), 1.0)
        chk.ge(f"{label}_min_mmd", cert.min_mmd, -1e-10)
        detail[label] = cert.min_mmd
    cert = negdef_iff_mmd_nonneg(pairwise_power(np.array([0.0, 1.0, 2.0, 5.0]), p=3), 0, seed)
    value = cert.counterexample[2] if cert.counterexample else np.inf
    chk.lt("cubic_counterexample_mmd", value, 0.0)
    detail["cubic_counterexample_mmd"] = value
    return detail


def _pair_with_shared_z(rng, nx, ny, nz):
    pi1 = rng.dirichlet(np.ones(nx * nz)).reshape(nx, nz)
    eta = pi1.sum(axis=0)
    pi2 = np.stack([rng.dirichlet(np.ones(ny)) for _ in range(nz)], axis=1) * eta[None, :]
    return pi1, pi2


def kl_lemmas(chk, rng, n_instances=100, n_gammas=100):
    worst = {"chain": 0.0, "three": 0.0, "decomp2": 0.0, "glued_correlation": 0.0, "violation": -np.inf}
    for _ in range(n_instances):
        al = rng.dirichlet(np.ones(9)).reshape(3, 3)
        be = rng.dirichlet(np.ones(9)).reshape(3, 3)
        worst["chain"] = max(worst["chain"], kl_chain_check(al, be).residual)
        gamma = rng.dirichlet(np.ones(27)).reshape(3, 3, 3)
        three = kl_three_decomposition(gamma, gamma.sum((1, 2)), gamma.sum((0, 2)), gamma.sum((0, 1)))
        worst["three"] = max(worst["three"], three.residual)
        pi1, pi2 = _pair_with_shared_z(rng, 3, 3, 3)
        lam = rng.dirichlet(np.ones(3))
        glued = glue(pi1, pi2).entries
        corr = kl_three_decomposition(glued, pi1.sum(1), pi2.sum(1), pi1.sum(0)).correlation_term
        worst["glued_correlation"] = max(worst["glued_correlation"], abs(corr))
        gammas = [random_coupling_with_pair_marginals(pi1, pi2, rng) for _ in range(n_gammas)]
        d2 = kl_decomp2_check(pi1, pi2, lam, gammas)
        worst["decomp2"] = max(worst["decomp2"], d2.residual)
        worst["violation"] = max(worst["violation"], d2.max_violation)
    chk.le("chain_rule_residual", worst["chain"], 1e-10)
    chk.le("three_decomposition_residual", worst["three"], 1e-10)
    chk.le("decomp2_residual", worst["decomp2"], 1e-10)
    chk.le("glued_correlation_term", worst["glued_correlation"], 1e-10)
    chk.le("decomp2_inequality_violation", worst["violation"], 1e-10)
    return worst


def inf_rep_roundtrip(chk, rng):
    mismatched, disagree, strict_count = 0, 0, 0
    for i in range(200):
        n = int(rng.integers(2, 7))
        c = random_dyadic_debiasable(rng, n, scale=int(rng.choice([4, 64])),
                                     inf_prob=0.2 if i % 2 else 0.0)
        rep = costs.constructive_inf_rep(c)
        back = costs.eval_inf_rep(rep).entries
        mismatched += not np.array_equal(back, c.entries)
        via_sets = costs.strict_via_minimizer_sets(rep).verdict
        direct = costs.is_debiasable(c, strict=True).verdict
        disagree += via_sets != direct
        strict_count += direct
    chk.le("roundtrip_mismatches", mismatched, 0)
    chk.le("strict_verdict_disagreements", disagree, 0)
    return {"instances": 200, "strict": strict_count}


def ot_infrep(chk, rng):
    eq_gap, worst_upper = 0.0, np.inf
    for _ in range(20):
        x, mu, nu = _uniform_1d_pair(rng, 4)
        z = (0.5 * (x[:, None] + x[None, :])).ravel()
        c, psi = squared_distances(x), 2 * squared_distances(x, z)
        plan = exact_ot_bruteforce(c, mu, nu).plan
        mid = midpoint_eta(x, x, plan)
        w = np.zeros(z.size)
        for wt, pt in zip(mid.weights, mid.coordinates[:, 0]):
            w[np.argmin(np.abs(z - pt))] += wt
        etas = [DiscreteMeasure(w, z)]
        etas += [DiscreteMeasure(rng.dirichlet(np.ones(z.size)), z) for _ in range(200)]
        r = ot_infrep_check(c, psi, mu, nu, etas)
        eq_gap = max(eq_gap, abs(r.uppers[0] - r.ot_value))
        worst_upper = min(worst_upper, min(r.uppers[1:]) - r.ot_value)
    chk.le("midpoint_equality_gap", eq_gap, 1e-10)
    chk.ge("min_upper_bound_gap", worst_upper, -1e-10)
    return {"midpoint_equality_gap": eq_gap, "min_upper_bound_gap": worst_upper}


def debias_lift(chk, rng):
    worst_s0 = np.inf
    for _ in range(30):
        c = random_dyadic_debiasable(rng, 6).entries
        k = int(rng.integers(1, 5))
        a, b = rng.choice(6, k, replace=False), rng.choice(6, k, replace=False)
        u = np.full(k, 1 / k)
        s0 = (exact_ot_bruteforce(c[np.ix_(a, b)], u, u).value
              - 0.5 * exact_ot_bruteforce(c[np.ix_(a, a)], u, u).value
              - 0.5 * exact_ot_bruteforce(c[np.ix_(b, b)], u, u).value)
        worst_s0 = min(worst_s0, s0)
    for _ in range(30):
        pts = rng.random(6)
        off = rng.random(6)
        c = pairwise_power(pts, p=float(rng.choice([1.0, 1.5, 2.0]))) + off[:, None] + off[None, :]
        mu = DiscreteMeasure(rng.dirichlet(np.ones(6)), pts)
        nu = DiscreteMeasure(rng.dirichlet(np.ones(6)), pts)
        worst_s0 = min(worst_s0, sinkhorn_divergence(c, mu, nu, 0.0).debiased)
    dirac = 0.0
    for _ in range(20):
        c = squared_distances(rng.random((4, 2))) + np.diag(rng.random(4))
        c0 = costs.debias(c).entries
        i, j = rng.choice(4, 2, replace=False)
        eps = float(rng.choice([0.5, 1.0]))
        s = sinkhorn_divergence(c, np.eye(4)[i], np.eye(4)[j], eps).debiased
        dirac = max(dirac, abs(s - c0[i, j]))
    chk.ge("min_S0", worst_s0, -1e-12)
    chk.le("dirac_reduction_error", dirac, 2e-9)
    return {"min_S0": worst_s0, "dirac_reduction_error": dirac}


def solver_consistency(chk, rng):
    gap, oracle = 0.0, 0.0
    for _ in range(50):
        n = int(rng.integers(3, 7))
        c = squared_distances(rng.random((n, 2)))
        eps = float(rng.choice([0.1, 0.5, 1.0]))
        sol = sinkhorn(c, rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n)), eps)
        gap = max(gap, abs(sol.primal_value - sol.dual_value) / (1 + abs(sol.primal_value)))
        c2 = rng.random((2, 2))
        a, b = rng.dirichlet(np.ones(2)), rng.dirichlet(np.ones(2))
        eps2 = float(rng.choice([0.1, 0.5, 1.0]))
        v = sinkhorn(c2, a, b, eps2, tol=1e-12).primal_value
        oracle = max(oracle, abs(v - eot_scalar_oracle(c2, a, b, eps2)))
    chk.le("max_relative_duality_gap", gap, 1e-8)
    chk.le("max_golden_section_disagreement", oracle, 1e-6)
    return {"max_relative_duality_gap": gap, "max_golden_section_disagreement": oracle}


@dataclass(frozen=True)
class Criterion:
    number: int
    name: str
    func: Callable
    budget: float
    stochastic: bool = False


CRITERIA = (
    Criterion(1, "counterexample", counterexample, 1.0),
    Criterion(2, "gaussian-identity", gaussian_identity, 5.0),
    Criterion(3, "decomposition-equality", decomposition_equality, 30.0),
    Criterion(4, "midpoint-gaussian", midpoint_gaussian, 10.0),
    Criterion(5, "interpolation", interpolation, 20.0),
    Criterion(6, "monte-carlo-factorization", monte_carlo, 20.0, stochastic=True),
    Criterion(7, "saddle-value", saddle_value, 20.0),
    Criterion(8, "mmd-negdef-equivalence", epsilon_infinity, 5.0, stochastic=True),
    Criterion(9, "kl-lemmas", kl_lemmas, 10.0),
    Criterion(10, "inf-rep-roundtrip", inf_rep_roundtrip, 5.0),
    Criterion(11, "ot-inf-rep", ot_infrep, 5.0),
    Criterion(12, "debias-lift", debias_lift, 5.0),
    Criterion(13, "solver-consistency", solver_consistency, 10.0),
)


def run_criterion(crit, seed):
    result = CriterionResult(crit.number, crit.name, budget=crit.budget)
    start = time.perf_counter()
    try:
        result.detail = crit.func(_Checker(result), rng_for(seed, crit.name))
    except Exception as exc:  # a crash is reported as a failed criterion
        result.error = f"{type(exc).__name__}: {exc}"
    result.runtime = time.perf_counter() - start
    return result


def run_suite(name, seed):
    """``fast``: every criterion once; ``full``: stochastic ones over ten derived seeds."""
    if name not in ("fast", "full"):
        raise ValueError(f"unknown suite {name!r}")
    results = []
    for crit in CRITERIA:
        seeds = [seed] if name == "fast" or not crit.stochastic else [seed + k for k in range(10)]
        for s in seeds:
            results.append(run_criterion(crit, s))
    return results
