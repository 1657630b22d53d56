"""Barycentric decomposition of entropic OT for log-sum-exp costs and the
identities built on it: Gaussian quadrature, entropic interpolation, the
unregularized inf-representation of OT, and the kernel saddle value."""

from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np

from .costs import as_cost, eval_inf_rep
from .kernels import (
    embed_negative_definite,
    gaussian_feature_samples,
    gaussian_features_mc,
    gibbs_kernel,
    is_psd,
    lse_cost,
    mean_embedding_grams,
)
from .measures import DiscreteMeasure, kl_divergence, weights_of
from .solvers import ConvergenceError, exact_ot_bruteforce, sinkhorn

INNER_TOL = 1e-12
MONOTONE_SLACK = 1e-12


@dataclass(frozen=True)
class UniformGrid:
    """Tensor grid ``lower + step * k`` covering ``[lower, upper]`` on each axis."""

    lower: tuple
    upper: tuple
    step: float

    def __post_init__(self):
        lo, hi = np.atleast_1d(self.lower).astype(float), np.atleast_1d(self.upper).astype(float)
        if lo.shape != hi.shape or np.any(hi <= lo) or not self.step > 0:
            raise ValueError("grid needs lower < upper per axis and a positive step")
        object.__setattr__(self, "lower", tuple(lo))
        object.__setattr__(self, "upper", tuple(hi))

    @property
    def dim(self):
        return len(self.lower)

    def axes(self):
        return [lo + self.step * np.arange(int(np.ceil((hi - lo) / self.step - 1e-9)) + 1)
                for lo, hi in zip(self.lower, self.upper)]

    @property
    def points(self):
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def cell_volume(self):
        return self.step**self.dim

    def lebesgue_weights(self):
        return np.full(self.points.shape[0], self.cell_volume)

    def covers(self, lo, hi):
        ax = self.axes()
        return all(a[0] <= l + 1e-12 and a[-1] >= h - 1e-12 for a, l, h in zip(ax, lo, hi))

    @classmethod
    def around(cls, pts, epsilon, step=None, width=5.0):
        """Grid over the bounding box of ``pts`` padded by ``width * sqrt(eps)``."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        pad = width * np.sqrt(epsilon)
        step = np.sqrt(epsilon) / 20 if step is None else step
        return cls(tuple(pts.min(axis=0) - pad), tuple(pts.max(axis=0) + pad), step)


@dataclass
class BarycenterSolution:
    eta: DiscreteMeasure
    value: float
    side_values: tuple
    kl_term: float
    iterations: int
    fixed_point_residual: float
    direct_value: float
    value_history: List[float] = field(default_factory=list)
    converged: bool = True
    lse_dominates: Optional[bool] = None  # c_{eps,lambda} >= inf-rep value, probability lambda only

    @property
    def gap(self):
        return abs(self.value - self.direct_value) / (1 + abs(self.direct_value))

    @property
    def flags(self):
        out = []
        if not self.converged:
            out.append("residual")
        if self.gap > 1e-6:
            out.append("gap")
        if self.lse_dominates is False:
            out.append("lse_domination")
        return out

    def to_json(self):
        return {
            "value_lhs": self.direct_value,
            "value_rhs": self.value,
            "gap": self.gap,
            "iterations": self.iterations,
            "residual": self.fixed_point_residual,
            "side_values": list(self.side_values),
            "kl_term": self.kl_term,
            "flags": self.flags,
        }


def _normalize_log(logw):
    m = np.max(logw)
    w = np.exp(logw - m)
    return w / w.sum()


def _log(w):
    with np.errstate(divide="ignore"):
        return np.log(w)


class _Sides(NamedTuple):
    first: object
    second: object
    kl: float
    value: float


def _solve_sides(psi_a, psi_b, a, b, eta, lam, eps, warm=None):
    g1 = g2 = None
    if warm is not None:
        g1, g2 = warm.first.g, warm.second.g
    s1 = sinkhorn(psi_a, a, eta, eps, INNER_TOL, init_g=g1)
    s2 = sinkhorn(psi_b, b, eta, eps, INNER_TOL, init_g=g2)
    kl = eps * kl_divergence(eta, lam)
    return _Sides(s1, s2, kl, s1.primal_value + s2.primal_value + kl)


def decomposition_objective(psi, lambda_weights, mu, nu, eta, epsilon, psi_nu=None):
    """``OT_psi(mu, eta) + OT_psi'(nu, eta) + eps KL(eta | lambda)`` for a given ``eta``."""
    psi_a = np.asarray(getattr(psi, "psi", psi), dtype=float)
    psi_b = psi_a if psi_nu is None else np.asarray(getattr(psi_nu, "psi", psi_nu), dtype=float)
    lam, e = weights_of(lambda_weights), weights_of(eta)
    return _solve_sides(psi_a, psi_b, weights_of(mu), weights_of(nu), e, lam, epsilon).value


def barycenter_decompose(psi, lambda_weights, mu, nu, epsilon, tol=1e-9, max_iter=500,
                         psi_nu=None, raise_on_failure=True, value_tol=1e-13, stall_residual=1e-4):
    """Minimize the barycentric objective over ``eta`` and compare with the direct value.

    Each step solves both side problems, forms the Gibbs update
    ``eta' ~ lambda exp(-(v + u) / eps)`` from the ``eta``-side potentials, and
    moves along the log-linear path towards ``eta'``; the step is halved until
    the objective does not increase, so recorded values are monotone.
    ``psi_nu`` gives a separate table for the ``nu`` side (time-scaled costs).

    Stops when the L1 gap between ``eta`` and its Gibbs update is below ``tol``,
    or when the objective decrease drops under ``value_tol * (1 + |J|)`` with
    that gap below ``stall_residual``: the objective is flat near the optimum,
    so inner-solver rounding bounds ``eta`` to roughly ``sqrt(value_tol)``.
    """
    psi_a = np.asarray(getattr(psi, "psi", psi), dtype=float)
    psi_b = psi_a if psi_nu is None else np.asarray(getattr(psi_nu, "psi", psi_nu), dtype=float)
    lam_full = weights_of(lambda_weights)
    a, b = weights_of(mu), weights_of(nu)
    eps = float(epsilon)
    if psi_a.shape[1] != lam_full.size or psi_b.shape[1] != lam_full.size:
        raise ValueError("psi tables and lambda must share the Z index")
    support = np.flatnonzero(lam_full > 0)
    if support.size == 0:
        raise ValueError("lambda has empty support")
    pa, pb, lam = psi_a[:, support], psi_b[:, support], lam_full[support]
    log_lam = np.log(lam)

    eta = lam / lam.sum()
    cur = _solve_sides(pa, pb, a, b, eta, lam, eps)
    history = [cur.value]
    theta = 1.0
    residual = np.inf
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        target_log = log_lam - (cur.first.g + cur.second.g) / eps
        target = _normalize_log(target_log)
        residual = float(np.abs(target - eta).sum())
        if residual <= tol:
            converged = True
            break
        log_eta = _log(eta)
        accepted = False
        for _ in range(40):
            mix = np.where(np.isneginf(log_eta), -np.inf, (1 - theta) * log_eta) + theta * target_log
            trial_eta = _normalize_log(mix)
            trial = _solve_sides(pa, pb, a, b, trial_eta, lam, eps, warm=cur)
            if trial.value <= cur.value + MONOTONE_SLACK:
                accepted = True
                break
            theta *= 0.5
        if not accepted:
            converged = residual <= stall_residual
            break
        drop = cur.value - trial.value
        eta, cur = trial_eta, trial
        history.append(cur.value)
        theta = min(1.0, 2 * theta)
        if drop <= value_tol * (1 + abs(cur.value)) and residual <= stall_residual:
            converged = True
            break
    c_lse = lse_cost(pa, lam, eps, pb).entries
    direct = sinkhorn(c_lse, a, b, eps, INNER_TOL).primal_value
    dominates = None
    if psi_nu is None and abs(lam_full.sum() - 1) <= 1e-12:
        dominates = bool(np.all(c_lse >= eval_inf_rep(pa).entries - 1e-12 * (1 + np.abs(c_lse))))
    full = np.zeros(lam_full.size)
    full[support] = eta
    sol = BarycenterSolution(
        DiscreteMeasure(full),
        cur.value,
        (cur.first.primal_value, cur.second.primal_value),
        cur.kl,
        it,
        residual,
        direct,
        history,
        converged,
        dominates,
    )
    if not converged and raise_on_failure:
        raise ConvergenceError(f"barycenter iteration stalled after {it} steps", residual)
    return sol


class GaussianIdentity(NamedTuple):
    lhs: float
    rhs: float
    relative_error: float
    quadrature_error_bound: float

    @property
    def ok(self):
        return self.relative_error <= self.quadrature_error_bound


def gaussian_identity_check(x, y, epsilon, grid=None, bound=1e-6):
    """Quadrature of ``exp(-(2|z-x|^2 + 2|z-y|^2) / eps)`` against its closed form."""
    x, y = np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(y, float))
    grid = UniformGrid.around(np.stack([x, y]), epsilon) if grid is None else grid
    pad = 5 * np.sqrt(epsilon)
    if grid.dim != x.size or not grid.covers(np.minimum(x, y) - pad, np.maximum(x, y) + pad):
        raise ValueError("grid must cover [min - 5 sqrt(eps), max + 5 sqrt(eps)] on every axis")
    z = grid.points
    expo = -(2 * ((z - x) ** 2).sum(axis=1) + 2 * ((z - y) ** 2).sum(axis=1)) / epsilon
    lhs = float(np.exp(expo).sum() * grid.cell_volume)
    rhs = float(np.exp(-((x - y) ** 2).sum() / epsilon) * (np.pi * epsilon / 4) ** (x.size / 2))
    return GaussianIdentity(lhs, rhs, abs(lhs - rhs) / rhs, bound)


class InterpolationRecord(NamedTuple):
    t: float
    eta: DiscreteMeasure
    mean: np.ndarray
    std: np.ndarray
    mean_target: np.ndarray
    std_stated: float  # sqrt(eps t (1 - t) / 4)
    std_gibbs: float  # sqrt(eps t (1 - t) / 2), the width of the exact Gibbs density
    step: float

    @property
    def mean_deviation(self):
        return float(np.max(np.abs(self.mean - self.mean_target)))

    @property
    def std_deviation(self):
        return float(np.max(np.abs(self.std - self.std_stated)))

    def mean_ok(self):
        return self.mean_deviation <= 2 * self.step

    def std_ok(self, target=None):
        target = self.std_stated if target is None else target
        return bool(np.all(np.abs(self.std - target) <= 0.05 * target + self.step))


def entropic_interpolation(x, y, epsilon, t_values, grid=None, tol=1e-9):
    """Optimal ``eta_t`` between Diracs for the costs ``|x - z|^2 / t`` and ``|y - z|^2 / (1 - t)``."""
    x, y = np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(y, float))
    grid = UniformGrid.around(np.stack([x, y]), epsilon) if grid is None else grid
    z = grid.points
    lam = grid.lebesgue_weights()
    dx = ((z - x) ** 2).sum(axis=1)[None, :]
    dy = ((z - y) ** 2).sum(axis=1)[None, :]
    out = []
    for t in t_values:
        if not 0 < t < 1:
            raise ValueError(f"t must lie in (0, 1), got {t}")
        sol = barycenter_decompose(dx / t, lam, [1.0], [1.0], epsilon, tol, psi_nu=dy / (1 - t))
        eta = DiscreteMeasure(sol.eta.weights, z)
        var = epsilon * t * (1 - t)
        out.append(InterpolationRecord(
            float(t), eta, eta.mean(), eta.std(), (1 - t) * x + t * y,
            float(np.sqrt(var / 4)), float(np.sqrt(var / 2)), grid.step,
        ))
    return out


def midpoint_eta(x, y, plan):
    """Push a plan between 1-D (or d-D) atoms forward by ``(x + y) / 2``."""
    x, y = np.atleast_2d(np.asarray(x, float).T).T, np.atleast_2d(np.asarray(y, float).T).T
    i, j = np.nonzero(plan > 0)
    return DiscreteMeasure(plan[i, j], 0.5 * (x[i] + y[j]))


class OTInfRepCheck(NamedTuple):
    ot_value: float
    best_upper: float
    gap: float
    uppers: tuple
    roundtrip_error: float


def ot_infrep_check(c, psi, mu, nu, candidate_etas):
    """Exact OT against ``OT_psi(mu, eta) + OT_psi(nu, eta)`` for each candidate ``eta``.

    ``psi`` is indexed by the support of ``mu``/``nu`` and by the atoms the
    candidates live on; exact values come from the small-instance oracle.
    """
    ce = as_cost(c).entries
    psi = np.asarray(getattr(psi, "psi", psi), dtype=float)
    roundtrip = float(np.max(np.abs(eval_inf_rep(psi).entries - ce)))
    ot_value = exact_ot_bruteforce(ce, mu, nu).value
    uppers = tuple(
        exact_ot_bruteforce(psi, mu, eta).value + exact_ot_bruteforce(psi, nu, eta).value
        for eta in candidate_etas
    )
    best = min(uppers) if uppers else np.inf
    return OTInfRepCheck(ot_value, best, best - ot_value, uppers, roundtrip)


class SaddleCheck(NamedTuple):
    ot_value: float
    lagrangian_value: float
    stationarity_residual: float
    mass_bound: float
    max_density: float

    @property
    def value_gap(self):
        return abs(self.lagrangian_value - self.ot_value)


def saddle_value_check(c, mu, nu, epsilon, tol=1e-12, psd_tol=1e-9):
    """Evaluate the kernel Lagrangian at the saddle point built from Sinkhorn potentials.

    ``mu* = exp(f / eps) mu``, ``nu* = exp(g / eps) nu`` and ``z* = (k_mu* + k_nu*) / 2``
    represented by its weight vector; every norm goes through the Gram matrix.
    """
    ce = as_cost(c).entries
    k = gibbs_kernel(ce, epsilon)
    cert = is_psd(k, psd_tol)
    if not cert.verdict:
        raise ValueError(f"kernel exp(-c/eps) is not psd (min eigenvalue {cert.min_eigenvalue:.3e})")
    a, b = weights_of(mu), weights_of(nu)
    sol = sinkhorn(ce, a, b, epsilon, tol)
    eps = float(epsilon)
    pa, pb = a > 0, b > 0
    ms = np.where(pa, np.exp(np.where(pa, sol.f, 0.0) / eps) * a, 0.0)
    ns = np.where(pb, np.exp(np.where(pb, sol.g, 0.0) / eps) * b, 0.0)
    w = 0.5 * (ms + ns)
    kk = k.entries
    g_mm = mean_embedding_grams(kk, w - ms, w - ms).norm2_a
    g_nn = mean_embedding_grams(kk, w - ns, w - ns).norm2_a
    grams = mean_embedding_grams(kk, ms, ns)
    lagr = eps * (
        np.dot(sol.f[pa] / eps, a[pa]) + np.dot(sol.g[pb] / eps, b[pb])
        + g_mm + g_nn - 0.5 * grams.norm2_a - 0.5 * grams.norm2_b + 1.0
    )
    r = 4 * w - 2 * ms - 2 * ns
    resid = float(np.sqrt(max(mean_embedding_grams(kk, r, r).norm2_a, 0.0)))
    finite = ce[np.isfinite(ce)]
    bound = float(np.exp(np.max(np.abs(finite)) / eps))
    dens = max(np.max(np.exp(sol.f[pa] / eps)), np.max(np.exp(sol.g[pb] / eps)))
    return SaddleCheck(sol.primal_value, float(lagr), resid, bound, float(dens))


class LseRoundtrip(NamedTuple):
    max_relative_error: float
    max_z_score: float
    max_cost_error: float
    n_samples: int


def negdef_lse_roundtrip(c, epsilon, n_samples, seed):
    """Rebuild ``c`` as a log-sum-exp cost over Monte-Carlo Gaussian atoms.

    ``psi(i, z) = -eps log rho(i, z)`` on ``n_samples`` draws with weights
    ``1 / n_samples``.  The relative error is measured on the kernel scale,
    ``|exp(-(c_hat - c) / eps) - 1|``, and compared with the MC standard error.
    """
    ce = as_cost(c).entries
    e = embed_negative_definite(ce)
    lr = gaussian_feature_samples(e, epsilon, n_samples, seed)
    psi = -epsilon * lr
    c_hat = lse_cost(psi, np.full(n_samples, 1.0 / n_samples), epsilon).entries
    rel = np.abs(np.expm1(-(c_hat - ce) / epsilon))
    mc = gaussian_features_mc(e, epsilon, n_samples, seed)
    k = np.exp(-ce / epsilon)
    se = mc.stderr / k
    noisy = se > 1e-12
    z = float(np.max(rel[noisy] / se[noisy])) if noisy.any() else 0.0
    return LseRoundtrip(float(rel.max()), z, float(np.max(np.abs(c_hat - ce))), int(n_samples))
