"""Entropic OT solvers in the log domain and exact small-instance oracles.

Potentials are in cost units: the optimal plan is
``pi_ij = exp((f_i + g_j - c_ij) / eps) mu_i nu_j``.
"""

import itertools
from dataclasses import dataclass, field
from typing import List, NamedTuple

import numpy as np

from . import _backend
from .costs import as_cost
from .measures import weights_of

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class InfeasibleError(ValueError):
    """Some atom with mass sees only infinite costs on the other support."""


class ConvergenceError(RuntimeError):
    def __init__(self, message, marginal_error):
        super().__init__(f"{message} (last marginal error {marginal_error:.3e})")
        self.marginal_error = marginal_error


class UnsupportedInstanceError(ValueError):
    """Instance outside the families the exact oracle can solve."""


@dataclass
class SinkhornSolution:
    f: np.ndarray
    g: np.ndarray
    plan: np.ndarray
    primal_value: float
    dual_value: float
    iterations: int
    marginal_error: float
    epsilon: float

    @property
    def value(self):
        return self.primal_value

    def to_json(self, include_plan=False):
        out = {
            "f": self.f.tolist(),
            "g": self.g.tolist(),
            "value": self.primal_value,
            "dual_value": self.dual_value,
            "iterations": self.iterations,
            "marginal_error": self.marginal_error,
            "epsilon": self.epsilon,
        }
        if include_plan:
            out["plan"] = self.plan.tolist()
        return out


@dataclass
class UnbalancedSolution:
    f: np.ndarray
    g: np.ndarray
    plan: np.ndarray  # normalized to mass one
    value: float
    unconstrained_mass: float
    marginal_defects: tuple
    iterations: int
    epsilon: float
    rho: float
    value_history: List[float] = field(default_factory=list)

    def to_json(self, include_plan=False):
        out = {
            "f": self.f.tolist(),
            "g": self.g.tolist(),
            "value": self.value,
            "unconstrained_mass": self.unconstrained_mass,
            "marginal_defects": list(self.marginal_defects),
            "iterations": self.iterations,
            "epsilon": self.epsilon,
            "rho": self.rho,
        }
        if include_plan:
            out["plan"] = self.plan.tolist()
        return out


def _log(w):
    with np.errstate(divide="ignore"):
        return np.log(w)


def _xlogy_ratio(p, q):
    """``sum p log(p / q)`` with ``0 log 0 = 0``; ``+inf`` if ``p > 0 = q``."""
    pos = p > 0
    if np.any(q[pos] <= 0):
        return np.inf
    return float(np.sum(p[pos] * np.log(p[pos] / q[pos])))


def _lse(v):
    m = v.max()
    return m + np.log(np.exp(v - m).sum())


def _h(pot, logw, eps):
    """``pot + eps log w`` with zero-weight atoms mapped to ``-inf``."""
    out = np.full_like(logw, -np.inf)
    pos = np.isfinite(logw)
    out[pos] = pot[pos] + eps * logw[pos]
    return out


def check_feasible(c, a, b):
    finite = np.isfinite(c)
    rows = (finite & (b[None, :] > 0)).any(axis=1)
    cols = (finite & (a[:, None] > 0)).any(axis=0)
    if np.any((a > 0) & ~rows) or np.any((b > 0) & ~cols):
        bad_i = np.flatnonzero((a > 0) & ~rows).tolist()
        bad_j = np.flatnonzero((b > 0) & ~cols).tolist()
        raise InfeasibleError(f"no finite-cost partner for rows {bad_i} / columns {bad_j}")


def gibbs_plan(c, f, g, a, b, eps):
    """``exp((f_i + g_j - c_ij) / eps) a_i b_j`` restricted to ``a_i b_j > 0``."""
    plan = np.zeros_like(c)
    rows, cols = np.flatnonzero(a > 0), np.flatnonzero(b > 0)
    if rows.size and cols.size:
        sub = c[np.ix_(rows, cols)]
        expo = (f[rows, None] + g[None, cols] - sub) / eps
        plan[np.ix_(rows, cols)] = np.exp(expo) * a[rows, None] * b[None, cols]
    return plan


def transport_value(c, plan):
    """``sum c * plan`` with ``inf * 0 = 0``."""
    mask = plan > 0
    return float(np.sum(c[mask] * plan[mask]))


def entropic_objective(c, plan, a, b, eps):
    return transport_value(c, plan) + eps * _xlogy_ratio(plan, np.multiply.outer(a, b))


def _row_defect(f, f_next, a, eps):
    pos = a > 0
    return float(np.sum(a[pos] * np.abs(np.expm1((f[pos] - f_next[pos]) / eps))))


def _finish(c, f, g, a, b, eps, iterations, shift=True):
    if shift:
        pa, pb = a > 0, b > 0
        lam = 0.5 * (np.dot(f[pa], a[pa]) - np.dot(g[pb], b[pb]))
        f, g = f - lam, g + lam
    plan = gibbs_plan(c, f, g, a, b, eps)
    err = float(np.abs(plan.sum(axis=1) - a).sum() + np.abs(plan.sum(axis=0) - b).sum())
    primal = entropic_objective(c, plan, a, b, eps)
    pa, pb = a > 0, b > 0
    dual = float(np.dot(f[pa], a[pa]) + np.dot(g[pb], b[pb]) - eps * (plan.sum() - 1.0))
    return SinkhornSolution(f, g, plan, primal, dual, iterations, err, eps)


def _validate(c, mu, nu, eps):
    if not eps > 0:
        raise ValueError(f"epsilon must be positive, got {eps}")
    c = as_cost(c).entries
    a, b = weights_of(mu), weights_of(nu)
    if c.shape != (a.size, b.size):
        raise ValueError(f"cost shape {c.shape} does not match measures ({a.size}, {b.size})")
    return c, a, b


def sinkhorn(c, mu, nu, epsilon, tol=1e-10, max_iter=100000, init_g=None):
    """Alternating log-domain fixed point for ``OT^eps(mu, nu)``.

    Stops when the L1 row-marginal defect of the plan built from the current
    ``(f, g)`` is at most ``tol``; columns are exact after each ``g`` update.
    """
    c, a, b = _validate(c, mu, nu, epsilon)
    check_feasible(c, a, b)
    eps = float(epsilon)
    la, lb = _log(a), _log(b)
    ct = np.ascontiguousarray(c.T)
    g = np.zeros(b.size) if init_g is None else np.array(init_g, dtype=np.float64)
    g = np.where(np.isfinite(g), g, 0.0)
    f = _backend.softmin(c, _h(g, lb, eps), eps)
    err = np.inf
    for it in range(1, max_iter + 1):
        g = _backend.softmin(ct, _h(f, la, eps), eps)
        f_next = _backend.softmin(c, _h(g, lb, eps), eps)
        err = _row_defect(f, f_next, a, eps)
        if err <= tol:
            return _finish(c, f, g, a, b, eps, it)
        f = f_next
    raise ConvergenceError(f"sinkhorn did not reach tol={tol} in {max_iter} iterations", err)


def sinkhorn_symmetric(c, mu, epsilon, tol=1e-10, max_iter=100000):
    """Self-transport ``OT^eps(mu, mu)`` with one potential and the damped update."""
    c, a, _ = _validate(c, mu, mu, epsilon)
    if c.shape[0] != c.shape[1] or not np.array_equal(c, c.T):
        raise ValueError("symmetric solver needs a square symmetric cost")
    check_feasible(c, a, a)
    eps = float(epsilon)
    la = _log(a)
    f = np.zeros(a.size)
    pos = a > 0
    err = np.inf
    for it in range(1, max_iter + 1):
        tf = _backend.softmin(c, _h(f, la, eps), eps)
        err = 2.0 * _row_defect(f, tf, a, eps)  # both marginals carry the same defect
        if err <= tol:
            f = np.where(pos, f, tf)  # zero-weight atoms take the pointwise value
            return _finish(c, f, f.copy(), a, a, eps, it, shift=False)
        f = np.where(pos, 0.5 * (f + tf), tf)
    raise ConvergenceError(f"symmetric sinkhorn did not reach tol={tol} in {max_iter} iterations", err)


def unbalanced_objective(c, plan, a, b, eps, rho):
    """``sum c p + rho KL(p1 | a) + rho KL(p2 | b) + eps KL(p | a x b)`` for a probability ``p``."""
    return (
        transport_value(c, plan)
        + rho * _xlogy_ratio(plan.sum(axis=1), a)
        + rho * _xlogy_ratio(plan.sum(axis=0), b)
        + eps * _xlogy_ratio(plan, np.multiply.outer(a, b))
    )


def unbalanced_sinkhorn(c, mu, nu, epsilon, rho, tol=1e-10, max_iter=100000, track_values=False):
    """Entropic OT with ``rho * KL`` marginal penalties over probability plans.

    Runs the usual KL-relaxed scaling (updates shrunk by ``rho / (rho + eps)``)
    on nonnegative plans and normalizes the result: writing a plan as mass
    times probability, the probability part of the unconstrained minimizer
    solves the constrained problem.  Each sweep ends with the optimal
    translation of the potentials.  Stops when potentials move by at most
    ``max(tol, 64 * ulp * rho)`` in sup norm.
    """
    c, a, b = _validate(c, mu, nu, epsilon)
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    check_feasible(c, a, b)
    eps = float(epsilon)
    tau = rho / (rho + eps)
    la, lb = _log(a), _log(b)
    ct = np.ascontiguousarray(c.T)
    pa, pb = a > 0, b > 0
    f, g = np.zeros(a.size), np.zeros(b.size)
    history = []
    delta = np.inf
    # the translation step multiplies rounding by rho; no sweep can beat this floor
    stop = max(tol, 64 * np.finfo(float).eps * rho)
    for it in range(1, max_iter + 1):
        f_new = tau * _backend.softmin(c, _h(g, lb, eps), eps)
        g_new = tau * _backend.softmin(ct, _h(f_new, la, eps), eps)
        # (f + s, g - s) leaves the coupling term unchanged; take the best s for the
        # marginal terms, otherwise large rho makes this mode decay like tau^k
        lse_f = _lse(-f_new[pa] / rho + la[pa])
        lse_g = _lse(-g_new[pb] / rho + lb[pb])
        s = 0.5 * rho * (lse_f - lse_g)
        f_new, g_new = f_new + s, g_new - s
        delta = max(np.max(np.abs(f_new - f)[pa], initial=0.0), np.max(np.abs(g_new - g)[pb], initial=0.0))
        f, g = f_new, g_new
        if track_values:
            raw = gibbs_plan(c, f, g, a, b, eps)
            history.append(unbalanced_objective(c, raw / raw.sum(), a, b, eps, rho))
        if delta <= stop:
            break
    else:
        raise ConvergenceError(f"unbalanced sinkhorn did not reach tol={stop} in {max_iter} iterations", delta)
    raw = gibbs_plan(c, f, g, a, b, eps)
    mass = float(raw.sum())
    plan = raw / mass
    value = unbalanced_objective(c, plan, a, b, eps, rho)
    defects = (float(np.abs(plan.sum(axis=1) - a).sum()), float(np.abs(plan.sum(axis=0) - b).sum()))
    return UnbalancedSolution(f, g, plan, value, mass, defects, it, eps, float(rho), history)


class ExactSolution(NamedTuple):
    value: float
    plan: np.ndarray
    method: str


def _is_uniform(w):
    return np.all(np.abs(w - 1.0 / w.size) <= 1e-12)


def _monge_sorted(c):
    """Adjacent 2x2 Monge inequalities on a matrix; they imply the full property."""
    if c.shape[0] < 2 or c.shape[1] < 2:
        return True
    lhs = c[:-1, :-1] + c[1:, 1:]
    rhs = c[:-1, 1:] + c[1:, :-1]
    return bool(np.all(lhs <= rhs + 1e-12 * (1 + np.abs(rhs))))


def _northwest_corner(a, b):
    plan = np.zeros((a.size, b.size))
    a, b = a.copy(), b.copy()
    i = j = 0
    while i < a.size and j < b.size:
        m = min(a[i], b[j])
        plan[i, j] = m
        a[i] -= m
        b[j] -= m
        if a[i] <= b[j]:
            i += 1
        else:
            j += 1
    return plan


def exact_ot_bruteforce(c, mu, nu, method="auto"):
    """Exact ``min sum c pi`` over couplings on two instance families.

    ``"permutation"``: uniform weights, equal sizes ``n <= 8``, search over
    permutation plans.  ``"monotone"``: one-dimensional coordinates with a
    cost that is Monge on the sorted supports (any convex ``h(x - y)``), solved
    by the north-west corner rule on sorted atoms.
    """
    ce = as_cost(c).entries
    a, b = weights_of(mu), weights_of(nu)
    if ce.shape != (a.size, b.size):
        raise ValueError("cost shape does not match the measures")
    xs = getattr(mu, "coordinates", None)
    ys = getattr(nu, "coordinates", None)
    one_d = xs is not None and ys is not None and xs.shape[1] == 1 and ys.shape[1] == 1
    if method in ("auto", "monotone") and one_d:
        ox = np.argsort(xs[:, 0], kind="stable")
        oy = np.argsort(ys[:, 0], kind="stable")
        sorted_c = ce[np.ix_(ox, oy)]
        if np.all(np.isfinite(sorted_c)) and _monge_sorted(sorted_c):
            p = _northwest_corner(a[ox], b[oy])
            plan = np.zeros_like(ce)
            plan[np.ix_(ox, oy)] = p
            return ExactSolution(transport_value(ce, plan), plan, "monotone")
        if method == "monotone":
            raise UnsupportedInstanceError("cost is not Monge on the sorted coordinates")
    if method in ("auto", "permutation"):
        n = a.size
        if n == b.size and n <= 8 and _is_uniform(a) and _is_uniform(b):
            best, best_perm = np.inf, None
            rows = np.arange(n)
            for perm in itertools.permutations(range(n)):
                v = ce[rows, perm].sum()
                if v < best:
                    best, best_perm = v, perm
            plan = np.zeros_like(ce)
            if best_perm is None:  # every permutation has infinite cost
                return ExactSolution(np.inf, plan, "permutation")
            plan[rows, best_perm] = 1.0 / n
            return ExactSolution(float(best / n), plan, "permutation")
    raise UnsupportedInstanceError(
        "exact oracle needs uniform weights with n <= 8 or 1-D coordinates with a Monge cost"
    )


def ot_infinity(c, mu, nu):
    """``sum_ij c_ij mu_i nu_j``; ``+inf`` when an infinite cost carries mass."""
    ce = as_cost(c).entries
    w = np.multiply.outer(weights_of(mu), weights_of(nu))
    return transport_value(ce, w)


def eot_scalar_oracle(c, mu, nu, epsilon, xtol=1e-10):
    """``OT^eps`` on two points by golden-section search over ``t = pi_11``."""
    ce = as_cost(c).entries
    a, b = weights_of(mu), weights_of(nu)
    if ce.shape != (2, 2) or a.size != 2 or b.size != 2:
        raise ValueError("scalar oracle handles 2 x 2 instances only")
    prod = np.multiply.outer(a, b)

    def plan(t):
        return np.array([[t, a[0] - t], [b[0] - t, 1.0 - a[0] - b[0] + t]]).clip(min=0.0)

    def objective(t):
        p = plan(t)
        return transport_value(ce, p) + epsilon * _xlogy_ratio(p, prod)

    lo, hi = max(0.0, a[0] + b[0] - 1.0), min(a[0], b[0])
    x1, x2 = hi - GOLDEN * (hi - lo), lo + GOLDEN * (hi - lo)
    f1, f2 = objective(x1), objective(x2)
    while hi - lo > xtol:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLDEN * (hi - lo)
            f1 = objective(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLDEN * (hi - lo)
            f2 = objective(x2)
    t = 0.5 * (lo + hi)
    return min(objective(t), objective(lo), objective(hi))
