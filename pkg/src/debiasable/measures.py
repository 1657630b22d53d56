"""Discrete measures, KL divergence, disintegration and gluing of couplings.

Supports are index based: a measure is a weight vector, optionally carrying
Euclidean coordinates for its atoms.  Couplings are plain nonnegative arrays
whose axes follow the order of the measures they couple.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

MASS_TOL = 1e-12
IDENTITY_TOL = 1e-10


class DimensionError(ValueError):
    """Raised when two objects do not live on the same indexed support."""


class MarginalMismatchError(ValueError):
    """Raised when couplings disagree on a marginal they should share."""

    def __init__(self, message, discrepancy):
        super().__init__(f"{message} (L1 discrepancy {discrepancy:.3e})")
        self.discrepancy = discrepancy


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Nonnegative weights on ``support_size`` atoms.

    Attributes:
        weights: array of shape ``(n,)``.
        coordinates: optional array of shape ``(n, d)`` locating the atoms.
    """

    weights: np.ndarray
    coordinates: Optional[np.ndarray] = None

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim != 1 or w.size == 0:
            raise DimensionError("weights must be a non-empty 1-D array")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        object.__setattr__(self, "weights", w)
        if self.coordinates is not None:
            x = _frozen(self.coordinates)
            if x.ndim == 1:
                x = _frozen(x[:, None])
            if x.ndim != 2 or x.shape[0] != w.size or x.shape[1] < 1:
                raise DimensionError(
                    f"coordinates of shape {x.shape} do not match {w.size} atoms"
                )
            object.__setattr__(self, "coordinates", x)

    @property
    def support_size(self):
        return self.weights.size

    @property
    def total_mass(self):
        return float(self.weights.sum())

    @property
    def dimension(self):
        return None if self.coordinates is None else self.coordinates.shape[1]

    def is_probability(self, tol=MASS_TOL):
        return abs(self.total_mass - 1.0) <= tol

    def normalized(self):
        return DiscreteMeasure(self.weights / self.total_mass, self.coordinates)

    def mean(self):
        """Barycenter of the atoms, weighted by the normalized weights."""
        if self.coordinates is None:
            raise ValueError("measure has no coordinates")
        return self.weights @ self.coordinates / self.total_mass

    def std(self):
        """Per-axis standard deviation of the normalized measure."""
        m = self.mean()
        return np.sqrt(self.weights @ (self.coordinates - m) ** 2 / self.total_mass)

    @classmethod
    def uniform(cls, n, coordinates=None):
        return cls(np.full(n, 1.0 / n), coordinates)

    @classmethod
    def dirac(cls, index, n, coordinates=None):
        w = np.zeros(n)
        w[index] = 1.0
        return cls(w, coordinates)

    def to_json(self):
        out = {"weights": self.weights.tolist()}
        if self.coordinates is not None:
            out["coordinates"] = self.coordinates.tolist()
        return out

    @classmethod
    def from_json(cls, data):
        return cls(data["weights"], data.get("coordinates"))


def weights_of(m):
    """Weight array of a measure or array-like."""
    if isinstance(m, DiscreteMeasure):
        return m.weights
    return np.asarray(m, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class CouplingTensor:
    """A probability measure on a product of two or three indexed supports."""

    entries: np.ndarray

    def __post_init__(self):
        e = _frozen(self.entries)
        if e.ndim not in (2, 3):
            raise DimensionError("coupling tensors have 2 or 3 axes")
        if np.any(e < 0) or not np.all(np.isfinite(e)):
            raise ValueError("coupling entries must be finite and nonnegative")
        if abs(e.sum() - 1.0) > MASS_TOL * max(1, e.size) ** 0.5:
            raise ValueError(f"coupling entries sum to {e.sum()!r}, not 1")
        object.__setattr__(self, "entries", e)

    @property
    def shape(self):
        return self.entries.shape

    def marginal(self, axis):
        others = tuple(k for k in range(self.entries.ndim) if k != axis)
        return DiscreteMeasure(self.entries.sum(axis=others))

    def to_json(self):
        return {"shape": list(self.shape), "entries": self.entries.tolist()}

    @classmethod
    def from_json(cls, data):
        e = np.asarray(data["entries"], dtype=np.float64)
        if list(e.shape) != list(data["shape"]):
            raise DimensionError(f"entries have shape {e.shape}, header says {data['shape']}")
        return cls(e)


def entries_of(t):
    if isinstance(t, CouplingTensor):
        return t.entries
    return np.asarray(t, dtype=np.float64)


def kl_divergence(a, b):
    """Relative entropy ``sum a log(a / b)`` in nats, ``+inf`` without absolute continuity.

    Accepts measures or arrays of any matching shape; ``0 log(0 / b) = 0``.
    """
    a, b = weights_of(a) if isinstance(a, DiscreteMeasure) else entries_of(a), (
        weights_of(b) if isinstance(b, DiscreteMeasure) else entries_of(b)
    )
    if a.shape != b.shape:
        raise DimensionError(f"supports differ: {a.shape} vs {b.shape}")
    pos = a > 0
    if np.any(b[pos] <= 0):
        return np.inf
    return float(np.sum(a[pos] * np.log(a[pos] / b[pos])))


def product_measure(a, b):
    """Tensor product ``a_i * b_j`` as a 2-axis array."""
    return np.multiply.outer(weights_of(a), weights_of(b))


class Disintegration(NamedTuple):
    """Conditionals along one axis; ``None`` marks a zero-mass slice."""

    conditionals: list
    marginal: DiscreteMeasure


def disintegrate(gamma, axis):
    """Split a coupling into its ``axis`` marginal and normalized conditional slices."""
    g = entries_of(gamma)
    marg = g.sum(axis=tuple(k for k in range(g.ndim) if k != axis))
    conds = []
    for k, m in enumerate(marg):
        if m > 0:
            conds.append(np.take(g, k, axis=axis) / m)
        else:
            conds.append(None)
    return Disintegration(conds, DiscreteMeasure(marg))


def reassemble(dis, axis):
    """Inverse of :func:`disintegrate`; undefined slices come back as zeros."""
    shape = next(c.shape for c in dis.conditionals if c is not None)
    slices = [
        np.zeros(shape) if c is None else c * m
        for c, m in zip(dis.conditionals, dis.marginal.weights)
    ]
    return np.stack(slices, axis=axis)


def glue(pi1, pi2, atol=IDENTITY_TOL):
    """Glue couplings on X x Z and Y x Z along their shared Z-marginal.

    Returns the 3-axis tensor ``(pi1)_z(i) * (pi2)_z(j) * eta_k``.
    """
    p1, p2 = entries_of(pi1), entries_of(pi2)
    eta1, eta2 = p1.sum(axis=0), p2.sum(axis=0)
    if eta1.shape != eta2.shape:
        raise DimensionError(f"Z supports differ: {eta1.shape} vs {eta2.shape}")
    gap = float(np.abs(eta1 - eta2).sum())
    if gap > atol:
        raise MarginalMismatchError("pi1 and pi2 have different Z-marginals", gap)
    eta = 0.5 * (eta1 + eta2)
    safe = np.where(eta > 0, eta, 1.0)
    gamma = p1[:, None, :] * p2[None, :, :] / safe
    gamma[:, :, eta <= 0] = 0.0
    return CouplingTensor(gamma)


def _check_marginals(gamma, measures, atol):
    for axis, m in enumerate(measures):
        got = gamma.sum(axis=tuple(k for k in range(gamma.ndim) if k != axis))
        want = weights_of(m)
        if got.shape != want.shape:
            raise DimensionError(f"axis {axis} has size {got.size}, measure has {want.size}")
        gap = float(np.abs(got - want).sum())
        if gap > atol:
            raise MarginalMismatchError(f"marginal {axis} of gamma differs from input", gap)


class ThreeDecomposition(NamedTuple):
    lhs: float
    kl_alpha: float
    kl_beta: float
    correlation_term: float

    @property
    def residual(self):
        return abs(self.lhs - (self.kl_alpha + self.kl_beta + self.correlation_term))


def kl_three_decomposition(gamma, mu, nu, eta, atol=IDENTITY_TOL):
    """Split ``KL(gamma | mu x nu x eta)`` into its two pair marginals plus a correlation term.

    The correlation term is ``sum_k eta_k KL(gamma_k | p1(gamma_k) x p2(gamma_k))``,
    evaluated slice by slice and not as a difference of the other three numbers.
    """
    g = entries_of(gamma)
    _check_marginals(g, (mu, nu, eta), atol)
    a, b, e = weights_of(mu), weights_of(nu), weights_of(eta)
    ref = a[:, None, None] * b[None, :, None] * e[None, None, :]
    lhs = kl_divergence(g, ref)
    alpha, beta = g.sum(axis=1), g.sum(axis=0)
    kl_alpha = kl_divergence(alpha, product_measure(a, e))
    kl_beta = kl_divergence(beta, product_measure(b, e))
    corr = 0.0
    for k, cond in enumerate(disintegrate(g, axis=2).conditionals):
        if cond is None:
            continue
        inner = kl_divergence(cond, product_measure(cond.sum(axis=1), cond.sum(axis=0)))
        corr += e[k] * inner
    return ThreeDecomposition(lhs, kl_alpha, kl_beta, corr)


class ChainRule(NamedTuple):
    joint_kl: float
    conditional_part: float
    marginal_part: float
    product_rule: Optional[tuple] = None

    @property
    def residual(self):
        rhs = self.conditional_part + self.marginal_part
        if np.isinf(self.joint_kl) or np.isinf(rhs):
            return 0.0 if self.joint_kl == rhs else np.inf
        return abs(self.joint_kl - rhs)


def _is_product(t, rtol=1e-12):
    return np.allclose(t, np.outer(t.sum(axis=1), t.sum(axis=0)), rtol=0, atol=rtol)


def kl_chain_check(alpha, beta):
    """Evaluate both sides of the chain rule, disintegrating along the second axis.

    When both inputs are product couplings, ``product_rule`` holds the pair
    ``(KL(alpha|beta), KL(mu1|mu2) + KL(nu1|nu2))``.
    """
    al, be = entries_of(alpha), entries_of(beta)
    if al.shape != be.shape or al.ndim != 2:
        raise DimensionError("alpha and beta must be 2-axis tensors of one shape")
    joint = kl_divergence(al, be)
    nu1, nu2 = al.sum(axis=0), be.sum(axis=0)
    marginal_part = kl_divergence(nu1, nu2)
    da, db = disintegrate(al, 1), disintegrate(be, 1)
    cond = 0.0
    for y, (ay, by) in enumerate(zip(da.conditionals, db.conditionals)):
        if ay is None:
            continue
        cond += np.inf if by is None else nu1[y] * kl_divergence(ay, by)
    product_rule = None
    if _is_product(al) and _is_product(be):
        mu1, mu2 = al.sum(axis=1), be.sum(axis=1)
        product_rule = (joint, kl_divergence(mu1, mu2) + marginal_part)
    return ChainRule(joint, float(cond), marginal_part, product_rule)


class Decomp2(NamedTuple):
    sum_side: float
    glued_side: float
    general_sides: tuple = ()

    @property
    def residual(self):
        if np.isinf(self.sum_side) or np.isinf(self.glued_side):
            return 0.0 if self.sum_side == self.glued_side else np.inf
        return abs(self.sum_side - self.glued_side)

    @property
    def max_violation(self):
        """Largest ``sum_side - KL(gamma | mu x nu x lambda)`` over supplied gammas."""
        if not self.general_sides:
            return -np.inf
        return max(self.sum_side - g for g in self.general_sides)


def kl_decomp2_check(pi1, pi2, lam, gammas=(), atol=IDENTITY_TOL):
    """Compare the split entropy of two plans plus ``KL(eta|lambda)`` with the glued plan.

    Each extra ``gamma`` must have ``pi1`` and ``pi2`` as its (X, Z) and (Y, Z)
    marginals; its ``KL(gamma | mu x nu x lambda)`` is returned in
    ``general_sides`` and should dominate ``sum_side``.
    """
    p1, p2 = entries_of(pi1), entries_of(pi2)
    mu, nu = p1.sum(axis=1), p2.sum(axis=1)
    eta = p1.sum(axis=0)
    lw = weights_of(lam)
    sum_side = (
        kl_divergence(p1, product_measure(mu, eta))
        + kl_divergence(p2, product_measure(nu, eta))
        + kl_divergence(eta, lw)
    )
    ref = mu[:, None, None] * nu[None, :, None] * lw[None, None, :]
    glued_side = kl_divergence(glue(p1, p2, atol).entries, ref)
    general = []
    for gamma in gammas:
        g = entries_of(gamma)
        for got, want, name in ((g.sum(axis=1), p1, "pi1"), (g.sum(axis=0), p2, "pi2")):
            gap = float(np.abs(got - want).sum())
            if gap > atol:
                raise MarginalMismatchError(f"gamma does not project onto {name}", gap)
        general.append(kl_divergence(g, ref))
    return Decomp2(sum_side, glued_side, tuple(general))


def random_coupling_with_pair_marginals(pi1, pi2, rng, n_moves=6):
    """A coupling on X x Y x Z whose (X, Z) and (Y, Z) marginals are ``pi1``, ``pi2``.

    Starts from the glued plan and applies random mass-preserving swaps inside
    each Z-slice, so both pair marginals are kept exactly (up to rounding).
    """
    g = np.array(glue(pi1, pi2).entries)
    nx, ny, nz = g.shape
    if nx < 2 or ny < 2:
        return g
    # distinct index pairs drawn up front: i2 = i1 + offset (mod n), offset in [1, n)
    i1 = rng.integers(nx, size=(nz, n_moves))
    i2 = (i1 + rng.integers(1, nx, size=(nz, n_moves))) % nx
    j1 = rng.integers(ny, size=(nz, n_moves))
    j2 = (j1 + rng.integers(1, ny, size=(nz, n_moves))) % ny
    u = rng.random((nz, n_moves))
    for k in range(nz):
        s = g[:, :, k]
        for m in range(n_moves):
            a1, a2, b1, b2 = i1[k, m], i2[k, m], j1[k, m], j2[k, m]
            lo, hi = -min(s[a1, b1], s[a2, b2]), min(s[a1, b2], s[a2, b1])
            d = lo + u[k, m] * (hi - lo)
            s[a1, b1] += d
            s[a2, b2] += d
            s[a1, b2] -= d
            s[a2, b1] -= d
        np.maximum(s, 0.0, out=s)
    return g
