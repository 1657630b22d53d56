"""Gibbs kernels, psd and negative-definiteness checks, Hilbert embeddings and
the Gaussian random-feature factorization of ``exp(-c / eps)``."""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import _backend
from .costs import CostMatrix, as_cost, is_debiasable

MC_BLOCK = 8192
CLIP_RTOL = 1e-6


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    entries: np.ndarray
    epsilon: Optional[float] = None

    def __post_init__(self):
        k = np.array(self.entries, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise ValueError("kernel must be a square matrix")
        if not np.all(np.isfinite(k)) or np.any(k < 0):
            raise ValueError("kernel entries must be finite and nonnegative")
        k.setflags(write=False)
        object.__setattr__(self, "entries", k)

    @property
    def size(self):
        return self.entries.shape[0]

    def to_json(self):
        return {"entries": self.entries.tolist(), "epsilon": self.epsilon}


def kernel_entries(k):
    return k.entries if isinstance(k, KernelMatrix) else np.asarray(k, dtype=np.float64)


def gibbs_kernel(c, epsilon):
    """``exp(-c / eps)``; infinite costs map to exact zeros."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    return KernelMatrix(np.exp(-as_cost(c).entries / epsilon), float(epsilon))


class PsdCertificate(NamedTuple):
    verdict: bool
    min_eigenvalue: float


def is_psd(k, tol=1e-9):
    ev = np.linalg.eigvalsh(kernel_entries(k))
    return PsdCertificate(bool(ev[0] >= -tol), float(ev[0]))


class NegDefCertificate(NamedTuple):
    verdict: bool
    worst_vector: np.ndarray
    quadratic_value: float


def centering(n):
    return np.eye(n) - np.full((n, n), 1.0 / n)


def is_negative_definite(c, tol=1e-9):
    """Spectral test of ``a^T C a <= tol`` over zero-sum ``a``.

    The top eigenvector of ``P C P`` (``P`` the centering projector) is
    returned as the worst direction; it sums to zero up to rounding.
    """
    e = as_cost(c).entries
    if not np.all(np.isfinite(e)):
        raise ValueError("negative-definiteness needs finite costs")
    n = e.shape[0]
    if n == 1:
        return NegDefCertificate(True, np.zeros(1), 0.0)
    p = centering(n)
    ev, vec = np.linalg.eigh(p @ e @ p)
    a = p @ vec[:, -1]
    a /= np.linalg.norm(a)
    q = float(a @ e @ a)
    return NegDefCertificate(bool(q <= tol), a, q)


@dataclass(frozen=True, eq=False)
class Embedding:
    """Features ``phi`` and offsets ``s`` with ``c(i, j) = s_i + s_j + |phi_i - phi_j|^2``."""

    features: np.ndarray
    offsets: np.ndarray
    psd_residual: float = 0.0

    @property
    def points(self):
        return self.features.shape[0]

    @property
    def rank(self):
        return self.features.shape[1]

    def reconstruct(self):
        phi = self.features
        sq = (phi**2).sum(axis=1)
        d = np.maximum(sq[:, None] + sq[None, :] - 2 * phi @ phi.T, 0.0)
        np.fill_diagonal(d, 0.0)
        return self.offsets[:, None] + self.offsets[None, :] + d

    def to_json(self):
        return {
            "features": self.features.tolist(),
            "offsets": self.offsets.tolist(),
            "psd_residual": self.psd_residual,
        }


def embed_negative_definite(c, rank_rtol=1e-12):
    """Hilbert features for a negative definite cost via the base-point Gram matrix.

    Negative eigenvalues of the Gram matrix are clipped; a clip larger than
    ``1e-6`` of the top eigenvalue means the cost is not negative definite.
    """
    e = as_cost(c).entries
    if not np.all(np.isfinite(e)):
        raise ValueError("embedding needs finite costs")
    s = np.diag(e) / 2.0
    d = e - s[:, None] - s[None, :]
    g = 0.5 * (d[:, :1] + d[:1, :] - d)
    g = 0.5 * (g + g.T)
    ev, vec = np.linalg.eigh(g)
    top = max(float(ev[-1]), 0.0)
    residual = min(float(ev[0]), 0.0)
    if residual < -CLIP_RTOL * max(top, np.finfo(float).tiny):
        raise ValueError(
            f"not negative definite: Gram eigenvalue {residual:.3e} against top {top:.3e}"
        )
    keep = ev > rank_rtol * top if top > 0 else np.zeros_like(ev, dtype=bool)
    features = vec[:, keep] * np.sqrt(ev[keep])
    return Embedding(features, s, residual)


class MCEstimate(NamedTuple):
    estimate: np.ndarray
    stderr: np.ndarray
    n_samples: int
    seed: int

    def to_json(self):
        return {
            "estimate": self.estimate.tolist(),
            "stderr": self.stderr.tolist(),
            "n_samples": self.n_samples,
            "seed": self.seed,
        }


def _block_normals(seed, block, size, dim):
    """Standard normals for block ``block``; blocks are independent of evaluation order."""
    bitgen = np.random.Philox(np.random.SeedSequence([int(seed), int(block)]))
    return np.random.Generator(bitgen).standard_normal((size, dim))


def _blocks(n_samples):
    for b, start in enumerate(range(0, n_samples, MC_BLOCK)):
        yield b, min(MC_BLOCK, n_samples - start)


def log_gaussian_features(e, epsilon, z):
    """``log rho(i, z)`` for sample rows ``z``; shape ``(points, len(z))``."""
    phi, s = e.features, e.offsets
    sq = (phi**2).sum(axis=1)
    return np.sqrt(2.0 / epsilon) * (phi @ z.T) - ((2.0 / epsilon) * sq + s / epsilon)[:, None]


def gaussian_feature_samples(e, epsilon, n_samples, seed):
    """Stacked ``log rho`` for the same stream :func:`gaussian_features_mc` consumes."""
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    if e.rank == 0:
        return np.repeat((-e.offsets / epsilon)[:, None], n_samples, axis=1)
    parts = [
        log_gaussian_features(e, epsilon, _block_normals(seed, b, size, e.rank))
        for b, size in _blocks(n_samples)
    ]
    return np.concatenate(parts, axis=1)


def gaussian_features_mc(e, epsilon, n_samples, seed):
    """Monte-Carlo estimate of ``exp(-c / eps)`` from the Gaussian feature map.

    Sample block ``b`` is drawn from ``Philox(SeedSequence([seed, b]))`` so
    blocks can be produced in any order or in parallel.  Block statistics are
    merged with the pairwise mean/variance update.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    n = e.points
    if e.rank == 0:
        exact = np.exp(-(e.offsets[:, None] + e.offsets[None, :]) / epsilon)
        return MCEstimate(exact, np.zeros((n, n)), n_samples, seed)
    count, mean, m2 = 0, np.zeros((n, n)), np.zeros((n, n))
    for b, size in _blocks(n_samples):
        lr = log_gaussian_features(e, epsilon, _block_normals(seed, b, size, e.rank))
        prod = np.exp(lr[:, None, :] + lr[None, :, :])
        bmean = prod.mean(axis=2)
        bm2 = ((prod - bmean[:, :, None]) ** 2).sum(axis=2)
        total = count + size
        delta = bmean - mean
        mean = mean + delta * (size / total)
        m2 = m2 + bm2 + delta**2 * (count * size / total)
        count = total
    var = m2 / (count - 1) if count > 1 else np.zeros_like(m2)
    return MCEstimate(mean, np.sqrt(var / count), n_samples, seed)


def lse_cost(psi, lambda_weights, epsilon, psi_b=None):
    """``-eps log sum_z lambda_z exp(-(psi_a(i, z) + psi_b(j, z)) / eps)``.

    ``psi_b`` defaults to ``psi``; pairs with no mass give ``+inf``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    psi_a = getattr(psi, "psi", psi)
    psi_b = psi_a if psi_b is None else getattr(psi_b, "psi", psi_b)
    lam = np.asarray(lambda_weights, dtype=np.float64)
    if np.any(lam < 0):
        raise ValueError("lambda weights must be nonnegative")
    with np.errstate(divide="ignore"):
        log_w = np.log(lam)
    out = _backend.pairwise_lse(psi_a, psi_b, log_w, epsilon)
    return CostMatrix.from_array(out)


class GramRecord(NamedTuple):
    norm2_a: float
    norm2_b: float
    inner_ab: float


def mean_embedding_grams(k, a, b):
    """Squared norms and inner product of the kernel mean embeddings of ``a`` and ``b``."""
    kk = kernel_entries(k)
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != (kk.shape[0],) or b.shape != a.shape:
        raise ValueError("weight vectors must match the kernel size")
    return GramRecord(float(a @ kk @ a), float(b @ kk @ b), float(a @ kk @ b))


class LogKernelCertificate(NamedTuple):
    verdict: bool
    agree: bool
    witness: Optional[tuple]


def log_kernel_debias_check(k, epsilon, strict=False):
    """Compare debiasability of ``-eps log k`` with ``k(i,i) k(j,j) >= k(i,j)^2``.

    Both verdicts are computed independently; ``agree`` reports whether they match.
    """
    kk = kernel_entries(k)
    with np.errstate(divide="ignore"):
        c = -epsilon * np.log(kk)
    cert = is_debiasable(CostMatrix.from_array(c), strict=strict)
    d = np.diag(kk)
    lhs, rhs = d[:, None] * d[None, :], kk**2
    n = kk.shape[0]
    if strict:
        off = ~np.eye(n, dtype=bool)
        # 0 > 0 counts as strict: both sides are infinite costs there
        ok = (lhs > rhs) | ((lhs == 0) & (rhs == 0))
        direct = bool(np.all(ok[off]))
    else:
        direct = bool(np.all(lhs >= rhs))
    return LogKernelCertificate(cert.verdict, cert.verdict == direct, cert.witness)
