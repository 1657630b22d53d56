"""Debiased divergences: Sinkhorn divergence, debiased unbalanced OT and MMD."""

import csv
import io
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np

from .costs import as_cost
from .kernels import embed_negative_definite, is_negative_definite
from .measures import DiscreteMeasure, weights_of
from .solvers import exact_ot_bruteforce, ot_infinity, sinkhorn, sinkhorn_symmetric, unbalanced_sinkhorn

CSV_COLUMNS = ("kind", "epsilon", "rho", "raw_xy", "self_xx", "self_yy", "debiased", "tol", "seed")
KINDS = ("eps0", "entropic", "uot", "mmd")


def fmt(v):
    """Lossless text form: 17 significant digits, ``inf`` and empty for None."""
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17g}"


@dataclass(frozen=True)
class DivergenceReport:
    kind: str
    epsilon: float
    raw_xy: float
    self_xx: float
    self_yy: float
    rho: Optional[float] = None
    tol: Optional[float] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")

    @property
    def debiased(self):
        return self.raw_xy - self.self_xx / 2 - self.self_yy / 2

    def to_json(self):
        out = asdict(self)
        out["debiased"] = self.debiased
        if np.isinf(self.epsilon):
            out["epsilon"] = "inf"
        return out

    def csv_row(self):
        return [fmt(getattr(self, name)) for name in CSV_COLUMNS]

    def to_csv(self, header=True):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(CSV_COLUMNS)
        w.writerow(self.csv_row())
        return buf.getvalue()


def _square(c, mu, nu):
    ce = as_cost(c).entries
    if ce.shape[0] != ce.shape[1]:
        raise ValueError("debiased divergences need a square cost on one support")
    return ce


def sinkhorn_divergence(c, mu, nu, epsilon, tol=1e-10, max_iter=100000):
    """``S_eps = OT(mu, nu) - OT(mu, mu)/2 - OT(nu, nu)/2``.

    Self terms go through the symmetric solver.  ``epsilon = 0`` uses the exact
    oracle and ``epsilon = inf`` the bilinear form.
    """
    ce = _square(c, mu, nu)
    if epsilon == 0:
        terms = [exact_ot_bruteforce(ce, p, q).value for p, q in ((mu, nu), (mu, mu), (nu, nu))]
        return DivergenceReport("eps0", 0.0, *terms, tol=tol)
    if np.isinf(epsilon):
        return mmd_squared(ce, mu, nu)
    raw = sinkhorn(ce, mu, nu, epsilon, tol, max_iter).primal_value
    sxx = sinkhorn_symmetric(ce, mu, epsilon, tol, max_iter).primal_value
    syy = sinkhorn_symmetric(ce, nu, epsilon, tol, max_iter).primal_value
    return DivergenceReport("entropic", float(epsilon), raw, sxx, syy, tol=tol)


def debiased_uot(c, mu, nu, epsilon, rho, tol=1e-10, max_iter=100000):
    """Debiased entropic unbalanced OT with ``rho * KL`` marginal penalties."""
    ce = _square(c, mu, nu)
    terms = [
        unbalanced_sinkhorn(ce, p, q, epsilon, rho, tol, max_iter).value
        for p, q in ((mu, nu), (mu, mu), (nu, nu))
    ]
    return DivergenceReport("uot", float(epsilon), *terms, rho=float(rho), tol=tol)


def mmd_squared(c, mu, nu):
    """``-1/2 (mu - nu)^T C (mu - nu)`` as a debiased report with ``epsilon = inf``."""
    ce = _square(c, mu, nu)
    return DivergenceReport(
        "mmd", np.inf, ot_infinity(ce, mu, nu), ot_infinity(ce, mu, mu), ot_infinity(ce, nu, nu)
    )


class MMDEmbeddingCheck(NamedTuple):
    mmd: float
    embedding_form: float
    psi_at_midpoint: float
    ot_infinity: float
    min_perturbed: float


def mmd_embedding_check(c, mu, nu, n_perturb=50, seed=0, scale=0.1):
    """Check the feature-space form of MMD and the midpoint minimizer.

    With ``c = s_i + s_j + |phi_i - phi_j|^2``, the value ``mu^T C nu`` equals
    ``min_z Psi(mu, z) + Psi(nu, z)`` where
    ``Psi(mu, z) = <s + |phi|^2, mu> + 2 |z - m_mu|^2 - |m_mu|^2``, attained at
    the mean embedding of ``(mu + nu) / 2``.
    """
    ce = _square(c, mu, nu)
    a, b = weights_of(mu), weights_of(nu)
    e = embed_negative_definite(ce)
    phi, s = e.features, e.offsets
    sq = (phi**2).sum(axis=1)
    ma, mb = a @ phi, b @ phi

    def psi(w, m, z):
        return float(w @ (s + sq) + 2 * np.sum((z - m) ** 2) - np.sum(m**2))

    def total(z):
        return psi(a, ma, z) + psi(b, mb, z)

    mid = 0.5 * (ma + mb)
    rng = np.random.default_rng(seed)
    perturbed = [total(mid + scale * rng.normal(size=mid.shape)) for _ in range(n_perturb)]
    return MMDEmbeddingCheck(
        mmd_squared(ce, a, b).debiased,
        float(np.sum((ma - mb) ** 2)),
        total(mid),
        ot_infinity(ce, a, b),
        min(perturbed) if perturbed else np.inf,
    )


class NegDefMMDCertificate(NamedTuple):
    negative_definite: bool
    min_mmd: float
    counterexample: Optional[tuple]
    trials: int


def negdef_iff_mmd_nonneg(c, n_trials=500, seed=0, tol=1e-9):
    """Both directions of the negative-definite / nonnegative-MMD equivalence.

    Negative definite: ``min_mmd`` is the smallest MMD over random measure
    pairs.  Otherwise the spectral witness ``a`` is split into its positive and
    negative parts, each rescaled to a probability, giving a pair with
    negative MMD (returned as ``counterexample = (mu, nu, mmd)``).
    """
    ce = _square(c, None, None)
    n = ce.shape[0]
    cert = is_negative_definite(ce, tol)
    if cert.verdict:
        rng = np.random.default_rng(seed)
        worst = np.inf
        for _ in range(n_trials):
            a, b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
            if rng.random() < 0.5:  # sparse pairs probe the faces of the simplex
                a[rng.random(n) < 0.5] = 0.0
                b[rng.random(n) < 0.5] = 0.0
                a = a / a.sum() if a.sum() > 0 else np.eye(n)[rng.integers(n)]
                b = b / b.sum() if b.sum() > 0 else np.eye(n)[rng.integers(n)]
            worst = min(worst, mmd_squared(ce, a, b).debiased)
        return NegDefMMDCertificate(True, float(worst), None, n_trials)
    w = cert.worst_vector
    mass = w[w > 0].sum()
    mu = DiscreteMeasure(np.where(w > 0, w, 0.0) / mass)
    nu = DiscreteMeasure(np.where(w < 0, -w, 0.0) / mass)
    nu = DiscreteMeasure(nu.weights / nu.total_mass)  # exact zero sum is up to rounding
    value = mmd_squared(ce, mu, nu).debiased
    return NegDefMMDCertificate(False, float(value), (mu, nu, float(value)), 0)
