"""Cost matrices, debiasing, inf-representations and the closure combinators.

Extended reals are stored as IEEE floats with ``+inf`` allowed and ``-inf``
forbidden.  Every subtraction that could see ``inf - inf`` is guarded so the
result is ``+inf`` instead of NaN.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np

ARGMIN_TOL = 1e-9


class NotDebiasableError(ValueError):
    """Raised by constructions that need a debiasable cost."""

    def __init__(self, message, witness):
        super().__init__(f"{message}; witness pair {witness}")
        self.witness = witness


def _extended(a, name="entries"):
    a = np.array(a, dtype=np.float64)
    if np.any(np.isnan(a)):
        raise ValueError(f"{name} contain NaN")
    if np.any(np.isneginf(a)):
        raise ValueError(f"{name} contain -inf")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """Pairwise costs with values in ``(-inf, +inf]``."""

    entries: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        e = _extended(self.entries)
        if e.ndim != 2 or 0 in e.shape:
            raise ValueError("cost entries must be a non-empty 2-D array")
        if self.symmetric:
            if e.shape[0] != e.shape[1]:
                raise ValueError(f"symmetric cost must be square, got {e.shape}")
            if not np.array_equal(e, e.T):
                raise ValueError("cost flagged symmetric but entries differ from transpose")
        object.__setattr__(self, "entries", e)

    @classmethod
    def _debiased(cls, entries):
        # c(i, j) finite with c(i, i) = inf debiases to -inf; keep it so the scan can flag it
        obj = cls(np.where(np.isneginf(entries), 0.0, entries), True)
        e = np.array(entries, dtype=np.float64)
        e.setflags(write=False)
        object.__setattr__(obj, "entries", e)
        return obj

    @classmethod
    def from_array(cls, a):
        """Wrap ``a``, flagging it symmetric when it equals its transpose."""
        a = np.asarray(a, dtype=np.float64)
        sym = a.ndim == 2 and a.shape[0] == a.shape[1] and np.array_equal(a, a.T)
        return cls(a, sym)

    @property
    def rows(self):
        return self.entries.shape[0]

    @property
    def cols(self):
        return self.entries.shape[1]

    @property
    def shape(self):
        return self.entries.shape

    def to_json(self):
        rows = [[("inf" if np.isposinf(v) else float(v)) for v in row] for row in self.entries]
        return {"entries": rows, "symmetric": bool(self.symmetric)}

    @classmethod
    def from_json(cls, data):
        rows = [[np.inf if v == "inf" else float(v) for v in row] for row in data["entries"]]
        return cls(np.array(rows, dtype=np.float64), bool(data.get("symmetric", False)))


def as_cost(c):
    """Accept a CostMatrix or an array; arrays get their symmetry detected."""
    if isinstance(c, CostMatrix):
        return c
    return CostMatrix.from_array(c)


def _require_symmetric(c):
    c = as_cost(c)
    if not c.symmetric:
        raise ValueError("operation needs a symmetric cost on one support")
    return c


@dataclass(frozen=True, eq=False)
class InfRepresentation:
    """Table ``psi`` with ``c(i, j) = min_z psi[i, z] + psi[j, z]``."""

    psi: np.ndarray

    def __post_init__(self):
        p = _extended(self.psi, "psi")
        if p.ndim != 2 or 0 in p.shape:
            raise ValueError("psi must be a non-empty 2-D table")
        object.__setattr__(self, "psi", p)

    @property
    def x_size(self):
        return self.psi.shape[0]

    @property
    def z_size(self):
        return self.psi.shape[1]


class Certificate(NamedTuple):
    verdict: bool
    witness: Optional[Tuple[int, int]] = None
    value: float = 0.0


def _minus(a, b):
    """``a - b`` on extended reals with ``inf - inf = +inf``."""
    with np.errstate(invalid="ignore"):
        out = np.subtract(a, b)
    out[np.isnan(out)] = np.inf
    return out


def debias(c):
    """``c0(i, j) = c(i, j) - c(i, i)/2 - c(j, j)/2`` with ``inf - inf = +inf``.

    A finite ``c(i, j)`` next to an infinite self-cost gives ``-inf``, which
    only happens for costs that are not debiasable.
    """
    c = _require_symmetric(c)
    e = c.entries
    half = np.diag(e) / 2.0
    c0 = _minus(e, half[:, None] + half[None, :])  # one subtraction keeps c0 symmetric
    finite_diag = np.isfinite(half)
    idx = np.flatnonzero(finite_diag)
    c0[idx, idx] = 0.0
    return CostMatrix._debiased(c0)


def _worst_pair(values, mask):
    """Most negative masked entry, lexicographic tie-break."""
    cand = np.where(mask, values, np.inf)
    m = cand.min()
    i, j = np.argwhere(cand == m)[0]  # argwhere is row-major, hence lexicographic
    return (int(i), int(j)), float(m)


def is_debiasable(c, strict=False, tol=0.0):
    """Check ``c0 >= -tol`` everywhere, or ``c0 > tol`` off the diagonal when ``strict``.

    On failure the witness is the pair with the smallest ``c0`` among violations.
    """
    c0 = debias(c).entries
    n = c0.shape[0]
    if strict:
        off = ~np.eye(n, dtype=bool)
        bad = off & (c0 <= tol)
    else:
        bad = c0 < -tol
    if not bad.any():
        return Certificate(True, None, float(np.min(c0)))
    witness, value = _worst_pair(c0, bad)
    return Certificate(False, witness, value)


def constructive_inf_rep(c):
    """Inf-representation indexed by ordered pairs ``z = (u, v) -> u * n + v``.

    ``psi(x, (x, y)) = c(x, x)/2`` and ``psi(x, (y, x)) = c(x, y) - c(y, y)/2``;
    every other entry is ``+inf``.
    """
    c = _require_symmetric(c)
    cert = is_debiasable(c)
    if not cert.verdict:
        raise NotDebiasableError("cost is not debiasable", cert.witness)
    e = c.entries
    n = e.shape[0]
    psi = np.full((n, n * n), np.inf)
    half = np.diag(e) / 2.0
    cross = _minus(e, half[None, :])  # cross[x, y] = c(x, y) - c(y, y)/2
    for x in range(n):
        for y in range(n):
            # (x, y): x is the first coordinate; (y, x): x is the second
            psi[x, x * n + y] = half[x]
            if y != x:
                psi[x, y * n + x] = cross[x, y]
    return InfRepresentation(psi)


def eval_inf_rep(rep):
    """``c(i, j) = min_z psi(i, z) + psi(j, z)``."""
    psi = rep.psi if isinstance(rep, InfRepresentation) else InfRepresentation(rep).psi
    # pairwise sums in blocks keep memory at n * n * block
    n, nz = psi.shape
    out = np.full((n, n), np.inf)
    block = max(1, int(2**22 // max(1, n * n)))
    for start in range(0, nz, block):
        p = psi[:, start : start + block]
        out = np.minimum(out, (p[:, None, :] + p[None, :, :]).min(axis=2))
    return CostMatrix(out, True)


def minimizer_sets(rep, tol=ARGMIN_TOL):
    """Argmin sets of ``z -> psi(i, z)`` among finite values, one per ``i``.

    The band is applied to ``psi`` itself, so that for the constructive
    representation a shared minimizer appears exactly when ``c0(i, j) <= tol``.
    """
    psi = rep.psi if isinstance(rep, InfRepresentation) else np.asarray(rep, dtype=np.float64)
    sets = []
    for row in psi:
        finite = np.isfinite(row)
        if not finite.any():
            sets.append(frozenset())
            continue
        m = row[finite].min()
        sets.append(frozenset(np.flatnonzero(finite & (row <= m + tol)).tolist()))
    return sets


def strict_via_minimizer_sets(rep, tol=ARGMIN_TOL):
    """Strictness verdict from pairwise disjointness of the diagonal argmin sets."""
    sets = minimizer_sets(rep, tol)
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            if sets[i] & sets[j]:
                return Certificate(False, (i, j), 0.0)
    return Certificate(True)


def sum_costs(costs, coefficients=None):
    """Nonnegative combination ``sum_k a_k c_k``, with ``0 * inf = 0``."""
    costs = [as_cost(c).entries for c in costs]
    if not costs:
        raise ValueError("sum_costs needs at least one cost")
    coefficients = np.ones(len(costs)) if coefficients is None else np.asarray(coefficients, float)
    if coefficients.shape != (len(costs),):
        raise ValueError("one coefficient per cost is required")
    if np.any(coefficients < 0):
        raise ValueError("coefficients must be nonnegative")
    out = np.zeros_like(costs[0])
    for a, e in zip(coefficients, costs):
        if e.shape != out.shape:
            raise ValueError("costs live on different supports")
        if a > 0:
            out = out + a * e
    return CostMatrix.from_array(out)


def inf_costs(costs):
    """Entrywise minimum of a nonempty family."""
    costs = [as_cost(c).entries for c in costs]
    if not costs:
        raise ValueError("inf_costs needs a nonempty family")
    if any(e.shape != costs[0].shape for e in costs):
        raise ValueError("costs live on different supports")
    return CostMatrix.from_array(np.minimum.reduce(costs))


def shift_by_g(c, g):
    """``c(i, j) + g_i + g_j`` for a finite vector ``g``."""
    c = _require_symmetric(c)
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (c.rows,) or not np.all(np.isfinite(g)):
        raise ValueError("g must be a finite vector over the support")
    return CostMatrix(c.entries + (g[:, None] + g[None, :]), True)


def _min_plus(a, b):
    """``(a (x) b)(i, j) = min_k a(i, k) + b(k, j)``."""
    return (a[:, :, None] + b[None, :, :]).min(axis=1)


def inf_convolve(c, f):
    """``min_{u, v} f(u, i) + c(u, v) + f(v, j)``, as two min-plus products."""
    ce, fe = as_cost(c).entries, as_cost(f).entries
    if ce.shape[0] != ce.shape[1] or fe.shape[0] != ce.shape[0]:
        raise ValueError("f must map the support of c to the output support")
    out = _min_plus(_min_plus(fe.T, ce), fe)
    return CostMatrix.from_array(np.minimum(out, out.T))


def one_step_tilde(c):
    """``min_k c(i, k) + c(k, j) - c(k, k)``; infinite self-costs drop out of the min."""
    c = _require_symmetric(c)
    e = c.entries
    d = np.diag(e)
    terms = e[:, :, None] + e.T[None, :, :]  # terms[i, k, j] = c(i, k) + c(k, j)
    terms = _minus(terms, d[None, :, None])
    terms[:, np.isinf(d), :] = np.inf
    return CostMatrix.from_array(terms.min(axis=1))
