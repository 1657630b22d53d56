"""Pure numpy versions of the reductions in ``_core.pyx``."""

import numpy as np


def softmin(cost, h, eps):
    """out[i] = -eps * log(sum_j exp((h[j] - cost[i, j]) / eps)), +inf if empty."""
    with np.errstate(invalid="ignore"):
        vals = h[None, :] - cost
    vals[np.isnan(vals)] = -np.inf  # -inf - (+inf)
    best = vals.max(axis=1)
    empty = np.isneginf(best)
    shift = np.where(empty, 0.0, best)
    with np.errstate(invalid="ignore"):
        acc = np.exp((vals - shift[:, None]) / eps).sum(axis=1)
    with np.errstate(divide="ignore"):
        out = -(shift + eps * np.log(acc))
    out[empty] = np.inf
    return out


def pairwise_lse(psi_a, psi_b, log_w, eps):
    """out[i, j] = -eps * log(sum_z exp(log_w[z] - (psi_a[i, z] + psi_b[j, z]) / eps))."""
    with np.errstate(invalid="ignore"):
        vals = log_w[None, None, :] - (psi_a[:, None, :] + psi_b[None, :, :]) / eps
    vals[np.isnan(vals)] = -np.inf
    best = vals.max(axis=2)
    empty = np.isneginf(best)
    shift = np.where(empty, 0.0, best)
    with np.errstate(invalid="ignore"):
        acc = np.exp(vals - shift[:, :, None]).sum(axis=2)
    with np.errstate(divide="ignore"):
        out = -eps * (shift + np.log(acc))
    out[empty] = np.inf
    return out
