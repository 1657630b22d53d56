"""Selects the compiled reductions when the extension is built, numpy otherwise.

The two implementations share one contract: inputs are float64 arrays that may
hold ``+inf`` costs and ``-inf`` log-weights, and a row whose every term
vanishes reduces to ``+inf``.
"""

import numpy as np

from . import _fallback

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

_ACTIVE = "compiled" if _core is not None else "python"


def available():
    """Names of the backends importable in this environment."""
    return ["compiled", "python"] if _core is not None else ["python"]


def active():
    return _ACTIVE


def set_backend(name):
    """Switch between ``"compiled"`` and ``"python"``; returns the previous name."""
    global _ACTIVE
    if name not in ("compiled", "python"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "compiled" and _core is None:
        raise ImportError("compiled extension debiasable._core is not built")
    previous, _ACTIVE = _ACTIVE, name
    return previous


def _impl():
    return _core if _ACTIVE == "compiled" else _fallback


def softmin(cost, h, eps):
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    return _impl().softmin(cost, h, float(eps))


def pairwise_lse(psi_a, psi_b, log_w, eps):
    psi_a = np.ascontiguousarray(psi_a, dtype=np.float64)
    psi_b = np.ascontiguousarray(psi_b, dtype=np.float64)
    log_w = np.ascontiguousarray(log_w, dtype=np.float64)
    return _impl().pairwise_lse(psi_a, psi_b, log_w, float(eps))
