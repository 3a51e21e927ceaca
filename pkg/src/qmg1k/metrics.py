"""Distribution comparison metrics: fidelity, KL/JSD, total variation, relative error."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import rel_entr

from .exceptions import InvalidParameterError

LOG_OFFSET = 1e-10


def _pair(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise InvalidParameterError(f"length mismatch: {p.shape} vs {q.shape}")
    return p, q


def fidelity(p, q):
    """Squared Bhattacharyya coefficient (sum sqrt(p q))^2."""
    p, q = _pair(p, q)
    bc = np.sum(np.sqrt(np.clip(p, 0, None) * np.clip(q, 0, None)))
    return float(min(1.0, bc * bc))


def kl(p, q):
    p, q = _pair(p, q)
    return float(np.sum(rel_entr(p, q)))


def jsd(p, q):
    """Jensen-Shannon divergence in nats."""
    p, q = _pair(p, q)
    m = 0.5 * (p + q)
    value = 0.5 * (np.sum(rel_entr(p, m)) + np.sum(rel_entr(q, m)))
    return float(min(max(value, 0.0), math.log(2)))


def tv_distance(p, q):
    """Return (half L1, L1)."""
    p, q = _pair(p, q)
    l1 = float(np.abs(p - q).sum())
    return 0.5 * l1, l1


def relative_error(est, ref):
    if ref == 0:
        raise InvalidParameterError("relative error against a zero reference")
    return abs(est - ref) / abs(ref)


def fidelity_residual(f):
    return 1.0 - f


def log_offset(x, base=10.0):
    """log(x + 1e-10), base 10 by default."""
    return math.log(x + LOG_OFFSET, base)


@dataclass(frozen=True)
class MetricReport:
    fidelity: float
    jsd: float
    tv_halved: float
    l1_gap: float
    rel_err_L: float
    rel_err_W: float


def compare(p_est, p_ref, L_est=None, L_ref=None, W_est=None, W_ref=None):
    half, l1 = tv_distance(p_est, p_ref)

    def _rel(a, b):
        if a is None or b is None or b == 0 or not math.isfinite(a) or not math.isfinite(b):
            return float("nan")
        return relative_error(a, b)

    return MetricReport(
        fidelity=fidelity(p_est, p_ref),
        jsd=jsd(p_est, p_ref),
        tv_halved=half,
        l1_gap=l1,
        rel_err_L=_rel(L_est, L_ref),
        rel_err_W=_rel(W_est, W_ref),
    )
