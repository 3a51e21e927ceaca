"""Closed-form queueing quantities and the error bounds used as test references."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidParameterError


@dataclass(frozen=True)
class Bounds:
    statistical_tv_dkw: float
    statistical_tv_main: float
    statistical_tv_correctness: float
    expected_tv: float
    discretization: float
    discretization_proof: float
    rejection_decay: float
    acceptance_lower: float

    def as_dict(self):
        return dict(self.__dict__)


def mm1k_steady_state(rho, K):
    """Truncated-geometric stationary law of M/M/1/K: p_n proportional to rho**n."""
    if rho < 0:
        raise InvalidParameterError("rho must be >= 0")
    n = np.arange(K + 1)
    if rho == 0:
        p = np.zeros(K + 1)
        p[0] = 1.0
        return p
    if math.isclose(rho, 1.0, rel_tol=0, abs_tol=1e-12):
        return np.full(K + 1, 1.0 / (K + 1))
    # work in log space so rho > 1 with large K stays finite
    logw = n * math.log(rho)
    w = np.exp(logw - logw.max())
    return w / w.sum()


def expected_L(rho, K):
    """Mean number in system, rho*(1-(K+1)rho^K+K rho^(K+1)) / ((1-rho)(1-rho^(K+1)))."""
    if not 0 <= rho < 1:
        raise InvalidParameterError(f"expected_L needs 0 <= rho < 1, got {rho}")
    if rho == 0:
        return 0.0
    num = 1.0 - (K + 1) * rho ** K + K * rho ** (K + 1)
    return rho * num / ((1.0 - rho) * (1.0 - rho ** (K + 1)))


def mean_occupancy(p):
    p = np.asarray(p, dtype=float)
    return float(np.dot(np.arange(p.size), p))


def statistical_bounds(N, delta, K):
    """High-probability and expected TV bounds for an N-shot empirical distribution.

    Returns a dict with the three high-probability forms in circulation plus
    the expected-TV bound:

    * ``dkw``: sqrt(ln(2(K+1)/delta) / N) / (2 sqrt 2)
    * ``main``: (sqrt 2 / 2) sqrt(ln(2/delta) / N)
    * ``correctness``: sqrt((2/N) ln(2**(K+1)/delta))
    * ``expected``: (K+1) / (4 sqrt N)
    """
    if N < 1 or not 0 < delta < 1:
        raise InvalidParameterError("need N >= 1 and 0 < delta < 1")
    return {
        "dkw": math.sqrt(math.log(2 * (K + 1) / delta) / N) / (2 * math.sqrt(2)),
        "main": math.sqrt(2) / 2 * math.sqrt(math.log(2 / delta) / N),
        "correctness": math.sqrt(2 / N * ((K + 1) * math.log(2) - math.log(delta))),
        "expected": (K + 1) / (4 * math.sqrt(N)),
    }


def discretization_bound(lam, mu2, dt):
    return (lam + mu2) * dt


def discretization_bound_proof(lam, mean, variance, dt):
    """Leading-order constant from the Taylor argument: (lam^2/2 + var/(2 mean^2)) dt."""
    return (lam * lam / 2 + variance / (2 * mean * mean)) * dt


def grover_angle(m_size, K):
    if not 1 <= m_size <= K + 1:
        raise InvalidParameterError(f"marked size {m_size} outside [1, {K + 1}]")
    return math.asin(math.sqrt(m_size / (K + 1)))


def grover_success(m_size, K, R):
    """sin^2((2R+1) theta) with sin^2 theta = |M| / (K+1)."""
    if R < 0:
        raise InvalidParameterError("R must be >= 0")
    theta = grover_angle(m_size, K)
    return math.sin((2 * R + 1) * theta) ** 2


def grover_proposal(region, K, R):
    """Amplified proposal: success mass spread evenly on the region, the rest evenly off it."""
    region = sorted(set(region))
    if not region:
        raise InvalidParameterError("region must be nonempty")
    succ = grover_success(len(region), K, R)
    out = np.full(K + 1, (1.0 - succ) / (K + 1 - len(region)) if len(region) < K + 1 else 0.0)
    out[region] = succ / len(region)
    return out


def gamma_factor(pi, pi_hat, region, R=None):
    """Tail-shape factor min_region(pi) / max_region(pi_hat) and the acceptance floor.

    With R given, the floor is gamma * sin^2((2R+1) theta0) where
    sin^2 theta0 = |region| / (K+1); otherwise it is gamma times the
    proposal mass on the region.
    """
    region = sorted(set(region))
    if not region:
        raise InvalidParameterError("region must be nonempty")
    pi = np.asarray(pi, dtype=float)
    pi_hat = np.asarray(pi_hat, dtype=float)
    top = pi_hat[region].max()
    if top <= 0:
        raise InvalidParameterError("pi_hat must be positive on the region")
    gamma = float(pi[region].min() / top)
    K = pi.size - 1
    mass = grover_success(len(region), K, R) if R is not None else float(pi_hat[region].sum())
    return gamma, gamma * mass


def rejection_decay_bound(m_size, K, R):
    """0.5 * theta * exp(-R * asin(theta)) with theta = sqrt(|M| / (K+1))."""
    if not 1 <= m_size <= K + 1:
        raise InvalidParameterError(f"marked size {m_size} outside [1, {K + 1}]")
    theta = math.sqrt(m_size / (K + 1))
    return 0.5 * theta * math.exp(-R * math.asin(theta))


def all_bounds(*, N, delta, K, lam, dist, dt, m_size, R, pi=None, pi_hat=None, region=None):
    stat = statistical_bounds(N, delta, K)
    mean, mu2 = dist.moments()
    if pi is not None and pi_hat is not None and region:
        acc = gamma_factor(pi, pi_hat, region, R)[1]
    else:
        acc = float("nan")
    return Bounds(
        statistical_tv_dkw=stat["dkw"],
        statistical_tv_main=stat["main"],
        statistical_tv_correctness=stat["correctness"],
        expected_tv=stat["expected"],
        discretization=discretization_bound(lam, mu2, dt),
        discretization_proof=discretization_bound_proof(lam, mean, mu2 - mean * mean, dt),
        rejection_decay=rejection_decay_bound(m_size, K, R),
        acceptance_lower=acc,
    )
