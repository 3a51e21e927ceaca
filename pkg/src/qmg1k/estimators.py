"""scikit-learn style front ends for the queue simulators.

The simulators are data-free: ``fit`` runs the simulation for the
hyper-parameters given at construction and stores the estimated
distribution in ``p_``. ``X`` and ``y`` are accepted and ignored so the
objects compose with ``clone``, ``GridSearchCV`` style parameter sweeps
and pipelines.
"""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted, check_random_state, check_scalar

from . import circuit, metrics
from .des import DesConfig, run_des
from .dist import ServiceDistribution, from_config


def _seed_from(random_state):
    if random_state is None or isinstance(random_state, numbers.Integral):
        return 0 if random_state is None else int(random_state)
    return int(check_random_state(random_state).randint(0, 2**31 - 1))


def _service(service, lam):
    if isinstance(service, ServiceDistribution):
        return service
    return from_config(service, lam=lam)


def check_distribution(p, name="p"):
    """Validate a probability vector and return it as a float array."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size < 1:
        raise ValueError(f"{name} must be a non-empty 1-d array")
    if np.any(p < 0) or not np.isclose(p.sum(), 1.0, atol=1e-10):
        raise ValueError(f"{name} must be nonnegative and sum to 1")
    return p


class _QueueDistributionMixin:
    def predict_proba(self, X=None):
        check_is_fitted(self, "p_")
        return self.p_.copy()

    def sample(self, n_samples=1, random_state=None):
        """Draw queue lengths from the fitted distribution."""
        check_is_fitted(self, "p_")
        rng = np.random.default_rng(_seed_from(random_state))
        return rng.choice(self.p_.size, size=n_samples, p=self.p_)

    def score(self, X, y=None):
        """Fidelity of the fitted distribution against the reference distribution X."""
        check_is_fitted(self, "p_")
        return metrics.fidelity(self.p_, check_distribution(X, "X"))


class QMG1Estimator(_QueueDistributionMixin, BaseEstimator):
    """Amplified M/G/1/K simulator.

    Parameters mirror :class:`qmg1k.circuit.QueueParams`; ``service`` may be a
    distribution object or a tagged config record and ``random_state`` seeds
    the measurement and rejection streams.

    Attributes
    ----------
    result_ : SimulationResult
    p_ : ndarray of shape (K + 1,)
        Estimated queue-length distribution.
    n_qubits_ : int
        Queue register width.
    """

    def __init__(self, lam=0.5, service=None, K=3, T=100, dt=None, shots=10_000,
                 epsilon0=None, engine="traced", service_mode="per_slice_cdf",
                 cap_mode="sign_flip", grover_schedule="optimal", grover_rounds=None,
                 rejection=True, random_state=None):
        self.lam = lam
        self.service = service
        self.K = K
        self.T = T
        self.dt = dt
        self.shots = shots
        self.epsilon0 = epsilon0
        self.engine = engine
        self.service_mode = service_mode
        self.cap_mode = cap_mode
        self.grover_schedule = grover_schedule
        self.grover_rounds = grover_rounds
        self.rejection = rejection
        self.random_state = random_state

    def _params(self):
        check_scalar(self.lam, "lam", numbers.Real, min_val=0, include_boundaries="neither")
        check_scalar(self.K, "K", numbers.Integral, min_val=1)
        check_scalar(self.T, "T", numbers.Integral, min_val=1)
        check_scalar(self.shots, "shots", numbers.Integral, min_val=1)
        if self.dt is not None:
            check_scalar(self.dt, "dt", numbers.Real, min_val=0, include_boundaries="neither")
        service = self.service if self.service is not None else {"type": "exponential", "rate": 1.0}
        return circuit.QueueParams(
            lam=float(self.lam), service=_service(service, self.lam), K=int(self.K), T=int(self.T),
            dt=self.dt, shots=int(self.shots), epsilon0=self.epsilon0, engine=self.engine,
            service_mode=self.service_mode, cap_mode=self.cap_mode,
            grover_schedule=self.grover_schedule, grover_rounds=self.grover_rounds,
            rejection=bool(self.rejection), seed=_seed_from(self.random_state),
        )

    def fit(self, X=None, y=None):
        params = self._params()
        self.params_ = params
        self.result_ = circuit.qmg1_run(params)
        self.p_ = self.result_.p_q
        self.n_qubits_ = params.Q
        return self


class DESEstimator(_QueueDistributionMixin, BaseEstimator):
    """Discrete-event M/G/1/K baseline with the same interface."""

    def __init__(self, lam=0.5, service=None, K=3, horizon_events=100_000,
                 warmup_fraction=0.1, random_state=None):
        self.lam = lam
        self.service = service
        self.K = K
        self.horizon_events = horizon_events
        self.warmup_fraction = warmup_fraction
        self.random_state = random_state

    def fit(self, X=None, y=None):
        check_scalar(self.lam, "lam", numbers.Real, min_val=0)
        check_scalar(self.K, "K", numbers.Integral, min_val=1)
        check_scalar(self.horizon_events, "horizon_events", numbers.Integral, min_val=1000)
        check_scalar(self.warmup_fraction, "warmup_fraction", numbers.Real, min_val=0, max_val=0.5)
        service = self.service if self.service is not None else {"type": "exponential", "rate": 1.0}
        config = DesConfig(float(self.lam), _service(service, self.lam), int(self.K),
                           int(self.horizon_events), float(self.warmup_fraction),
                           _seed_from(self.random_state))
        self.result_ = run_des(config)
        self.p_ = self.result_.p_c
        return self
