"""Service-time laws for the M/G/1/K simulators.

Every law exposes a CDF, its first two moments, discrete hazard bins and a
seeded sampler. Instances are immutable and hashable so they can key caches.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import ndtr

from .exceptions import InvalidParameterError

# survival at or below this is treated as an absorbed bin (hazard 1)
SURVIVAL_FLOOR = 1e-12


def expm(A, tol=1e-12):
    """Matrix exponential by scaling and squaring with a truncated Taylor series.

    The matrix is scaled by 2**-s so that its infinity norm is at most 0.5,
    the series is summed until a term drops below `tol` (infinity norm), and
    the result is squared s times.
    """
    A = np.asarray(A, dtype=float)
    norm = np.abs(A).sum(axis=1).max() if A.size else 0.0
    s = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    B = A / (2.0 ** s)
    result = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    k = 1
    while True:
        term = term @ B / k
        result = result + term
        if np.abs(term).sum(axis=1).max() < tol:
            break
        k += 1
    for _ in range(s):
        result = result @ result
    return result


class ServiceDistribution:
    """Base class; subclasses implement `_cdf`, `moments` and `sample`."""

    kind = "abstract"

    def cdf(self, t):
        t_arr = np.asarray(t, dtype=float)
        out = np.where(t_arr < 0, 0.0, self._cdf(np.maximum(t_arr, 0.0)))
        out = np.clip(out, 0.0, 1.0)
        return float(out) if out.ndim == 0 else out

    def _cdf(self, t):
        raise NotImplementedError

    def moments(self):
        raise NotImplementedError

    @property
    def mean(self):
        return self.moments()[0]

    @property
    def variance(self):
        m1, m2 = self.moments()
        return m2 - m1 * m1

    def hazard_bin(self, r, dt):
        """Probability of completing in bin r given survival through r bins."""
        if r < 0 or dt <= 0:
            raise InvalidParameterError("hazard_bin needs r >= 0 and dt > 0")
        lo = self.cdf(r * dt)
        survival = 1.0 - lo
        if survival <= SURVIVAL_FLOOR:
            return 1.0
        h = (self.cdf((r + 1) * dt) - lo) / survival
        return float(min(1.0, max(0.0, h)))

    def hazard_table(self, n_bins, dt):
        return np.array([self.hazard_bin(r, dt) for r in range(n_bins)])

    def sample(self, rng, size=None):
        raise NotImplementedError

    def to_config(self):
        raise NotImplementedError


@dataclass(frozen=True)
class Exponential(ServiceDistribution):
    rate: float = 1.0
    kind = "exponential"

    def __post_init__(self):
        if not self.rate > 0:
            raise InvalidParameterError(f"exponential rate must be > 0, got {self.rate}")

    def _cdf(self, t):
        return -np.expm1(-self.rate * t)

    def moments(self):
        return 1.0 / self.rate, 2.0 / self.rate ** 2

    def sample(self, rng, size=None):
        return rng.exponential(1.0 / self.rate, size=size)

    def to_config(self):
        return {"type": self.kind, "rate": self.rate}


@dataclass(frozen=True)
class Normal(ServiceDistribution):
    """Normal service time left-truncated at zero and renormalised."""

    mean_: float = 1.0
    var: float = 0.05
    kind = "normal"

    def __post_init__(self):
        if not self.var > 0:
            raise InvalidParameterError(f"normal variance must be > 0, got {self.var}")

    @property
    def _sd(self):
        return math.sqrt(self.var)

    @property
    def _lower_mass(self):
        return float(ndtr(-self.mean_ / self._sd))

    def _frozen(self):
        a = -self.mean_ / self._sd
        return stats.truncnorm(a, np.inf, loc=self.mean_, scale=self._sd)

    def _cdf(self, t):
        z = ndtr((t - self.mean_) / self._sd)
        lower = self._lower_mass
        return (z - lower) / (1.0 - lower)

    def moments(self):
        m, v = self._frozen().stats(moments="mv")
        m, v = float(m), float(v)
        return m, v + m * m

    def sample(self, rng, size=None):
        return self._frozen().rvs(size=size, random_state=rng)

    def to_config(self):
        return {"type": self.kind, "mean": self.mean_, "variance": self.var}


@dataclass(frozen=True)
class Uniform(ServiceDistribution):
    lo: float = 0.5
    hi: float = 1.5
    kind = "uniform"

    def __post_init__(self):
        if not (0 <= self.lo < self.hi):
            raise InvalidParameterError(f"uniform needs 0 <= lo < hi, got ({self.lo}, {self.hi})")

    def _cdf(self, t):
        return np.clip((t - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def moments(self):
        m = 0.5 * (self.lo + self.hi)
        return m, m * m + (self.hi - self.lo) ** 2 / 12.0

    def sample(self, rng, size=None):
        return rng.uniform(self.lo, self.hi, size=size)

    def to_config(self):
        return {"type": self.kind, "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class Deterministic(ServiceDistribution):
    d: float = 1.0
    kind = "deterministic"

    def __post_init__(self):
        if not self.d > 0:
            raise InvalidParameterError(f"deterministic d must be > 0, got {self.d}")

    def _cdf(self, t):
        return np.where(t >= self.d, 1.0, 0.0)

    def moments(self):
        return self.d, self.d * self.d

    def sample(self, rng, size=None):
        if size is None:
            return self.d
        return np.full(size, self.d)

    def to_config(self):
        return {"type": self.kind, "d": self.d}


@dataclass(frozen=True)
class PhaseType(ServiceDistribution):
    """Continuous phase-type law: absorption time of a CTMC started from alpha.

    `alpha` and `T` are stored as tuples so instances stay hashable.
    """

    alpha: tuple = (1.0, 0.0, 0.0)
    T: tuple = ((-1.0, 1.0, 0.0), (0.0, -1.0, 1.0), (0.0, 0.0, -1.0))
    kind = "phase_type"
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        T = np.asarray(self.T, dtype=float)
        object.__setattr__(self, "alpha", tuple(float(a) for a in alpha))
        object.__setattr__(self, "T", tuple(tuple(float(x) for x in row) for row in T))
        if T.ndim != 2 or T.shape[0] != T.shape[1] or alpha.shape != (T.shape[0],):
            raise InvalidParameterError("phase-type alpha/T shapes do not match")
        if np.any(alpha < 0) or not math.isclose(alpha.sum(), 1.0, abs_tol=1e-12):
            raise InvalidParameterError("phase-type alpha must be a probability vector")
        off = T - np.diag(np.diag(T))
        if np.any(np.diag(T) >= 0) or np.any(off < 0) or np.any(T.sum(axis=1) > 1e-12):
            raise InvalidParameterError("phase-type T is not a valid sub-generator")

    @classmethod
    def erlang_chain(cls, lam):
        """The three-phase law with the scenario arrival rate embedded in T."""
        return cls(
            alpha=(1.0, 0.0, 0.0),
            T=((-lam, lam, 0.0), (0.0, -lam, lam), (0.0, 0.0, -1.0)),
        )

    @property
    def _alpha(self):
        return np.asarray(self.alpha)

    @property
    def _T(self):
        return np.asarray(self.T)

    def _cdf(self, t):
        t = np.asarray(t, dtype=float)
        T = self._T
        one = np.ones(T.shape[0])
        flat = [1.0 - self._alpha @ expm(T * ti) @ one for ti in t.ravel()]
        return np.asarray(flat).reshape(t.shape)

    def moments(self):
        if "moments" not in self._cache:
            T = self._T
            one = np.ones(T.shape[0])
            x = np.linalg.solve(T, one)  # T^-1 1
            m1 = -self._alpha @ x
            m2 = 2.0 * self._alpha @ np.linalg.solve(T, x)
            self._cache["moments"] = (float(m1), float(m2))
        return self._cache["moments"]

    def sample(self, rng, size=None):
        n = 1 if size is None else int(np.prod(size))
        T = self._T
        k = T.shape[0]
        exit_rates = -T.sum(axis=1)
        out_rates = -np.diag(T)
        # jump matrix over phases plus an absorbing column
        jump = np.zeros((k, k + 1))
        jump[:, :k] = T / out_rates[:, None]
        np.fill_diagonal(jump[:, :k], 0.0)
        jump[:, k] = exit_rates / out_rates
        cum = np.cumsum(jump, axis=1)
        cum[:, -1] = 1.0

        phase = rng.choice(k, size=n, p=self._alpha)
        total = np.zeros(n)
        active = np.arange(n)
        while active.size:
            ph = phase[active]
            total[active] += rng.exponential(1.0, size=active.size) / out_rates[ph]
            u = rng.random(active.size)
            nxt = (u[:, None] > cum[ph]).sum(axis=1)
            phase[active] = nxt
            active = active[nxt < k]
        if size is None:
            return float(total[0])
        return total.reshape(size)

    def to_config(self):
        return {"type": self.kind, "alpha": list(self.alpha), "T": [list(r) for r in self.T]}


_KINDS = {
    "exponential": Exponential,
    "normal": Normal,
    "uniform": Uniform,
    "deterministic": Deterministic,
    "phase_type": PhaseType,
}


def from_config(record, lam=None):
    """Build a distribution from a tagged record such as {"type": "uniform", "lo": 0.5, "hi": 1.5}.

    A phase-type record without `alpha`/`T` resolves to the three-phase law
    coupled to the arrival rate `lam`.
    """
    if isinstance(record, ServiceDistribution):
        return record
    try:
        kind = record["type"]
    except (KeyError, TypeError):
        raise InvalidParameterError(f"distribution record needs a 'type': {record!r}") from None
    if kind not in _KINDS:
        raise InvalidParameterError(f"unknown distribution type {kind!r}")
    try:
        if kind == "exponential":
            return Exponential(rate=float(record.get("rate", 1.0)))
        if kind == "normal":
            return Normal(mean_=float(record.get("mean", 1.0)), var=float(record.get("variance", 0.05)))
        if kind == "uniform":
            return Uniform(lo=float(record.get("lo", 0.5)), hi=float(record.get("hi", 1.5)))
        if kind == "deterministic":
            return Deterministic(d=float(record.get("d", 1.0)))
        if "T" in record:
            return PhaseType(alpha=tuple(record.get("alpha", (1.0, 0.0, 0.0))), T=tuple(map(tuple, record["T"])))
        if lam is None:
            raise InvalidParameterError("phase_type without T needs the arrival rate")
        return PhaseType.erlang_chain(lam)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidParameterError):
            raise
        raise InvalidParameterError(f"bad distribution record {record!r}: {exc}") from exc


def grid_laws(lam):
    """The four service laws of the experimental grid, all with unit-rate scale."""
    return [Normal(1.0, 0.05), Exponential(1.0), Uniform(0.5, 1.5), PhaseType.erlang_chain(lam)]


# functional aliases
def cdf(dist, t):
    return dist.cdf(t)


def moments(dist):
    return dist.moments()


def hazard_bin(dist, r, dt):
    return dist.hazard_bin(r, dt)


def sample(dist, rng, size=None):
    return dist.sample(rng, size)
