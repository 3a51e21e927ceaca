"""Discrete-event simulation of the M/G/1/K loss queue.

Single server, FIFO, capacity K counting the customer in service. Arrivals
that find K customers are lost. Occupancy is time-averaged after a warmup
fraction of simulated time is discarded, and W follows from Little's law.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dist import ServiceDistribution
from .exceptions import InvalidParameterError

_BATCH = 65536


@dataclass(frozen=True)
class DesConfig:
    lam: float
    service: ServiceDistribution
    K: int
    horizon_events: int = 100_000
    warmup_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidParameterError("arrival rate must be >= 0")
        if self.K < 1:
            raise InvalidParameterError("K must be >= 1")
        if self.horizon_events < 1000:
            raise InvalidParameterError("horizon_events must be >= 1000")
        if not 0 <= self.warmup_fraction <= 0.5:
            raise InvalidParameterError("warmup_fraction must lie in [0, 0.5]")


@dataclass(frozen=True)
class DesResult:
    p_c: np.ndarray
    L: float
    W_sojourn: float
    p_block: float
    served: int
    blocked: int
    arrivals: int
    in_system_end: int
    sim_time: float
    level_time: np.ndarray

    @property
    def W(self):
        return self.W_sojourn

    def to_dict(self):
        return {
            "p_c": [float(x) for x in self.p_c],
            "L": self.L,
            "W_sojourn": self.W_sojourn,
            "p_block": self.p_block,
            "served": self.served,
            "blocked": self.blocked,
            "arrivals": self.arrivals,
            "sim_time": self.sim_time,
        }


def _empty_result(K):
    p = np.zeros(K + 1)
    p[0] = 1.0
    return DesResult(p, 0.0, 0.0, 0.0, 0, 0, 0, 0, 0.0, np.zeros(K + 1))


def run_des(config):
    K = config.K
    if config.lam == 0:
        return _empty_result(K)
    rng = np.random.default_rng(config.seed)
    horizon = config.horizon_events

    inter = rng.exponential(1.0 / config.lam, size=_BATCH)
    serv = np.asarray(config.service.sample(rng, size=_BATCH), dtype=float)
    ia = si = 0

    arr_times = []     # admitted arrival times
    dep_times = []     # departure times of admitted customers (nondecreasing)
    blocked_times = []
    t = 0.0
    last_dep = 0.0
    head = 0           # first departure not yet processed
    events = 0
    while True:
        if ia == _BATCH:
            inter = rng.exponential(1.0 / config.lam, size=_BATCH)
            ia = 0
        t += inter[ia]
        ia += 1
        # departures up to this arrival
        n_dep = len(dep_times)
        while head < n_dep and dep_times[head] <= t:
            head += 1
            events += 1
            if events >= horizon:
                break
        if events >= horizon:
            t_end = dep_times[head - 1]
            break
        events += 1
        in_system = len(dep_times) - head
        if in_system >= K:
            blocked_times.append(t)
        else:
            if si == _BATCH:
                serv = np.asarray(config.service.sample(rng, size=_BATCH), dtype=float)
                si = 0
            last_dep = max(t, last_dep) + serv[si]
            si += 1
            arr_times.append(t)
            dep_times.append(last_dep)
        if events >= horizon:
            t_end = t
            break

    arr = np.asarray(arr_times)
    dep = np.asarray(dep_times)
    blk = np.asarray(blocked_times)
    dep_done = dep[dep <= t_end]

    # piecewise-constant occupancy from +1/-1 change points
    times = np.concatenate([arr, dep_done])
    steps = np.concatenate([np.ones(arr.size, dtype=np.int64), -np.ones(dep_done.size, dtype=np.int64)])
    # departures sort before arrivals at equal times
    order = np.lexsort((steps, times))
    times, steps = times[order], steps[order]
    level = np.cumsum(steps)
    start = config.warmup_fraction * t_end
    seg_lo = np.concatenate([[0.0], times])
    seg_hi = np.concatenate([times, [t_end]])
    seg_level = np.concatenate([[0], level])
    held = np.clip(seg_hi, start, None) - np.clip(seg_lo, start, None)
    level_time = np.bincount(seg_level, weights=held, minlength=K + 1)[: K + 1]
    observed = t_end - start
    p_c = level_time / level_time.sum()

    n_arr_post = int((arr >= start).sum() + (blk >= start).sum())
    n_blk_post = int((blk >= start).sum())
    p_block = n_blk_post / n_arr_post if n_arr_post else 0.0
    L = float(np.dot(np.arange(K + 1), p_c))
    lam_eff = config.lam * (1.0 - p_block)
    W = L / lam_eff if lam_eff > 0 else float("inf")
    return DesResult(
        p_c=p_c,
        L=L,
        W_sojourn=W,
        p_block=p_block,
        served=int(dep_done.size),
        blocked=int(blk.size),
        arrivals=int(arr.size + blk.size),
        in_system_end=int(arr.size - dep_done.size),
        sim_time=float(observed),
        level_time=level_time,
    )


def replicate_seed(seed, index):
    """Seed for replication `index`; replication 0 reuses the base seed."""
    if index == 0:
        return seed
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0])


def stationary_estimate(config, replications=1):
    if replications < 1:
        raise InvalidParameterError("replications must be >= 1")
    acc = np.zeros(config.K + 1)
    for i in range(replications):
        cfg = DesConfig(config.lam, config.service, config.K, config.horizon_events,
                        config.warmup_fraction, replicate_seed(config.seed, i))
        acc += run_des(cfg).p_c
    return acc / acc.sum()
