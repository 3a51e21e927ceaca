"""The amplified M/G/1/K simulation pipeline.

A run evolves the queue-length distribution over T time slices, amplifies
the states around the mean queue length with Grover rounds, measures the
queue register and optionally passes the samples through a rejection filter
that re-weights them towards the stationary law.

Two slice engines are interchangeable:

* ``exact`` builds every slice as a statevector circuit (arrival/service
  ancillas, comparator flags, guarded modular INC/DEC) and traces out the
  ancillas at the end of the slice;
* ``traced`` applies the induced (K+1)x(K+1) transition matrix directly.

Both accept ``service_mode="residual_hazard"``, in which a residual-service
register carries the elapsed service age and the service ancilla is
rotated by the discrete hazard of that age.
"""
from __future__ import annotations

import functools
import math
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from . import analytic, qcore
from .des import DesConfig, stationary_estimate
from .dist import Exponential, ServiceDistribution
from .exceptions import InvalidParameterError, ProposalSupportError
from .qcore import StateVector

ENGINES = ("exact", "traced", "auto")
SERVICE_MODES = ("per_slice_cdf", "residual_hazard")
CAP_MODES = ("sign_flip", "two_reflection")
SCHEDULES = ("optimal", "paper_formula")
CENTERS = ("takacs", "ratio_floor", "load_scaled")
EPSILON_RULES = ("half_qubits", "sqrt_K")

# qubits above which "auto" switches to the traced engine
AUTO_EXACT_LIMIT = 14


def n_queue_qubits(K):
    return max(1, math.ceil(math.log2(K + 1)))


@dataclass(frozen=True)
class QueueParams:
    lam: float
    service: ServiceDistribution
    K: int
    T: int = 100
    dt: float | None = None
    shots: int = 10_000
    epsilon0: int | None = None
    engine: str = "traced"
    service_mode: str = "per_slice_cdf"
    cap_mode: str = "sign_flip"
    grover_schedule: str = "optimal"
    grover_rounds: int | None = None
    rejection: bool = True
    seed: int = 0
    center: str = "takacs"
    epsilon_rule: str = "half_qubits"
    residual_qubits: int | None = None
    initial: tuple | None = None
    target_events: int = 1_000_000
    target_seed: int = 12345
    max_qubits: int = qcore.MAX_QUBITS

    def __post_init__(self):
        if not self.lam > 0:
            raise InvalidParameterError(f"lambda must be > 0, got {self.lam}")
        if not isinstance(self.service, ServiceDistribution):
            raise InvalidParameterError("service must be a ServiceDistribution")
        if int(self.K) != self.K or self.K < 1:
            raise InvalidParameterError(f"K must be an integer >= 1, got {self.K}")
        if self.T < 1:
            raise InvalidParameterError("T must be >= 1")
        if self.dt is not None and not self.dt > 0:
            raise InvalidParameterError("dt must be > 0")
        if self.shots < 1:
            raise InvalidParameterError("shots must be >= 1")
        if self.epsilon0 is not None and not 0 <= self.epsilon0 <= self.K:
            raise InvalidParameterError("epsilon0 must lie in [0, K]")
        for name, allowed in (("engine", ENGINES), ("service_mode", SERVICE_MODES),
                              ("cap_mode", CAP_MODES), ("grover_schedule", SCHEDULES),
                              ("center", CENTERS), ("epsilon_rule", EPSILON_RULES)):
            if getattr(self, name) not in allowed:
                raise InvalidParameterError(f"{name} must be one of {allowed}")
        if self.grover_rounds is not None and self.grover_rounds < 0:
            raise InvalidParameterError("grover_rounds must be >= 0")
        if self.initial is not None:
            init = np.asarray(self.initial, dtype=float)
            if init.shape != (self.K + 1,) or np.any(init < 0) or not math.isclose(init.sum(), 1.0, abs_tol=1e-10):
                raise InvalidParameterError("initial must be a distribution over 0..K")
            object.__setattr__(self, "initial", tuple(float(x) for x in init))

    @property
    def Q(self):
        return n_queue_qubits(self.K)

    @property
    def step(self):
        """Slice width; defaults to 1/T when dt is not given."""
        return self.dt if self.dt is not None else 1.0 / self.T

    @property
    def rho(self):
        return self.lam * self.service.mean

    @property
    def m_residual(self):
        return self.residual_qubits if self.residual_qubits is not None else n_queue_qubits(self.K)

    def slice_qubits(self):
        if self.service_mode == "residual_hazard":
            return self.Q + 2 * self.m_residual + 4
        return self.Q + 4

    def resolved_engine(self):
        if self.engine != "auto":
            return self.engine
        return "exact" if self.slice_qubits() <= AUTO_EXACT_LIMIT else "traced"


@dataclass
class SimulationResult:
    raw_histogram: np.ndarray
    accepted_histogram: np.ndarray
    p_q: np.ndarray
    L_hat: float
    W_hat: float
    p_block_hat: float
    R_used: int
    p_succ_measured: float
    acceptance_rate: float
    gate_census: dict
    marked: list = field(default_factory=list)
    p_slices: np.ndarray | None = None
    proposal: np.ndarray | None = None
    engine: str = ""

    def to_dict(self):
        return {
            "raw_histogram": [int(x) for x in self.raw_histogram],
            "accepted_histogram": [int(x) for x in self.accepted_histogram],
            "p_q": [float(x) for x in self.p_q],
            "L_hat": float(self.L_hat),
            "W_hat": float(self.W_hat),
            "p_block_hat": float(self.p_block_hat),
            "R_used": int(self.R_used),
            "p_succ_measured": float(self.p_succ_measured),
            "acceptance_rate": float(self.acceptance_rate),
            "gate_census": dict(sorted(self.gate_census.items())),
        }


# -- slice probabilities ------------------------------------------------------

def slice_probabilities(params):
    """Per-slice arrival and service-completion probabilities (p_lambda, p_mu)."""
    dt = params.step
    p_lam = -math.expm1(-params.lam * dt)
    p_mu = float(params.service.cdf(dt))
    return p_lam, p_mu


def _birth_death_matrix(K, up, down):
    """Column-stochastic matrix: entry [j, i] is Pr(i -> j)."""
    M = np.zeros((K + 1, K + 1))
    for n in range(K + 1):
        u = up if n < K else 0.0
        d = down if n > 0 else 0.0
        if n < K:
            M[n + 1, n] = u
        if n > 0:
            M[n - 1, n] = d
        M[n, n] = 1.0 - u - d
    return M


def slice_transition_matrix(params):
    p_lam, p_mu = slice_probabilities(params)
    return _birth_death_matrix(params.K, p_lam * (1 - p_mu), (1 - p_lam) * p_mu)


def _initial(params):
    if params.initial is not None:
        return np.asarray(params.initial, dtype=float)
    return np.full(params.K + 1, 1.0 / (params.K + 1))


# -- capacity enforcement -----------------------------------------------------

def legal_uniform(Q, K):
    amps = np.zeros(1 << Q, dtype=complex)
    amps[: K + 1] = 1.0 / math.sqrt(K + 1)
    return StateVector(Q, amps)


def apply_cap(state, K, cap_mode, register=None):
    """CAP on the queue register of `state`.

    ``sign_flip`` negates amplitudes on n > K. ``two_reflection`` applies
    (1 - 2L)(1 - 2|psi0><psi0|) with psi0 the uniform legal superposition;
    it needs a queue-only state.
    """
    register = register or (0, state.n_qubits)
    if cap_mode == "sign_flip":
        return qcore.phase_flip(state, register, lambda v: v > K, kind="cap_phase_flip")
    if register != (0, state.n_qubits):
        raise InvalidParameterError("two_reflection CAP acts on a queue-only state")
    psi0 = legal_uniform(state.n_qubits, K)
    qcore.reflect_about(state, psi0, kind="cap_reflection")    # 2|psi0><psi0| - I
    state.amplitudes *= -1.0                                     # R_K
    qcore.phase_flip(state, register, lambda v: v <= K, kind="cap_reflection")  # R_L
    return state


def _cap_probs(p, params, census=None):
    if params.cap_mode == "sign_flip" and census is None:
        return p
    state = StateVector.from_probs(params.Q, p, census=census)
    apply_cap(state, params.K, params.cap_mode)
    out = state.probabilities()[: params.K + 1]
    return out / out.sum()


# -- per-slice engines --------------------------------------------------------

def run_slices_traced(params, T=None):
    """T applications of the slice matrix to the start distribution (uniform by default)."""
    T = params.T if T is None else T
    if params.service_mode == "residual_hazard":
        return run_residual_traced(params, T=T)
    M = slice_transition_matrix(params)
    p = _initial(params)
    for _ in range(T):
        p = M @ p
        p = _cap_probs(p, params)
    return p / p.sum()


def _slice_layout(Q):
    return {"queue": (0, Q), "a_a": Q, "a_s": Q + 1, "c_inc": Q + 2, "c_dec": Q + 3}


def exact_slice(p, params, census=None, trace=None):
    """One statevector slice starting from amplitudes sqrt(p); returns the queue marginal.

    If `trace` is a list, (label, state copy) pairs are appended after the
    arrival rotation, the service rotation and the INC/DEC stage.
    """
    Q, K = params.Q, params.K
    lay = _slice_layout(Q)
    census = census if census is not None else Counter()
    state = StateVector.from_probs(Q + 4, p, census=census, max_qubits=params.max_qubits)
    p_lam, p_mu = slice_probabilities(params)
    qcore.apply_1q(state, qcore.ry_matrix(qcore.theta_for_prob(p_lam)), lay["a_a"], kind="ry")
    if trace is not None:
        trace.append(("arrival", state.copy()))
    qcore.apply_1q(state, qcore.ry_matrix(qcore.theta_for_prob(p_mu)), lay["a_s"], kind="ry")
    if trace is not None:
        trace.append(("service", state.copy()))
    _guarded_inc_dec(state, lay, K)
    if trace is not None:
        trace.append(("inc_dec", state.copy()))
    return qcore.marginal(state, lay["queue"])[: K + 1]


def _guarded_inc_dec(state, lay, K):
    q = lay["queue"]
    qcore.comparator(state, q, lambda v: v < K, lay["c_inc"])
    qcore.modular_shift(state, q, +1, controls=[(lay["a_a"], 1), (lay["a_s"], 0), (lay["c_inc"], 1)])
    qcore.comparator(state, q, lambda v: v > 0, lay["c_dec"])
    qcore.modular_shift(state, q, -1, controls=[(lay["a_a"], 0), (lay["a_s"], 1), (lay["c_dec"], 1)])


def run_slices_exact(params, T=None, census=None):
    T = params.T if T is None else T
    if params.service_mode == "residual_hazard":
        return run_residual_exact(params, T=T, census=census)
    census = census if census is not None else Counter()
    census["state_prep"] += 1
    p = _initial(params)
    for _ in range(T):
        p = exact_slice(p, params, census)
        p = _cap_probs(p, params, census)
    return p / p.sum()


# -- residual-hazard engines --------------------------------------------------

def hazard_angles(params):
    m = params.m_residual
    h = params.service.hazard_table(1 << m, params.step)
    return 2.0 * np.arcsin(np.sqrt(h)), h


def _next_age(n, r, a_s, top):
    """Age of the service in progress after a slice; 0 when idle or after a completion."""
    return np.where((n == 0) | (a_s == 1), 0, np.minimum(r + 1, top))


def residual_transition_matrix(params):
    """Joint (n, r) chain, column-stochastic over flat index n + (K+1) * r."""
    K, m = params.K, params.m_residual
    R = 1 << m
    top = R - 1
    p_lam, _ = slice_probabilities(params)
    _, h = hazard_angles(params)
    size = (K + 1) * R
    M = np.zeros((size, size))
    for r in range(R):
        for n in range(K + 1):
            src = n + (K + 1) * r
            for a_a, pa in ((0, 1 - p_lam), (1, p_lam)):
                for a_s, ps in ((0, 1 - h[r]), (1, h[r])):
                    w = pa * ps
                    if w == 0:
                        continue
                    if (a_a, a_s) == (1, 0) and n < K:
                        n2 = n + 1
                    elif (a_a, a_s) == (0, 1) and n > 0:
                        n2 = n - 1
                    else:
                        n2 = n
                    r2 = int(_next_age(np.int64(n), np.int64(r), a_s, top))
                    M[n2 + (K + 1) * r2, src] += w
    return M


def _initial_joint(params):
    P = np.zeros((params.K + 1, 1 << params.m_residual))
    P[:, 0] = _initial(params)
    return P


def run_residual_traced(params, T=None, return_joint=False, initial_joint=None):
    T = params.T if T is None else T
    K = params.K
    P = _initial_joint(params) if initial_joint is None else np.asarray(initial_joint, dtype=float)
    M = residual_transition_matrix(params)
    x = P.flatten(order="F")
    for _ in range(T):
        x = M @ x
    P = x.reshape((K + 1, -1), order="F")
    p = P.sum(axis=1)
    return (p, P) if return_joint else p


def exact_residual_slice(P, params, census=None):
    """One statevector slice over (queue, age) from joint distribution P[n, r]."""
    Q, K, m = params.Q, params.K, params.m_residual
    census = census if census is not None else Counter()
    top = (1 << m) - 1
    q, r = (0, Q), (Q, m)
    a_a, a_s = Q + m, Q + m + 1
    lay = {"queue": q, "a_a": a_a, "a_s": a_s, "c_inc": Q + m + 2, "c_dec": Q + m + 3}
    r_new = (Q + m + 4, m)
    n_qubits = Q + 2 * m + 4
    amps = np.zeros(1 << n_qubits, dtype=complex)
    nn, rr = np.nonzero(P > 0)
    amps[nn + (rr << Q)] = np.sqrt(P[nn, rr])
    state = StateVector(n_qubits, amps, census=census, max_qubits=params.max_qubits)

    p_lam, _ = slice_probabilities(params)
    angles, _ = hazard_angles(params)
    qcore.apply_1q(state, qcore.ry_matrix(qcore.theta_for_prob(p_lam)), a_a, kind="ry")
    qcore.multiplexed_ry(state, r, a_s, angles)
    qcore.xor_function(state, [q, r, (a_s, 1)], r_new, lambda n, age, s: _next_age(n, age, s, top),
                       kind="age_update")
    _guarded_inc_dec(state, lay, K)

    vals_q = qcore.register_values(n_qubits, q)
    vals_r = qcore.register_values(n_qubits, r_new)
    joint = np.bincount(vals_q + (vals_r << Q), weights=state.probabilities(),
                        minlength=1 << (Q + m)).reshape((1 << m, 1 << Q)).T
    return joint[: K + 1]


def run_residual_exact(params, T=None, return_joint=False, initial_joint=None, census=None):
    T = params.T if T is None else T
    census = census if census is not None else Counter()
    census["state_prep"] += 1
    P = _initial_joint(params) if initial_joint is None else np.asarray(initial_joint, dtype=float)
    for _ in range(T):
        P = exact_residual_slice(P, params, census)
        if params.cap_mode == "sign_flip":
            census["cap_phase_flip"] += 1  # identity on legal support
    P = P / P.sum()
    p = P.sum(axis=1)
    return (p, P) if return_joint else p


def run_slices_residual(params, T=None, return_joint=False, initial_joint=None):
    if params.cap_mode != "sign_flip":
        raise InvalidParameterError("residual_hazard mode supports the sign_flip CAP only")
    params = replace(params, service_mode="residual_hazard")
    if params.resolved_engine() == "exact":
        return run_residual_exact(params, T, return_joint, initial_joint)
    return run_residual_traced(params, T, return_joint, initial_joint)


def run_slices(params, census=None):
    if params.service_mode == "residual_hazard" and params.cap_mode != "sign_flip":
        raise InvalidParameterError("residual_hazard mode supports the sign_flip CAP only")
    if params.resolved_engine() == "exact":
        return run_slices_exact(params, census=census)
    return run_slices_traced(params)


# -- amplification ------------------------------------------------------------

def takacs_center(params):
    rho = params.rho
    if rho < 1:
        mean = analytic.expected_L(rho, params.K)
    else:
        mean = analytic.mean_occupancy(analytic.mm1k_steady_state(rho, params.K))
    return int(math.floor(mean + 0.5))


def marked_center(params):
    rho = params.rho
    if params.center == "takacs":
        c = takacs_center(params)
    elif params.center == "ratio_floor":
        c = int(math.floor(rho / (1 - rho))) if rho < 1 else params.K
    else:
        c = int(math.floor(rho * (params.K + 1)))
    return min(max(c, 0), params.K)


def epsilon0(params):
    if params.epsilon0 is not None:
        return params.epsilon0
    if params.epsilon_rule == "sqrt_K":
        return int(math.isqrt(params.K))
    return params.Q // 2


def marked_set(params):
    c = marked_center(params)
    eps = epsilon0(params)
    return list(range(max(0, c - eps), min(params.K, c + eps) + 1))


def grover_iterations(K, m_size, schedule="optimal"):
    if not 1 <= m_size <= K + 1:
        raise InvalidParameterError(f"marked size {m_size} outside [1, {K + 1}]")
    if schedule == "paper_formula":
        return int(math.ceil(math.pi / 4 * math.sqrt((K + 1) / m_size)))
    theta = math.asin(math.sqrt(m_size / (K + 1)))
    # round(pi/(4 theta) - 1/2), halves rounded up
    return max(0, int(math.floor(math.pi / (4 * theta))))


def grover_amplify(p, marked, R, cap_mode="sign_flip", census=None):
    """R rounds of marking-oracle phase flip then reflection about the legal uniform state.

    Starts from amplitudes sqrt(p). Under ``sign_flip`` each round is
    preceded by the CAP sign flip, which is the identity on legal support.
    Returns the final state and the probability mass on the marked set.
    """
    p = np.asarray(p, dtype=float)
    K = p.size - 1
    Q = n_queue_qubits(K)
    state = StateVector.from_probs(Q, p, census=census)
    psi0 = legal_uniform(Q, K)
    marked_arr = np.zeros(1 << Q, dtype=bool)
    marked_arr[list(marked)] = True
    reg = (0, Q)
    for _ in range(R):
        if cap_mode == "sign_flip":
            apply_cap(state, K, "sign_flip")
        qcore.phase_flip(state, reg, lambda v: marked_arr[v])
        qcore.reflect_about(state, psi0)
    p_succ = float(state.probabilities()[marked_arr].sum())
    return state, p_succ


# -- rejection ----------------------------------------------------------------

def rejection_filter(samples, pi_target, pi_hat, rng):
    """Keep each sample n with probability min(1, pi_target[n] / pi_hat[n])."""
    samples = np.asarray(samples, dtype=np.int64)
    pi_target = np.asarray(pi_target, dtype=float)
    pi_hat = np.asarray(pi_hat, dtype=float)
    q = pi_hat[samples]
    if np.any(q <= 0):
        bad = int(samples[np.argmax(q <= 0)])
        raise ProposalSupportError(f"sample {bad} has zero proposal mass")
    accept = np.minimum(1.0, pi_target[samples] / q)
    keep = rng.random(samples.size) < accept
    return samples[keep]


@functools.lru_cache(maxsize=256)
def _des_target(lam, service, K, events, seed):
    return stationary_estimate(DesConfig(lam, service, K, horizon_events=events, seed=seed))


def rejection_target(params):
    """Stationary law the filter aims at: closed form for exponential service, DES estimate otherwise."""
    if isinstance(params.service, Exponential):
        return analytic.mm1k_steady_state(params.lam / params.service.rate, params.K)
    return _des_target(params.lam, params.service, params.K, params.target_events, params.target_seed)


# -- pipeline -----------------------------------------------------------------

def qmg1_run(params):
    K, Q = params.K, params.Q
    engine = params.resolved_engine()
    census = Counter()
    p = run_slices(params, census=census if engine == "exact" else None)
    if engine != "exact":
        census = Counter(gate_census(params, grover=False))

    marked = marked_set(params)
    R = params.grover_rounds if params.grover_rounds is not None else \
        grover_iterations(K, len(marked), params.grover_schedule)
    state, _ = grover_amplify(p, marked, R, params.cap_mode, census=census)
    proposal = qcore.marginal(state, (0, Q))[: K + 1]

    rng = np.random.default_rng(params.seed)
    raw = qcore.measure_counts(state, (0, Q), params.shots, rng)[: K + 1]
    p_succ = float(raw[marked].sum()) / params.shots
    if params.rejection:
        pi = rejection_target(params)
        samples = np.repeat(np.arange(K + 1), raw)
        kept = rejection_filter(samples, pi, proposal, rng)
        accepted = np.bincount(kept, minlength=K + 1)
    else:
        accepted = raw.copy()
    acceptance = float(accepted.sum()) / params.shots
    hist = accepted if accepted.sum() > 0 else raw
    p_q = hist / hist.sum()

    L_hat = analytic.mean_occupancy(p_q)
    p_block = float(p_q[K])
    lam_eff = params.lam * (1.0 - p_block)
    W_hat = L_hat / lam_eff if lam_eff > 0 else float("inf")
    return SimulationResult(
        raw_histogram=raw,
        accepted_histogram=accepted,
        p_q=p_q,
        L_hat=L_hat,
        W_hat=W_hat,
        p_block_hat=p_block,
        R_used=R,
        p_succ_measured=p_succ,
        acceptance_rate=acceptance,
        gate_census=dict(census),
        marked=marked,
        p_slices=p,
        proposal=proposal,
        engine=engine,
    )


def gate_census(params, grover=True):
    """Gate counts a run with these parameters applies, by gate kind."""
    T = params.T
    counts = Counter()
    counts["state_prep"] = 1
    if params.service_mode == "residual_hazard":
        counts["ry"] = T
        counts["multiplexed_ry"] = T
        counts["age_update"] = T
    else:
        counts["ry"] = 2 * T
    counts["comparator"] = 2 * T
    counts["controlled_shift"] = 2 * T
    if params.cap_mode == "sign_flip":
        counts["cap_phase_flip"] = T
    else:
        counts["cap_reflection"] = 2 * T
    if grover:
        marked = marked_set(params)
        R = params.grover_rounds if params.grover_rounds is not None else \
            grover_iterations(params.K, len(marked), params.grover_schedule)
        counts["phase_flip"] = R
        counts["reflection"] = R
        if params.cap_mode == "sign_flip":
            counts["cap_phase_flip"] += R
    return {k: v for k, v in counts.items() if v}


def census_by_module(counts):
    slice_kinds = ("state_prep", "ry", "multiplexed_ry", "age_update", "comparator", "controlled_shift")
    return {
        "slice": sum(counts.get(k, 0) for k in slice_kinds),
        "cap": counts.get("cap_phase_flip", 0) + counts.get("cap_reflection", 0),
        "diffusion": counts.get("phase_flip", 0) + counts.get("reflection", 0),
    }
