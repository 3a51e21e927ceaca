import json
import math
from dataclasses import replace

import numpy as np
import pytest

from qmg1k import analytic, circuit, qcore
from qmg1k.circuit import QueueParams
from qmg1k.dist import Deterministic, Exponential, Normal, PhaseType, Uniform
from qmg1k.exceptions import InvalidParameterError, ProposalSupportError, QubitCapError

DEMO = dict(lam=0.25, service=Exponential(1.0), K=3, dt=0.3)
RESULT_FIELDS = ["raw_histogram", "accepted_histogram", "p_q", "L_hat", "W_hat", "p_block_hat",
                 "R_used", "p_succ_measured", "acceptance_rate", "gate_census"]


def random_params(rng, K, **kw):
    lam = rng.uniform(0.05, 2.0)
    service = [Exponential(rng.uniform(0.3, 3)), Uniform(0.2, 0.2 + rng.uniform(0.1, 2)),
               Normal(rng.uniform(0.5, 2), rng.uniform(0.01, 0.3)), Deterministic(rng.uniform(0.1, 2)),
               PhaseType.erlang_chain(lam)][rng.integers(5)]
    return QueueParams(lam=lam, service=service, K=K, dt=rng.uniform(0.01, 1.0), T=1, **kw)


def bernoulli_oracle(p_lam, p_mu, K):
    """Row-by-row construction from the two Bernoulli marginals, boundaries folded into stay."""
    up, down = p_lam * (1 - p_mu), (1 - p_lam) * p_mu
    M = np.eye(K + 1)
    for n in range(K + 1):
        if n < K:
            M[n + 1, n] += up
            M[n, n] -= up
        if n > 0:
            M[n - 1, n] += down
            M[n, n] -= down
    return M


# -- slice chain --------------------------------------------------------------

def test_slice_matrix_worked_values():
    M = circuit.slice_transition_matrix(QueueParams(**DEMO))
    p_lam, p_mu = circuit.slice_probabilities(QueueParams(**DEMO))
    assert p_lam == pytest.approx(0.072257, abs=1e-6)
    assert p_mu == pytest.approx(0.259182, abs=1e-6)
    # products of the unrounded marginals
    assert M[2, 1] == pytest.approx(0.0535289, abs=1e-7)
    assert M[0, 1] == pytest.approx(0.2404542, abs=1e-7)
    assert M[1, 1] == pytest.approx(p_lam * p_mu + (1 - p_lam) * (1 - p_mu), abs=1e-15)
    np.testing.assert_allclose(M, bernoulli_oracle(p_lam, p_mu, 3), atol=1e-15)


def test_slice_matrix_without_arrivals_has_no_up_moves():
    M = circuit._birth_death_matrix(4, 0.0 * (1 - 0.3), (1 - 0.0) * 0.3)
    # column-stochastic orientation: entry [j, i] is i -> j, so up moves sit below the diagonal
    assert np.all(np.tril(M, -1) == 0)
    assert np.all(np.triu(M, 2) == 0)


def test_slice_matrix_columns_sum_to_one():
    rng = np.random.default_rng(0)
    for _ in range(100):
        M = circuit.slice_transition_matrix(random_params(rng, int(rng.integers(1, 20))))
        np.testing.assert_allclose(M.sum(axis=0), 1.0, atol=1e-12)
        assert np.all(M >= 0)


def test_traced_zero_slices_is_uniform():
    p = circuit.run_slices_traced(QueueParams(**DEMO), T=0)
    np.testing.assert_allclose(p, [0.25] * 4)


def test_single_slice_cross_engine():
    rng = np.random.default_rng(1)
    for K in (1, 2, 3, 5, 7):
        for _ in range(20):
            params = random_params(rng, K)
            np.testing.assert_allclose(circuit.run_slices_exact(params), circuit.run_slices_traced(params),
                                       atol=1e-10)


def test_multi_slice_cross_engine():
    params = QueueParams(lam=0.7, service=Uniform(0.5, 1.5), K=5, dt=0.2, T=25)
    np.testing.assert_allclose(circuit.run_slices_exact(params), circuit.run_slices_traced(params), atol=1e-10)


def test_worked_slice_stages():
    p_c = analytic.mm1k_steady_state(0.25, 3)
    params = QueueParams(**DEMO, T=1, engine="exact", initial=tuple(p_c))
    trace = []
    out = circuit.exact_slice(p_c, params, trace=trace)
    stages = dict(trace)
    arr = stages["arrival"].amplitudes.real
    Q = 2
    expected = {(0, 0): 0.8358, (1, 0): 0.4179, (2, 0): 0.2089, (3, 0): 0.1045,
                (0, 1): 0.2332, (1, 1): 0.1166, (2, 1): 0.0583, (3, 1): 0.0292}
    for (n, a), amp in expected.items():
        assert arr[n + (a << Q)] == pytest.approx(amp, abs=5e-4)
    post = stages["inc_dec"]
    assert post.norm() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(qcore.marginal(post, (0, Q)), circuit.slice_transition_matrix(params) @ p_c,
                               atol=1e-12)
    np.testing.assert_allclose(out, circuit.slice_transition_matrix(params) @ p_c, atol=1e-12)


def test_slice_is_unitary_on_fresh_ancillas():
    # the guarded INC/DEC block is a permutation of the full register
    lay = circuit._slice_layout(2)
    dim = 1 << 6
    images = set()
    for i in range(dim):
        s = qcore.StateVector.basis(6, i)
        circuit._guarded_inc_dec(s, lay, 3)
        images.add(int(np.argmax(np.abs(s.amplitudes))))
    assert len(images) == dim


def test_deterministic_longer_than_slice_is_pure_birth():
    params = QueueParams(lam=0.5, service=Deterministic(1.0), K=5, dt=0.25, T=1, engine="exact")
    assert circuit.slice_probabilities(params)[1] == 0.0
    p = np.full(6, 1 / 6)
    for _ in range(8):
        nxt = circuit.exact_slice(p, params)
        assert nxt[0] < p[0]
        p = nxt


def test_exact_engine_qubit_cap():
    params = QueueParams(lam=0.5, service=Exponential(), K=63, T=1, engine="exact", max_qubits=8)
    with pytest.raises(QubitCapError):
        circuit.run_slices_exact(params)


def test_auto_engine_choice():
    assert QueueParams(lam=0.5, service=Exponential(), K=63, engine="auto").resolved_engine() == "exact"
    assert QueueParams(lam=0.5, service=Exponential(), K=4095, engine="auto").resolved_engine() == "traced"


# -- residual hazard ----------------------------------------------------------

def test_residual_exponential_reduces_to_per_slice():
    base = QueueParams(lam=0.6, service=Exponential(1.0), K=7, dt=0.2, T=40)
    res = replace(base, service_mode="residual_hazard")
    np.testing.assert_allclose(circuit.run_slices_residual(res), circuit.run_slices_traced(base), atol=1e-6)


def test_residual_engines_agree():
    for service in (Uniform(0.5, 1.5), Deterministic(0.6), Normal(1.0, 0.05)):
        params = QueueParams(lam=0.8, service=service, K=3, dt=0.25, T=6, service_mode="residual_hazard")
        p_ex, P_ex = circuit.run_residual_exact(params, return_joint=True)
        p_tr, P_tr = circuit.run_residual_traced(params, return_joint=True)
        np.testing.assert_allclose(P_ex, P_tr, atol=1e-10)


def test_residual_deterministic_two_slices():
    dt = 0.25
    params = QueueParams(lam=1e-12, service=Deterministic(2 * dt), K=3, dt=dt, T=1,
                         service_mode="residual_hazard", engine="exact")
    np.testing.assert_allclose(params.service.hazard_table(2, dt), [0.0, 1.0])
    P = np.zeros((4, 4))
    P[1, 0] = 1.0   # one customer, service just started
    _, P1 = circuit.run_slices_residual(params, T=1, return_joint=True, initial_joint=P)
    assert P1[1, 1] == pytest.approx(1.0, abs=1e-9)
    _, P2 = circuit.run_slices_residual(params, T=2, return_joint=True, initial_joint=P)
    assert P2[0].sum() == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("service", [Exponential(1.0), Uniform(0.5, 1.5), Deterministic(1.0)])
@pytest.mark.parametrize("dt", [0.25, 0.3, 0.5])
def test_residual_conditional_completion_equals_hazard(service, dt):
    params = QueueParams(lam=0.5, service=service, K=3, dt=dt, service_mode="residual_hazard")
    m = params.m_residual
    angles, h = circuit.hazard_angles(params)
    n_q = m + 1
    amps = np.zeros(1 << n_q)
    amps[: 1 << m] = 1 / math.sqrt(1 << m)
    s = qcore.StateVector(n_q, amps)
    qcore.multiplexed_ry(s, (0, m), m, angles)
    probs = s.probabilities().reshape(2, 1 << m)
    cond = probs[1] / probs.sum(axis=0)
    expected = [service.hazard_bin(r, dt) for r in range(1 << m)]
    np.testing.assert_allclose(cond, expected, atol=1e-9)


def test_residual_rejects_two_reflection():
    params = QueueParams(lam=0.5, service=Uniform(0.5, 1.5), K=3, service_mode="residual_hazard",
                         cap_mode="two_reflection")
    with pytest.raises(InvalidParameterError):
        circuit.run_slices(params)


# -- CAP ----------------------------------------------------------------------

@pytest.mark.parametrize("mode", ["sign_flip", "two_reflection"])
def test_cap_keeps_legal_support(mode):
    rng = np.random.default_rng(3)
    for K in (2, 4, 5, 6):
        Q = circuit.n_queue_qubits(K)
        p = rng.dirichlet(np.ones(K + 1))
        s = qcore.StateVector.from_probs(Q, p)
        circuit.apply_cap(s, K, mode)
        assert s.probabilities()[: K + 1].sum() == pytest.approx(1.0, abs=1e-10)


def test_two_reflection_cap_on_legal_states():
    # R_L R_K restricted to legal states is the reflection 2|psi0><psi0| - I
    rng = np.random.default_rng(5)
    K, Q = 5, 3
    psi0 = np.zeros(8)
    psi0[:6] = 1 / math.sqrt(6)
    for _ in range(20):
        p = rng.dirichlet(np.ones(K + 1))
        s = qcore.StateVector.from_probs(Q, p)
        expected = 2 * np.dot(psi0, s.amplitudes.real) * psi0 - s.amplitudes.real
        circuit.apply_cap(s, K, "two_reflection")
        np.testing.assert_allclose(s.amplitudes.real, expected, atol=1e-12)


def test_sign_flip_cap_is_identity_on_legal_states():
    p = np.random.default_rng(6).dirichlet(np.ones(6))
    s = qcore.StateVector.from_probs(3, p)
    before = s.amplitudes.copy()
    circuit.apply_cap(s, 5, "sign_flip")
    np.testing.assert_array_equal(s.amplitudes, before)


# -- marked set and Grover ----------------------------------------------------

def test_marked_set_examples():
    params = QueueParams(**DEMO, epsilon0=1)
    assert circuit.takacs_center(params) == 0
    assert circuit.marked_set(params) == [0, 1]
    assert circuit.marked_set(replace(params, epsilon0=3)) == [0, 1, 2, 3]
    assert circuit.marked_set(replace(params, epsilon0=0)) == [0]


def test_marked_center_options():
    params = QueueParams(lam=0.75, service=Exponential(), K=15)
    assert circuit.marked_center(replace(params, center="ratio_floor")) == 3
    assert circuit.marked_center(replace(params, center="load_scaled")) == 12
    assert circuit.epsilon0(params) == 2
    assert circuit.epsilon0(replace(params, epsilon_rule="sqrt_K")) == 3


def test_marked_center_overloaded():
    params = QueueParams(lam=0.5, service=PhaseType.erlang_chain(0.5), K=7)
    assert params.rho > 1
    p = analytic.mm1k_steady_state(params.rho, 7)
    assert circuit.takacs_center(params) == round(float(np.dot(np.arange(8), p)))


def test_grover_iterations():
    assert circuit.grover_iterations(3, 1, "paper_formula") == 2
    assert analytic.grover_success(1, 3, 2) == pytest.approx(0.25, abs=1e-12)
    assert circuit.grover_iterations(3, 1, "optimal") == 1
    assert analytic.grover_success(1, 3, 1) == pytest.approx(1.0, abs=1e-12)
    assert circuit.grover_iterations(7, 8, "optimal") == 0
    with pytest.raises(InvalidParameterError):
        circuit.grover_iterations(3, 0)


def test_optimal_schedule_lands_nearest_quarter_turn():
    # (2R+1) theta is the odd multiple of theta closest to pi/2
    for K1 in (4, 8, 16, 32, 64, 128):
        for m in range(1, K1 + 1):
            R = circuit.grover_iterations(K1 - 1, m, "optimal")
            theta = math.asin(math.sqrt(m / K1))
            assert abs((2 * R + 1) * theta - math.pi / 2) <= theta + 1e-12


def test_grover_amplify_examples():
    _, p = circuit.grover_amplify([0.25] * 4, [3], 1)
    assert p == pytest.approx(1.0, abs=1e-9)
    p_in = np.array([0.4, 0.3, 0.2, 0.1])
    state, p = circuit.grover_amplify(p_in, [1, 2], 0)
    np.testing.assert_allclose(state.amplitudes.real, np.sqrt(p_in))
    assert p == pytest.approx(0.5)
    R = circuit.grover_iterations(15, 4)
    _, p = circuit.grover_amplify(np.full(16, 1 / 16), [0, 1, 2, 3], R)
    assert p == pytest.approx(analytic.grover_success(4, 15, R), abs=1e-9)


def test_illegal_amplitudes_stay_zero():
    for K in (4, 5, 6, 10):
        p = np.random.default_rng(K).dirichlet(np.ones(K + 1))
        for R in range(6):
            state, _ = circuit.grover_amplify(p, [0, 1], R)
            assert np.all(state.amplitudes[K + 1:] == 0)


def plain_grover_matrix(d, marked):
    O = np.eye(d)
    O[marked, marked] = -1
    u = np.full(d, 1 / math.sqrt(d))
    return (2 * np.outer(u, u) - np.eye(d)) @ O


def test_legal_block_matches_plain_grover():
    K, marked = 5, [1, 2]
    Q = 3
    G = np.zeros((1 << Q, 1 << Q), dtype=complex)
    for i in range(1 << Q):
        s = qcore.StateVector.basis(Q, i)
        circuit.apply_cap(s, K, "sign_flip")
        qcore.phase_flip(s, (0, Q), lambda v: np.isin(v, marked))
        qcore.reflect_about(s, circuit.legal_uniform(Q, K))
        G[:, i] = s.amplitudes
    np.testing.assert_allclose(G[: K + 1, : K + 1], plain_grover_matrix(K + 1, marked), atol=1e-12)
    np.testing.assert_allclose(G[K + 1:, : K + 1], 0, atol=1e-12)


# -- rejection ----------------------------------------------------------------

def test_rejection_identical_laws_accept_everything():
    rng = np.random.default_rng(0)
    pi = np.array([0.2, 0.3, 0.5])
    samples = rng.choice(3, size=1000, p=pi)
    assert circuit.rejection_filter(samples, pi, pi, rng).size == 1000


def test_rejection_two_point():
    rng = np.random.default_rng(1)
    samples = rng.choice(2, size=1_000_000, p=[0.75, 0.25])
    kept = circuit.rejection_filter(samples, [0.5, 0.5], [0.75, 0.25], rng)
    freq = np.bincount(kept, minlength=2) / kept.size
    # kept mass is proportional to min(q, pi) = (0.5, 0.25)
    np.testing.assert_allclose(freq, [2 / 3, 1 / 3], atol=0.002)
    assert kept.size / samples.size == pytest.approx(0.75 * 2 / 3 + 0.25, abs=0.002)


def test_rejection_support_error():
    with pytest.raises(ProposalSupportError):
        circuit.rejection_filter([0, 2], [0.3, 0.3, 0.4], [0.5, 0.5, 0.0], np.random.default_rng(0))


def test_acceptance_rate_above_floor():
    rng = np.random.default_rng(2)
    pi = analytic.mm1k_steady_state(0.6, 7)
    region, R = [0, 1], 1
    q = analytic.grover_proposal(region, 7, R)
    samples = rng.choice(8, size=100_000, p=q)
    rate = circuit.rejection_filter(samples, pi, q, rng).size / samples.size
    _, floor = analytic.gamma_factor(pi, q, region, R)
    assert rate >= floor - 0.02


def test_rejection_deterministic_for_seed():
    samples = np.arange(4).repeat(50)
    pi, q = [0.1, 0.2, 0.3, 0.4], [0.25] * 4
    a = circuit.rejection_filter(samples, pi, q, np.random.default_rng(9))
    b = circuit.rejection_filter(samples, pi, q, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)


def test_accepted_law_decays_with_rounds_up_to_optimal():
    rng = np.random.default_rng(4)
    for K in (3, 7, 15):
        params = QueueParams(lam=0.6, service=Exponential(), K=K)
        pi = analytic.mm1k_steady_state(0.6, K)
        marked = circuit.marked_set(params)
        R_opt = circuit.grover_iterations(K, len(marked))
        tvs = []
        for R in range(R_opt + 1):
            state, _ = circuit.grover_amplify(np.full(K + 1, 1 / (K + 1)), marked, R)
            q = qcore.marginal(state, (0, params.Q))[: K + 1]
            samples = rng.choice(K + 1, size=100_000, p=q / q.sum())
            kept = circuit.rejection_filter(samples, pi, q, rng)
            acc = np.bincount(kept, minlength=K + 1) / kept.size
            tvs.append(0.5 * np.abs(acc - pi).sum())
        assert all(a > b for a, b in zip(tvs, tvs[1:]))


# -- full pipeline ------------------------------------------------------------

def slice_fixed_point(lam, dt, K):
    p_lam, p_mu = -math.expm1(-lam * dt), -math.expm1(-dt)
    r = p_lam * (1 - p_mu) / ((1 - p_lam) * p_mu)
    w = r ** np.arange(K + 1)
    return w / w.sum()


def test_run_without_amplification_samples_the_slice_chain():
    params = QueueParams(**DEMO, T=2000, grover_rounds=0, rejection=False, shots=1_000_000, seed=5)
    res = circuit.qmg1_run(params)
    target = slice_fixed_point(0.25, 0.3, 3)
    assert 0.5 * np.abs(res.p_q - target).sum() < 0.005
    # the slice chain itself sits a fixed distance from the continuous-time law
    gap = np.abs(target - analytic.mm1k_steady_state(0.25, 3)).sum()
    assert gap == pytest.approx(0.0527, abs=5e-4)


def test_result_fields_and_estimators():
    params = QueueParams(lam=0.6, service=Uniform(0.5, 1.5), K=7, T=50, shots=5000, seed=3,
                         target_events=50_000)
    res = circuit.qmg1_run(params)
    d = res.to_dict()
    assert list(d) == RESULT_FIELDS
    json.dumps(d)
    assert res.p_q.sum() == pytest.approx(1.0, abs=1e-10)
    assert res.L_hat == pytest.approx(np.dot(np.arange(8), res.p_q), abs=1e-12)
    assert res.W_hat == pytest.approx(res.L_hat / (0.6 * (1 - res.p_block_hat)), abs=1e-12)
    assert 0 <= res.acceptance_rate <= 1
    assert res.raw_histogram.sum() == 5000
    assert res.accepted_histogram.sum() <= 5000


def test_rejection_moves_samples_towards_target():
    rng = np.random.default_rng(6)
    for _ in range(8):
        K = int(rng.choice([3, 7, 15]))
        params = QueueParams(lam=float(rng.uniform(0.1, 0.95)), service=Exponential(), K=K, T=100,
                             shots=10_000, seed=int(rng.integers(1 << 30)))
        res = circuit.qmg1_run(params)
        pi = circuit.rejection_target(params)
        raw_tv = 0.5 * np.abs(res.raw_histogram / res.raw_histogram.sum() - pi).sum()
        acc_tv = 0.5 * np.abs(res.p_q - pi).sum()
        assert acc_tv <= raw_tv + 2 / math.sqrt(params.shots)


def test_qmg1_run_is_seeded():
    params = QueueParams(lam=0.5, service=Exponential(), K=7, T=30, shots=2000, seed=17, engine="exact")
    a, b = circuit.qmg1_run(params), circuit.qmg1_run(params)
    assert a.to_dict() == b.to_dict()


def test_exact_and_traced_runs_agree():
    base = QueueParams(lam=0.5, service=Exponential(), K=7, T=30, shots=2000, seed=17)
    a = circuit.qmg1_run(replace(base, engine="exact"))
    b = circuit.qmg1_run(replace(base, engine="traced"))
    np.testing.assert_array_equal(a.raw_histogram, b.raw_histogram)
    assert a.gate_census == b.gate_census


# -- census -------------------------------------------------------------------

def test_census_single_slice():
    c = circuit.gate_census(QueueParams(**DEMO, T=1, grover_rounds=0))
    assert c["ry"] == 2 and c["controlled_shift"] == 2
    assert c["cap_phase_flip"] == 1
    c2 = circuit.gate_census(QueueParams(**DEMO, T=1, grover_rounds=0, cap_mode="two_reflection"))
    assert c2["cap_reflection"] == 2


def test_census_scales_with_T_and_R():
    one = circuit.gate_census(QueueParams(**DEMO, T=10, grover_rounds=0))
    two = circuit.gate_census(QueueParams(**DEMO, T=20, grover_rounds=0))
    for kind in ("ry", "controlled_shift", "comparator"):
        assert two[kind] == 2 * one[kind]
    prev = None
    for R in range(5):
        total = sum(circuit.gate_census(QueueParams(**DEMO, T=10, grover_rounds=R)).values())
        assert prev is None or total >= prev
        prev = total


def test_census_by_module():
    c = circuit.gate_census(QueueParams(**DEMO, T=3, grover_rounds=2))
    mods = circuit.census_by_module(c)
    assert mods["diffusion"] == 4
    assert mods["cap"] == 3 + 2
    assert sum(mods.values()) == sum(c.values())


@pytest.mark.parametrize("kw", [
    dict(lam=0.0), dict(K=0), dict(T=0), dict(dt=-1.0), dict(shots=0), dict(epsilon0=9),
    dict(engine="gpu"), dict(cap_mode="none"), dict(grover_rounds=-1), dict(initial=(0.5, 0.5)),
])
def test_invalid_params(kw):
    base = dict(DEMO)
    base.update(kw)
    with pytest.raises(InvalidParameterError):
        QueueParams(**base)
