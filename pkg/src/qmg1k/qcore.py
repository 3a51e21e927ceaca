"""Dense statevector engine with the gate set the queue circuit needs.

Qubits are little-endian: qubit i is bit i of the basis index. A register is
a contiguous ``(start, width)`` qubit range whose value is read the same way.
Gates mutate the state in place and return it, so calls can be chained.
"""
from __future__ import annotations

from collections import Counter

import numpy as np

from .exceptions import InvalidParameterError, QubitCapError

MAX_QUBITS = 24


class StateVector:
    """Complex amplitudes over ``n_qubits`` qubits.

    ``census`` is an optional shared Counter; every gate applied to the state
    increments the entry for its kind.
    """

    def __init__(self, n_qubits, amplitudes=None, census=None, max_qubits=MAX_QUBITS):
        if n_qubits < 1:
            raise InvalidParameterError("a state needs at least one qubit")
        if n_qubits > max_qubits:
            raise QubitCapError(f"{n_qubits} qubits exceeds the cap of {max_qubits}")
        self.n_qubits = n_qubits
        dim = 1 << n_qubits
        if amplitudes is None:
            self.amplitudes = np.zeros(dim, dtype=complex)
            self.amplitudes[0] = 1.0
        else:
            amps = np.asarray(amplitudes, dtype=complex)
            if amps.shape != (dim,):
                raise InvalidParameterError(f"expected {dim} amplitudes, got shape {amps.shape}")
            self.amplitudes = amps.copy()
        self.census = census if census is not None else Counter()

    @classmethod
    def basis(cls, n_qubits, index, **kw):
        state = cls(n_qubits, **kw)
        state.amplitudes[0] = 0.0
        state.amplitudes[index] = 1.0
        return state

    @classmethod
    def from_probs(cls, n_qubits, probs, **kw):
        """Embed a distribution as nonnegative real amplitudes sqrt(p) on the low indices."""
        probs = np.asarray(probs, dtype=float)
        amps = np.zeros(1 << n_qubits, dtype=complex)
        amps[: probs.size] = np.sqrt(np.clip(probs, 0.0, None))
        return cls(n_qubits, amps, **kw)

    @property
    def dim(self):
        return self.amplitudes.size

    def norm(self):
        return float(np.sqrt(np.vdot(self.amplitudes, self.amplitudes).real))

    def probabilities(self):
        return np.abs(self.amplitudes) ** 2

    def copy(self):
        return StateVector(self.n_qubits, self.amplitudes, census=Counter(self.census))

    def __repr__(self):
        return f"StateVector(n_qubits={self.n_qubits}, norm={self.norm():.12f})"


# -- index helpers ------------------------------------------------------------

def _indices(n_qubits):
    return np.arange(1 << n_qubits, dtype=np.int64)


def register_values(n_qubits, register):
    start, width = register
    return (_indices(n_qubits) >> start) & ((1 << width) - 1)


def _check_qubit(state, q):
    if not 0 <= q < state.n_qubits:
        raise IndexError(f"qubit {q} out of range for {state.n_qubits} qubits")


def _check_register(state, register):
    start, width = register
    if width < 1 or start < 0 or start + width > state.n_qubits:
        raise IndexError(f"register {register} out of range for {state.n_qubits} qubits")


def _register_qubits(register):
    start, width = register
    return set(range(start, start + width))


def _control_mask(state, controls):
    idx = _indices(state.n_qubits)
    mask = np.ones(state.dim, dtype=bool)
    for q, polarity in controls:
        _check_qubit(state, q)
        mask &= ((idx >> q) & 1) == int(polarity)
    return mask


# -- gates --------------------------------------------------------------------

def theta_for_prob(p):
    """Rotation angle whose R_y maps |0> to a qubit reading 1 with probability p."""
    if not 0.0 <= p <= 1.0:
        raise InvalidParameterError(f"probability {p} outside [0, 1]")
    return 2.0 * np.arcsin(np.sqrt(p))


def ry_matrix(theta):
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    return np.array([[c, -s], [s, c]])


HADAMARD = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2.0)
PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]])


def apply_1q(state, gate, target, controls=(), kind="1q"):
    """Apply a 2x2 gate to `target`, conditioned on each (qubit, polarity) control."""
    _check_qubit(state, target)
    if any(q == target for q, _ in controls):
        raise InvalidParameterError("target qubit also listed as a control")
    gate = np.asarray(gate, dtype=complex)
    n = state.n_qubits
    view = state.amplitudes.reshape(1 << (n - target - 1), 2, 1 << target)
    if controls:
        mask = _control_mask(state, controls).reshape(view.shape)[:, 0, :]
        a0, a1 = view[:, 0, :][mask], view[:, 1, :][mask]
        view[:, 0, :][mask] = gate[0, 0] * a0 + gate[0, 1] * a1
        view[:, 1, :][mask] = gate[1, 0] * a0 + gate[1, 1] * a1
    else:
        a0, a1 = view[:, 0, :].copy(), view[:, 1, :].copy()
        view[:, 0, :] = gate[0, 0] * a0 + gate[0, 1] * a1
        view[:, 1, :] = gate[1, 0] * a0 + gate[1, 1] * a1
    state.census[kind] += 1
    return state


def _permute(state, dest):
    """Move the amplitude at index i to index dest[i]; dest must be a permutation."""
    new = np.empty_like(state.amplitudes)
    new[dest] = state.amplitudes
    state.amplitudes = new


def modular_shift(state, register, delta, controls=(), kind="controlled_shift"):
    """Map register value n to (n + delta) mod 2**width wherever the controls match."""
    _check_register(state, register)
    reg_qubits = _register_qubits(register)
    if any(q in reg_qubits for q, _ in controls):
        raise InvalidParameterError("control qubit overlaps the shifted register")
    start, width = register
    idx = _indices(state.n_qubits)
    val = (idx >> start) & ((1 << width) - 1)
    new_val = (val + int(delta)) % (1 << width)
    dest = idx - (val << start) + (new_val << start)
    if controls:
        dest = np.where(_control_mask(state, controls), dest, idx)
    _permute(state, dest)
    state.census[kind] += 1
    return state


def xor_function(state, inputs, output, func, kind="oracle"):
    """Reversibly XOR ``func(*input_values)`` into the `output` register.

    `inputs` is a sequence of registers; `func` receives one integer array per
    register and returns integer values that fit in `output`. XOR into a
    target register is a permutation of the basis for any `func`.
    """
    _check_register(state, output)
    out_qubits = _register_qubits(output)
    for reg in inputs:
        _check_register(state, reg)
        if _register_qubits(reg) & out_qubits:
            raise InvalidParameterError("input register overlaps the output register")
    idx = _indices(state.n_qubits)
    args = [(idx >> s) & ((1 << w) - 1) for s, w in inputs]
    vals = np.asarray(func(*args), dtype=np.int64)
    o_start, o_width = output
    if np.any(vals < 0) or np.any(vals >= (1 << o_width)):
        raise InvalidParameterError("function value does not fit the output register")
    _permute(state, idx ^ (vals << o_start))
    state.census[kind] += 1
    return state


def comparator(state, register, predicate, target, kind="comparator"):
    """Flip `target` on every basis state whose register value satisfies `predicate`."""
    return xor_function(state, [register], (target, 1), lambda v: predicate(v).astype(np.int64), kind=kind)


def phase_flip(state, register, marked, kind="phase_flip"):
    """Negate amplitudes whose register value satisfies the `marked` predicate."""
    _check_register(state, register)
    vals = register_values(state.n_qubits, register)
    mask = np.asarray(marked(vals), dtype=bool)
    state.amplitudes[mask] *= -1.0
    state.census[kind] += 1
    return state


def reflect_about(state, axis, kind="reflection"):
    """Apply 2|axis><axis| - I."""
    axis_amps = axis.amplitudes if isinstance(axis, StateVector) else np.asarray(axis, dtype=complex)
    if axis_amps.shape != state.amplitudes.shape:
        raise InvalidParameterError("axis and state dimensions differ")
    overlap = np.vdot(axis_amps, state.amplitudes)
    state.amplitudes = 2.0 * overlap * axis_amps - state.amplitudes
    state.census[kind] += 1
    return state


def multiplexed_ry(state, selector, target, angles, kind="multiplexed_ry"):
    """Rotate `target` by R_y(angles[r]) on the block where the selector register reads r."""
    _check_register(state, selector)
    _check_qubit(state, target)
    if target in _register_qubits(selector):
        raise InvalidParameterError("target qubit lies inside the selector register")
    angles = np.asarray(angles, dtype=float)
    if angles.size != 1 << selector[1]:
        raise InvalidParameterError(f"angle table needs {1 << selector[1]} entries, got {angles.size}")
    n = state.n_qubits
    sel = register_values(n, selector).reshape(1 << (n - target - 1), 2, 1 << target)[:, 0, :]
    c, s = np.cos(angles[sel] / 2.0), np.sin(angles[sel] / 2.0)
    view = state.amplitudes.reshape(1 << (n - target - 1), 2, 1 << target)
    a0, a1 = view[:, 0, :].copy(), view[:, 1, :].copy()
    view[:, 0, :] = c * a0 - s * a1
    view[:, 1, :] = s * a0 + c * a1
    state.census[kind] += 1
    return state


def marginal(state, register):
    """Probability distribution of a register with every other qubit summed out."""
    _check_register(state, register)
    vals = register_values(state.n_qubits, register)
    return np.bincount(vals, weights=state.probabilities(), minlength=1 << register[1])


def measure_counts(state, register, shots, rng):
    """Histogram of `shots` projective measurements of `register`."""
    if shots < 1:
        raise InvalidParameterError("shots must be >= 1")
    p = marginal(state, register)
    p = np.clip(p, 0.0, None)
    return rng.multinomial(shots, p / p.sum())


def dump_csv(state, path):
    """Write the amplitudes as ``index,re,im`` rows (debug aid)."""
    with open(path, "w", newline="\n") as fh:
        fh.write("index,re,im\n")
        for i, a in enumerate(state.amplitudes):
            fh.write(f"{i},{a.real!r},{a.imag!r}\n")
