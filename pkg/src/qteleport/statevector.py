"""Bitwise state-vector kernel for n-qubit registers.

Basis convention: index ``b`` encodes the computational state
``|i_{n-1} ... i_1 i_0>`` with qubit ``k`` stored at bit position ``k``,
so qubit 0 is the least significant bit. All gate kernels update the
amplitude array in place through index-pair arithmetic; nothing in this
module builds an operator larger than 2x2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# 2**26 complex128 amplitudes is roughly 1 GiB, the memory guard line.
MAX_QUBITS = 26

_SQRT1_2 = 1.0 / math.sqrt(2.0)

HADAMARD = np.array([[_SQRT1_2, _SQRT1_2], [_SQRT1_2, -_SQRT1_2]], dtype=np.complex128)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=np.complex128)


@dataclass
class StateVector:
    """Pure state of ``num_qubits`` qubits as 2**n contiguous amplitudes."""

    num_qubits: int
    amplitudes: np.ndarray

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def copy(self) -> "StateVector":
        return StateVector(self.num_qubits, self.amplitudes.copy())


def new_basis_state(num_qubits: int, basis_index: int, *, max_qubits: int = MAX_QUBITS) -> StateVector:
    """Return the computational basis state ``|basis_index>``."""
    if num_qubits < 1:
        raise ValueError(f"need at least one qubit, got {num_qubits}")
    if num_qubits > max_qubits:
        raise ValueError(
            f"{num_qubits} qubits exceeds the {max_qubits}-qubit memory guard"
        )
    dim = 1 << num_qubits
    if not 0 <= basis_index < dim:
        raise ValueError(f"basis index {basis_index} out of range for {num_qubits} qubits")
    amps = np.zeros(dim, dtype=np.complex128)
    amps[basis_index] = 1.0
    return StateVector(num_qubits, amps)


def from_amplitudes(amplitudes, *, copy: bool = True) -> StateVector:
    """Wrap a length-2**n amplitude sequence as a StateVector."""
    amps = np.array(amplitudes, dtype=np.complex128, copy=copy)
    if amps.ndim != 1 or amps.size == 0 or amps.size & (amps.size - 1):
        raise ValueError(f"amplitude count {amps.size} is not a power of two")
    return StateVector(amps.size.bit_length() - 1, amps)


def norm(state: StateVector) -> float:
    return float(np.linalg.norm(state.amplitudes))


@lru_cache(maxsize=8)
def popcounts(num_qubits: int) -> np.ndarray:
    """Excitation count m(b) for every basis index of an n-qubit register."""
    counts = np.zeros(1 << num_qubits, dtype=np.uint8)
    for k in range(num_qubits):
        counts[1 << k : 2 << k] = counts[: 1 << k] + 1
    counts.setflags(write=False)
    return counts


@lru_cache(maxsize=8)
def inverse_popcounts(num_qubits: int) -> np.ndarray:
    """1/m(b) with the ground state mapped to 0, as float64."""
    counts = popcounts(num_qubits)
    inv = np.zeros(counts.size, dtype=np.float64)
    inv[1:] = 1.0 / counts[1:]
    inv.setflags(write=False)
    return inv


def _insert_zero_bit(indices: np.ndarray, position: int) -> np.ndarray:
    return ((indices >> position) << (position + 1)) | (indices & ((1 << position) - 1))


def _base_indices(num_qubits: int, j: int, k: int) -> np.ndarray:
    """All indices with bits j and k clear, enumerated over the other bits."""
    lo, hi = sorted((j, k))
    rest = np.arange(1 << (num_qubits - 2), dtype=np.intp)
    return _insert_zero_bit(_insert_zero_bit(rest, lo), hi)


def _check_qubit(state: StateVector, k: int) -> None:
    if not 0 <= k < state.num_qubits:
        raise ValueError(f"qubit {k} out of range for {state.num_qubits}-qubit register")


def _check_pair(state: StateVector, j: int, k: int) -> None:
    _check_qubit(state, j)
    _check_qubit(state, k)
    if j == k:
        raise ValueError(f"need two distinct qubits, got {j} twice")


def apply_swap(state: StateVector, j: int, k: int) -> StateVector:
    """Exchange qubits j and k in place (a pure amplitude permutation)."""
    _check_pair(state, j, k)
    base = _base_indices(state.num_qubits, j, k)
    on_j = base | (1 << j)
    on_k = base | (1 << k)
    amps = state.amplitudes
    amps[on_j], amps[on_k] = amps[on_k], amps[on_j]
    return state


def apply_cnot(state: StateVector, control: int, target: int) -> StateVector:
    """Flip the target bit wherever the control bit is set, in place."""
    _check_pair(state, control, target)
    base = _base_indices(state.num_qubits, control, target)
    on_c = base | (1 << control)
    flipped = on_c | (1 << target)
    amps = state.amplitudes
    amps[on_c], amps[flipped] = amps[flipped], amps[on_c]
    return state


def apply_single(state: StateVector, k: int, op: np.ndarray) -> StateVector:
    """Apply a 2x2 operator to qubit k in place."""
    _check_qubit(state, k)
    view = state.amplitudes.reshape(-1, 2, 1 << k)
    a0 = view[:, 0, :]
    a1 = view[:, 1, :]
    new0 = op[0, 0] * a0 + op[0, 1] * a1
    new1 = op[1, 0] * a0 + op[1, 1] * a1
    view[:, 0, :] = new0
    view[:, 1, :] = new1
    return state


def project_qubit(state: StateVector, k: int, outcome: int) -> tuple[float, StateVector]:
    """Decompose onto qubit k's ``outcome`` branch.

    Returns the branch probability (for a normalized input) and the
    unnormalized projected state; the caller renormalizes when p > 0.
    """
    _check_qubit(state, k)
    if outcome not in (0, 1):
        raise ValueError(f"outcome must be 0 or 1, got {outcome}")
    view = state.amplitudes.reshape(-1, 2, 1 << k)
    kept = view[:, outcome, :]
    probability = float(np.sum(kept.real**2 + kept.imag**2))
    out = np.zeros_like(state.amplitudes)
    out.reshape(-1, 2, 1 << k)[:, outcome, :] = kept
    return probability, StateVector(state.num_qubits, out)


def reduce_to_qubit(state: StateVector, k: int) -> np.ndarray:
    """Trace out every qubit except k, returning the 2x2 density matrix."""
    _check_qubit(state, k)
    view = state.amplitudes.reshape(-1, 2, 1 << k)
    a0 = view[:, 0, :]
    a1 = view[:, 1, :]
    rho = np.empty((2, 2), dtype=np.complex128)
    rho[0, 0] = np.vdot(a0, a0)
    rho[1, 1] = np.vdot(a1, a1)
    rho[0, 1] = np.vdot(a1, a0)
    rho[1, 0] = np.conj(rho[0, 1])
    return rho


def pure_fidelity(rho: np.ndarray, psi) -> float:
    """Overlap <psi|rho|psi> of a single-qubit density matrix with a pure state."""
    alpha, beta = complex(psi[0]), complex(psi[1])
    weight = abs(alpha) ** 2 + abs(beta) ** 2
    if abs(weight - 1.0) > 1e-10:
        raise ValueError(f"target state norm {weight} is not 1")
    value = (
        np.conj(alpha) * (rho[0, 0] * alpha + rho[0, 1] * beta)
        + np.conj(beta) * (rho[1, 0] * alpha + rho[1, 1] * beta)
    )
    return float(min(1.0, max(0.0, value.real)))
