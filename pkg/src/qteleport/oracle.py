"""Dense density-matrix reference integrator for small chains.

Integrates the Markovian master equation

    drho/dt = -(1/2) sum_k {L_k^dag L_k, rho} + sum_k L_k rho L_k^dag

(the coherent term vanishes between gates, which are instantaneous) with a
fixed-step classical RK4 scheme. This is the exactness reference the
trajectory ensemble is validated against; it is deliberately dense and
therefore limited to small registers.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .protocol import ExperimentConfig, _CORRECTIONS, preparation_stream, prepare_initial_chain
from .statevector import HADAMARD, popcounts

ORACLE_MAX_QUBITS = 8

# Fixed-step RK4 resolution: gamma * h at or below 1e-3.
_MAX_RATE_STEP = 1e-3
_TRACE_TOLERANCE = 1e-7


class ToleranceError(RuntimeError):
    """Raised when the integrator leaves its trace-preservation envelope."""


def rk4_steps(gamma: float, duration: float = 1.0) -> int:
    """Step count keeping gamma*h at or below the fixed-step resolution."""
    return max(math.ceil(gamma * duration / _MAX_RATE_STEP), 1)


def build_lindblad_operators(
    num_qubits: int, gamma: float, *, max_qubits: int = ORACLE_MAX_QUBITS
) -> list[np.ndarray]:
    """Dense jump operators L_k = sqrt(gamma) sigma_k^- N^(-1/2).

    Column b (with bit k set) holds a single entry sqrt(gamma/m(b)) at row
    b with bit k cleared; columns with bit k clear are empty. Summed, they
    satisfy sum_k L_k^dag L_k = gamma * P with P the excited-subspace
    projector.
    """
    if not 1 <= num_qubits <= max_qubits:
        raise ValueError(
            f"dense operators limited to {max_qubits} qubits, got {num_qubits}"
        )
    dim = 1 << num_qubits
    counts = popcounts(num_qubits).astype(np.float64)
    indices = np.arange(dim)
    operators = []
    for k in range(num_qubits):
        src = indices[(indices >> k) & 1 == 1]
        op = np.zeros((dim, dim), dtype=np.complex128)
        op[src ^ (1 << k), src] = np.sqrt(gamma / counts[src])
        operators.append(op)
    return operators


def lindblad_rhs(rho: np.ndarray, operators: Sequence[np.ndarray]) -> np.ndarray:
    """Right-hand side of the master equation, straight from the definition."""
    dim = rho.shape[0]
    if rho.shape != (dim, dim):
        raise ValueError(f"density matrix must be square, got {rho.shape}")
    jump = np.zeros_like(rho)
    decay = np.zeros_like(rho)
    for op in operators:
        if op.shape != rho.shape:
            raise ValueError(f"operator shape {op.shape} does not match {rho.shape}")
        jump += op @ rho @ op.conj().T
        decay += op.conj().T @ op
    return jump - 0.5 * (decay @ rho + rho @ decay)


def _compile_rhs(
    operators: Sequence[np.ndarray], dim: int
) -> Callable[[np.ndarray], np.ndarray] | None:
    """Precompute an index-based evaluator equivalent to ``lindblad_rhs``.

    Each operator is reduced to its nonzero entries once, so a right-hand
    side evaluation costs O(nnz^2) per operator instead of dense matrix
    products. Returns None when every operator is zero (free evolution).
    """
    terms = []
    for op in operators:
        rows, cols = np.nonzero(op)
        if rows.size == 0:
            continue
        values = op[rows, cols]
        terms.append((rows, cols, values[:, None] * values.conj()[None, :],
                      np.unique(rows).size == rows.size))
    decay = np.zeros((dim, dim), dtype=np.complex128)
    for op in operators:
        decay += op.conj().T @ op
    if not terms and not decay.any():
        return None
    diagonal = np.diagonal(decay).copy()
    if np.count_nonzero(decay - np.diag(diagonal)) == 0:
        anti = -0.5 * (diagonal[:, None] + diagonal[None, :])

        def rhs(rho: np.ndarray) -> np.ndarray:
            out = anti * rho
            for rows, cols, outer, unique_rows in terms:
                block = outer * rho[np.ix_(cols, cols)]
                if unique_rows:
                    out[np.ix_(rows, rows)] += block
                else:
                    np.add.at(out, (rows[:, None], rows[None, :]), block)
            return out

    else:  # non-diagonal decay operator: keep the dense anticommutator

        def rhs(rho: np.ndarray) -> np.ndarray:
            out = -0.5 * (decay @ rho + rho @ decay)
            for rows, cols, outer, unique_rows in terms:
                block = outer * rho[np.ix_(cols, cols)]
                if unique_rows:
                    out[np.ix_(rows, rows)] += block
                else:
                    np.add.at(out, (rows[:, None], rows[None, :]), block)
            return out

    return rhs


def integrate_interval(
    rho: np.ndarray, operators: Sequence[np.ndarray], duration: float, steps: int
) -> np.ndarray:
    """Propagate the master equation for ``duration`` with fixed-step RK4.

    Raises ToleranceError if the trace drifts beyond 1e-7, which indicates
    the step size is too coarse for the given rates.
    """
    if steps < 1:
        raise ValueError(f"need at least one step, got {steps}")
    rho = np.array(rho, dtype=np.complex128)
    rhs = _compile_rhs(operators, rho.shape[0])
    if rhs is None or duration == 0.0:
        return rho
    h = duration / steps
    for _ in range(steps):
        k1 = rhs(rho)
        k2 = rhs(rho + (0.5 * h) * k1)
        k3 = rhs(rho + (0.5 * h) * k2)
        k4 = rhs(rho + h * k3)
        rho = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        drift = abs(np.trace(rho).real - 1.0)
        if drift > _TRACE_TOLERANCE:
            raise ToleranceError(
                f"trace drifted by {drift:.3e} at step size {h:.3e}; use more steps"
            )
    return rho


def _swap_permutation(num_qubits: int, j: int, k: int) -> np.ndarray:
    indices = np.arange(1 << num_qubits)
    differ = ((indices >> j) ^ (indices >> k)) & 1
    return indices ^ ((differ << j) | (differ << k))


def _cnot_permutation(num_qubits: int, control: int, target: int) -> np.ndarray:
    indices = np.arange(1 << num_qubits)
    return indices ^ (((indices >> control) & 1) << target)


def chain_density(config: ExperimentConfig) -> np.ndarray:
    """Density matrix after the full delivery phase, before teleportation.

    Starts from the same seed-derived initial state the trajectories use,
    alternating exact swap conjugations with RK4-integrated damping
    intervals in the order the config requests.
    """
    n = config.n
    if n > ORACLE_MAX_QUBITS:
        raise ValueError(
            f"density-matrix reference limited to {ORACLE_MAX_QUBITS} qubits, got {n}"
        )
    phi = prepare_initial_chain(n, preparation_stream(config.master_seed))
    rho = np.outer(phi.amplitudes, phi.amplitudes.conj())
    operators = build_lindblad_operators(n, config.gamma)
    steps = rk4_steps(config.gamma)
    for g in range(1, n - 1):
        perm = _swap_permutation(n, g, g + 1)
        if config.damp_first:
            rho = integrate_interval(rho, operators, 1.0, steps)
            rho = rho[np.ix_(perm, perm)]
        else:
            rho = rho[np.ix_(perm, perm)]
            rho = integrate_interval(rho, operators, 1.0, steps)
    return rho


def _teleport_density(rho: np.ndarray, psi, num_qubits: int) -> float:
    """Outcome-averaged teleportation map in density-matrix form.

    Identical map to the trajectory-side teleportation (ancilla on top,
    CNOT and Hadamard, four projected branches with Pauli corrections),
    implemented by conjugation so that any reference/ensemble discrepancy
    isolates the unraveling rather than the protocol.
    """
    alpha, beta = complex(psi[0]), complex(psi[1])
    target = np.array([alpha, beta])
    big = np.kron(np.outer(target, target.conj()), rho)
    perm = _cnot_permutation(num_qubits + 1, num_qubits, 0)
    big = big[np.ix_(perm, perm)]
    dim = 1 << num_qubits
    four = big.reshape(2, dim, 2, dim)
    four = np.einsum("pa,aibj,qb->piqj", HADAMARD, four, HADAMARD.conj())

    half = 1 << (num_qubits - 1)
    quarter = 1 << (num_qubits - 2)
    blocks = four.reshape(2, half, 2, 2, half, 2)
    fidelity = 0.0
    for (anc_bit, alice_bit), correction in _CORRECTIONS.items():
        block = blocks[anc_bit, :, alice_bit, anc_bit, :, alice_bit]
        sub = block.reshape(2, quarter, 2, quarter)
        if correction is not None:
            sub = np.einsum("pa,aibj,qb->piqj", correction, sub, correction.conj())
        bob = np.einsum("aibi->ab", sub)  # unnormalized: carries the branch weight
        fidelity += float(
            (target.conj() @ (bob @ target)).real
        )
    return float(min(1.0, max(0.0, fidelity)))


def run_protocol_density(config: ExperimentConfig) -> float:
    """Exact protocol fidelity from the density-matrix reference."""
    return _teleport_density(chain_density(config), config.psi, config.n)


def check_density_invariants(rho: np.ndarray, *, atol: float = 1e-9) -> None:
    """Assert Hermiticity, unit trace, and near-positivity (on demand)."""
    if np.abs(rho - rho.conj().T).max() > atol:
        raise ToleranceError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > atol:
        raise ToleranceError("density matrix trace is not 1")
    if np.linalg.eigvalsh(rho).min() < -1e-7:
        raise ToleranceError("density matrix has a significantly negative eigenvalue")
