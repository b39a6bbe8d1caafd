"""End-to-end noisy teleportation experiment over a swap-gate chain.

One experiment: prepare a chain whose last two qubits (1 and 0) share a
Bell pair while the relays carry equal-modulus random-phase coefficients,
walk one Bell member from qubit 1 up to qubit n-1 through n-2 swap gates
with one damping interval after each gate, then teleport an ancilla state
through the (now long-distance) pair and score Bob's reduced state against
the intended state. Trajectories are averaged into a fidelity estimate.

Reproducibility: all randomness derives from a 64-bit master seed through
numpy ``SeedSequence`` spawn keys. The preparation stream uses spawn key
``(1,)`` and is shared by every trajectory and by the density-matrix
reference, so the whole ensemble evolves one common initial state. The
noise stream of trajectory i uses spawn key ``(0, i)``, which makes every
trajectory reproducible in isolation and the ensemble independent of how
trajectories are scheduled across workers.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .noise import JumpCounter, NoiseModel, evolve_interval
from .statevector import (
    HADAMARD,
    MAX_QUBITS,
    PAULI_X,
    PAULI_Z,
    StateVector,
    apply_cnot,
    apply_single,
    apply_swap,
    project_qubit,
    pure_fidelity,
    reduce_to_qubit,
)

_SQRT1_2 = 1.0 / math.sqrt(2.0)
DEFAULT_PSI = (complex(_SQRT1_2), complex(_SQRT1_2))

_PREP_KEY = 1
_NOISE_KEY = 0

# Bell outcome (ancilla bit, Alice bit) -> Pauli correction on Bob's qubit.
_CORRECTIONS = {
    (0, 0): None,
    (0, 1): PAULI_X,
    (1, 0): PAULI_Z,
    (1, 1): PAULI_Z @ PAULI_X,
}


def preparation_stream(master_seed: int) -> np.random.Generator:
    """Random stream for the initial chain coefficients.

    Derived from the master seed alone (spawn key ``(1,)``), so every
    trajectory and the density-matrix reference draw the same phases.
    """
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(_PREP_KEY,)))


def trajectory_stream(master_seed: int, trajectory_index: int) -> np.random.Generator:
    """Independent noise stream for one trajectory (spawn key ``(0, i)``)."""
    return np.random.default_rng(
        np.random.SeedSequence(master_seed, spawn_key=(_NOISE_KEY, trajectory_index))
    )


def _check_psi(alpha: complex, beta: complex) -> None:
    weight = abs(alpha) ** 2 + abs(beta) ** 2
    if abs(weight - 1.0) > 1e-10:
        raise ValueError(f"teleported state norm {weight} is not 1")


@dataclass
class ExperimentConfig:
    """Full description of one experiment.

    ``psi`` is the single-qubit state to teleport. ``substeps`` of None
    picks the default resolution for the given damping rate. The remaining
    flags select protocol variants: ``sample_outcomes`` draws one Bell
    outcome per trajectory instead of averaging all four, ``damp_first``
    damps before instead of after each swap, and ``first_order_no_jump``
    uses the linearized no-jump factor.
    """

    n: int
    gamma: float
    n_traj: int = 400
    substeps: int | None = None
    psi: tuple[complex, complex] = DEFAULT_PSI
    master_seed: int = 0
    use_oracle: bool = False
    sample_outcomes: bool = False
    damp_first: bool = False
    first_order_no_jump: bool = False

    def __post_init__(self) -> None:
        if self.n < 3:
            raise ValueError(f"chain needs at least 3 qubits, got {self.n}")
        if self.n_traj < 1:
            raise ValueError(f"need at least one trajectory, got {self.n_traj}")
        if self.gamma < 0:
            raise ValueError(f"damping rate must be nonnegative, got {self.gamma}")
        self.psi = (complex(self.psi[0]), complex(self.psi[1]))
        _check_psi(*self.psi)

    def noise_model(self) -> NoiseModel:
        return NoiseModel(self.gamma, self.substeps, first_order=self.first_order_no_jump)


@dataclass
class TrajectoryStats:
    """Ensemble fidelity estimate with its standard error and diagnostics."""

    mean_fidelity: float
    sem: float
    n_traj: int
    per_trajectory_fidelities: np.ndarray | None = None
    mean_jump_count: float = 0.0


def prepare_initial_chain(n: int, rng: np.random.Generator) -> StateVector:
    """Initial chain state: random-phase relays times a Bell pair on (1, 0).

    Relay coefficients have modulus exactly 2**(-(n-2)/2) and i.i.d. phases
    uniform on [0, 2pi), so the state is normalized by construction.
    """
    if n < 3:
        raise ValueError(f"chain needs at least 3 qubits, got {n}")
    if n > MAX_QUBITS:
        raise ValueError(f"{n} qubits exceeds the {MAX_QUBITS}-qubit memory guard")
    relays = 1 << (n - 2)
    phases = 2.0 * np.pi * rng.random(relays)
    coeff = np.exp(1j * phases) * (relays**-0.5)
    amps = np.zeros(1 << n, dtype=np.complex128)
    grouped = amps.reshape(relays, 4)
    grouped[:, 0b00] = coeff * _SQRT1_2
    grouped[:, 0b11] = coeff * _SQRT1_2
    return StateVector(n, amps)


def run_swap_chain(
    state: StateVector,
    model: NoiseModel,
    rng: np.random.Generator,
    *,
    damp_first: bool = False,
    counters: JumpCounter | None = None,
) -> StateVector:
    """Deliver the Bell member from qubit 1 to qubit n-1 under damping.

    Swap gates g..g+1 for g = 1 .. n-2 are instantaneous and perfect; each
    is paired with one damping interval tau, so the delivery takes total
    time (n-2)*tau. The default order is gate first, then damping.
    """
    n = state.num_qubits
    if n < 3:
        raise ValueError(f"chain needs at least 3 qubits, got {n}")
    for g in range(1, n - 1):
        if damp_first:
            evolve_interval(state, model, rng, counters=counters)
            apply_swap(state, g, g + 1)
        else:
            apply_swap(state, g, g + 1)
            evolve_interval(state, model, rng, counters=counters)
    return state


def teleport_fidelity(
    state: StateVector,
    psi,
    *,
    sample: bool = False,
    rng: np.random.Generator | None = None,
) -> float:
    """Teleport ``psi`` through the delivered pair and score Bob's qubit.

    An ancilla prepared in psi is appended above the chain, a CNOT from the
    ancilla onto Alice's qubit 0 and a Hadamard on the ancilla rotate the
    pair (ancilla, qubit 0) into the Bell basis, and each of the four
    outcomes is projected out, Pauli-corrected on Bob's qubit n-1, and
    reduced to Bob's density matrix. By default the four branches are
    averaged with their outcome probabilities, which has the same mean as
    sampling one outcome but strictly lower variance; ``sample=True`` draws
    a single outcome from ``rng`` instead.
    """
    alpha, beta = complex(psi[0]), complex(psi[1])
    _check_psi(alpha, beta)
    n = state.num_qubits
    if n + 1 > MAX_QUBITS:
        raise ValueError(
            f"teleportation ancilla would need {n + 1} qubits, over the {MAX_QUBITS}-qubit guard"
        )
    extended = np.concatenate([alpha * state.amplitudes, beta * state.amplitudes])
    work = StateVector(n + 1, extended)
    apply_cnot(work, n, 0)
    apply_single(work, n, HADAMARD)

    probabilities = np.zeros(4)
    fidelities = np.zeros(4)
    for i, ((anc_bit, alice_bit), correction) in enumerate(_CORRECTIONS.items()):
        _, anc_branch = project_qubit(work, n, anc_bit)
        p, branch = project_qubit(anc_branch, 0, alice_bit)
        if p <= 0.0:
            continue
        branch.amplitudes /= math.sqrt(p)
        if correction is not None:
            apply_single(branch, n - 1, correction)
        probabilities[i] = p
        fidelities[i] = pure_fidelity(reduce_to_qubit(branch, n - 1), (alpha, beta))
    if sample:
        if rng is None:
            raise ValueError("outcome sampling needs a random stream")
        pick = int(np.searchsorted(np.cumsum(probabilities), rng.random(), side="left"))
        return float(fidelities[min(pick, 3)])
    return float(min(1.0, max(0.0, float(np.dot(probabilities, fidelities)))))


def _trajectory_detail(config: ExperimentConfig, trajectory_index: int) -> tuple[float, int]:
    prep_rng = preparation_stream(config.master_seed)
    state = prepare_initial_chain(config.n, prep_rng)
    noise_rng = trajectory_stream(config.master_seed, trajectory_index)
    counters = JumpCounter()
    run_swap_chain(
        state,
        config.noise_model(),
        noise_rng,
        damp_first=config.damp_first,
        counters=counters,
    )
    fidelity = teleport_fidelity(
        state, config.psi, sample=config.sample_outcomes, rng=noise_rng
    )
    return fidelity, counters.jumps


def run_trajectory(config: ExperimentConfig, trajectory_index: int) -> float:
    """Fidelity of one trajectory; deterministic for fixed (config, index)."""
    return _trajectory_detail(config, trajectory_index)[0]


def _pool_worker(item: tuple[ExperimentConfig, int]) -> tuple[float, int]:
    return _trajectory_detail(*item)


def run_experiment(config: ExperimentConfig, *, workers: int = 1) -> TrajectoryStats:
    """Average trajectories 0 .. n_traj-1 into a fidelity estimate.

    Trajectories are independent tasks; with ``workers`` > 1 they run in a
    process pool. Results are reduced in ascending index order with exact
    (compensated) summation, so the outcome is identical for any worker
    count.
    """
    indices = range(config.n_traj)
    if workers <= 1:
        details = [_trajectory_detail(config, i) for i in indices]
    else:
        chunk = max(1, config.n_traj // (workers * 8))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            details = list(
                pool.map(_pool_worker, ((config, i) for i in indices), chunksize=chunk)
            )
    fids = [d[0] for d in details]
    mean = math.fsum(fids) / config.n_traj
    if config.n_traj > 1 and max(fids) > min(fids):
        variance = math.fsum((f - mean) ** 2 for f in fids) / (config.n_traj - 1)
        sem = math.sqrt(variance / config.n_traj)
    else:
        sem = 0.0
    return TrajectoryStats(
        mean_fidelity=min(1.0, max(0.0, mean)),
        sem=sem,
        n_traj=config.n_traj,
        per_trajectory_fidelities=np.array(fids),
        mean_jump_count=math.fsum(d[1] for d in details) / config.n_traj,
    )
