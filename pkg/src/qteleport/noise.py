"""Generalized amplitude damping channel and its stochastic unraveling.

Channel: a basis state carrying m >= 1 excited qubits loses one excitation
at total rate gamma, the loss splitting equally among its excited qubits.
The matching jump operator family is ``L_k = sqrt(gamma) sigma_k^- N^(-1/2)``
with ``N`` the total-excitation-number operator (acting as the identity on
the dark ground component). Two consequences drive everything here:

* the per-qubit jump weight is ``w_k = sum_{b: bit k set} |c_b|^2 / m(b)``,
* the deterministic no-jump generator is ``-(gamma/2) P`` with ``P`` the
  projector onto the excited subspace, so one no-jump sub-step multiplies
  every excited amplitude by the same scalar and the exponential form of
  that factor is exact.

Time is measured in swap intervals (tau = 1), so gamma is dimensionless and
one sub-step lasts ``dt = 1/substeps``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .statevector import StateVector, inverse_popcounts

_ZERO_NORM = 1e-14


class ImpossibleJumpError(RuntimeError):
    """Raised when a jump is requested on a qubit with no excited weight."""


def default_substeps(gamma: float) -> int:
    """Sub-step count keeping gamma*dt at or below 0.01."""
    return max(100 * math.ceil(gamma), 100)


@dataclass
class NoiseModel:
    """Damping rate and sub-step resolution for one swap interval.

    ``first_order`` switches the no-jump amplitude factor from the exact
    ``exp(-gamma*dt/2)`` to the linearized ``1 - gamma*dt/2``; both are kept
    so the linearized stepper can be compared against the exact one.
    """

    gamma: float
    substeps: int | None = None
    first_order: bool = False

    def __post_init__(self) -> None:
        if self.gamma < 0:
            raise ValueError(f"damping rate must be nonnegative, got {self.gamma}")
        if self.substeps is None:
            self.substeps = default_substeps(self.gamma)
        self.substeps = int(self.substeps)
        if self.substeps < 1:
            raise ValueError(f"substeps must be at least 1, got {self.substeps}")
        gdt = self.gamma / self.substeps
        if gdt > 0.05:
            raise ValueError(
                f"gamma*dt = {gdt:.4g} exceeds 0.05; increase substeps"
            )
        if gdt > 0.01:
            warnings.warn(
                f"gamma*dt = {gdt:.4g} above 0.01; jump statistics degrade",
                stacklevel=2,
            )

    @property
    def dt(self) -> float:
        return 1.0 / self.substeps


@dataclass
class JumpTable:
    """Per-qubit jump probabilities for one sub-step and their sum."""

    per_qubit: np.ndarray
    total: float


@dataclass
class JumpCounter:
    """Mutable tally threaded through the stepper for diagnostics."""

    jumps: int = 0


def excitation_weights(state: StateVector) -> np.ndarray:
    """Per-qubit weights w_k = sum over indices with bit k set of |c_b|^2/m(b).

    w_k is <L_k^dag L_k>/gamma, so the weights sum to the total excited
    population and are independent of the damping rate.
    """
    amps = state.amplitudes
    weighted = (amps.real**2 + amps.imag**2) * inverse_popcounts(state.num_qubits)
    w = np.empty(state.num_qubits, dtype=np.float64)
    for k in range(state.num_qubits):
        w[k] = weighted.reshape(-1, 2, 1 << k)[:, 1, :].sum()
    return w


def jump_probabilities(state: StateVector, model: NoiseModel) -> JumpTable:
    """Sub-step jump probabilities dp_k = gamma*dt*w_k for the current state."""
    per_qubit = (model.gamma * model.dt) * excitation_weights(state)
    return JumpTable(per_qubit=per_qubit, total=float(per_qubit.sum()))


def apply_jump(state: StateVector, k: int) -> StateVector:
    """Collapse onto the branch where qubit k just decayed, renormalized.

    Every component with bit k set moves to the index with bit k cleared,
    scaled by 1/sqrt(m(b)); components with bit k clear are annihilated.
    """
    if not 0 <= k < state.num_qubits:
        raise ValueError(f"qubit {k} out of range for {state.num_qubits}-qubit register")
    inv = inverse_popcounts(state.num_qubits)
    view = state.amplitudes.reshape(-1, 2, 1 << k)
    scaled = view[:, 1, :] * np.sqrt(inv.reshape(-1, 2, 1 << k)[:, 1, :])
    weight = float(np.linalg.norm(scaled))
    if weight < _ZERO_NORM:
        raise ImpossibleJumpError(
            f"jump on qubit {k} has numerically zero weight ({weight:.3g})"
        )
    view[:, 0, :] = scaled / weight
    view[:, 1, :] = 0.0
    return state


def apply_no_jump(state: StateVector, model: NoiseModel) -> StateVector:
    """One deterministic no-jump sub-step, renormalized.

    Every amplitude on an excited basis state (any index but 0) picks up the
    same decay factor; the ground amplitude is untouched.
    """
    if model.gamma == 0.0:
        return state
    gdt = model.gamma * model.dt
    factor = (1.0 - 0.5 * gdt) if model.first_order else math.exp(-0.5 * gdt)
    amps = state.amplitudes
    amps[1:] *= factor
    amps /= np.linalg.norm(amps)
    return state


def _select_jump_qubit(per_qubit: np.ndarray, u: float) -> int:
    """Bracket the uniform draw against cumulative dp_k in ascending qubit order.

    A draw exactly on a bracket edge resolves to the lower bracket; qubits
    with dp_k = 0 never fire.
    """
    cumulative = np.cumsum(per_qubit)
    k = int(np.searchsorted(cumulative, u, side="left"))
    if k >= per_qubit.size:
        # u crept past the cumulative total by rounding slop; take the top.
        k = per_qubit.size - 1
        while per_qubit[k] == 0.0:
            k -= 1
    else:
        while per_qubit[k] == 0.0:
            k += 1
    return k


def mcwf_step(state: StateVector, model: NoiseModel, u: float) -> StateVector:
    """One stochastic sub-step driven by a uniform draw from [0, 1).

    Jumps when u <= dp (total jump probability), picking the qubit by
    cumulative bracketing; otherwise applies the no-jump evolution.
    """
    table = jump_probabilities(state, model)
    if table.total > 0.0 and u <= table.total:
        return apply_jump(state, _select_jump_qubit(table.per_qubit, u))
    return apply_no_jump(state, model)


def evolve_steps(
    state: StateVector,
    model: NoiseModel,
    rng: np.random.Generator,
    num_steps: int,
    *,
    counters: JumpCounter | None = None,
) -> StateVector:
    """Advance ``num_steps`` sub-steps, drawing one uniform per step in order.

    Matches the composition of ``mcwf_step`` but applies no-jump sub-steps
    lazily: between jumps the decay factor is uniform over the excited
    subspace, so the jump probabilities follow a scalar recurrence and the
    amplitudes are rescaled only when a jump fires or the run ends. The
    per-sub-step cost is then O(1) in the register size, which is what makes
    long chains tractable.
    """
    if num_steps <= 0:
        return state
    uniforms = rng.random(num_steps)
    if model.gamma == 0.0:
        return state  # draws consumed so streams stay aligned with mcwf_step
    gdt = model.gamma * model.dt
    amp_factor = (1.0 - 0.5 * gdt) if model.first_order else math.exp(-0.5 * gdt)
    survival = amp_factor * amp_factor  # per-step factor on the excited weight
    weights = excitation_weights(state)
    excited = min(float(weights.sum()), 1.0)
    pending = 0
    pos = 0
    while pos < num_steps:
        if excited <= 0.0:
            pending += num_steps - pos
            break
        remaining = num_steps - pos
        decay = survival ** (pending + np.arange(remaining))
        current = excited * decay / ((1.0 - excited) + excited * decay)
        hits = uniforms[pos : pos + remaining] <= gdt * current
        if not hits.any():
            pending += remaining
            break
        first = int(np.argmax(hits))
        pending += first
        u = float(uniforms[pos + first])
        pos += first + 1
        shrink = survival**pending
        scale = shrink / ((1.0 - excited) + excited * shrink)
        qubit = _select_jump_qubit((gdt * scale) * weights, u)
        # The pending decay factor is uniform on the jumping (bit-set)
        # components, so it cancels against the jump's renormalization.
        apply_jump(state, qubit)
        if counters is not None:
            counters.jumps += 1
        weights = excitation_weights(state)
        excited = min(float(weights.sum()), 1.0)
        pending = 0
    if pending:
        state.amplitudes[1:] *= amp_factor**pending
        state.amplitudes /= np.linalg.norm(state.amplitudes)
    return state


def evolve_interval(
    state: StateVector,
    model: NoiseModel,
    rng: np.random.Generator,
    *,
    counters: JumpCounter | None = None,
) -> StateVector:
    """Damp for one full swap interval (tau = 1), i.e. ``substeps`` sub-steps."""
    return evolve_steps(state, model, rng, model.substeps, counters=counters)
