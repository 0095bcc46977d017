"""
Holonomic gates driven by dissipation.

A noiseless block is dragged around a closed loop U(s) of frames while a
dissipator keeps its cofactor relaxed. When the loop closes, the encoded
state has picked up exp(−i ∫ V_eff), a gate that depends only on the loop.
"""
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from config import REL_TOL
from services.adiabatic import block_projector, effective_unitary, v_eff
from services.errors import DimensionError, ParameterError, RankError
from services.event_log import log_app_event
from services.lindblad import ConstantGenerator, FramePath, Lindbladian, RotatedFrameCurve, propagate_curve
from services.numerics import (
    apply_superop,
    conjugation_superop,
    hermitize,
    ket,
    pauli_string,
    polar_unitary,
    principal_angles,
    projector,
    trace_distance,
    vec,
)
from services.structure import Block, BlockTracker, product_block

CLOSURE_TOL = 1e-10
FULL_TURN = 2.0 * math.pi


class LoopAxes(str, Enum):
    """Pairs of anticommuting Pauli generators a·P₁ + b·P₂."""
    ZZ_X = "ZZ_X"
    XX_Z = "XX_Z"
    XZZ_XX = "XZZ_XX"

    @property
    def labels(self) -> Tuple[str, str]:
        return {
            LoopAxes.ZZ_X: ("ZZ", "XI"),
            LoopAxes.XX_Z: ("XX", "ZI"),
            LoopAxes.XZZ_XX: ("XZZ", "XXI"),
        }[self]

    @property
    def qubits(self) -> int:
        return len(self.labels[0])


@dataclass
class Loop:
    frame: FramePath
    base: Lindbladian
    block0: Block
    axes: Optional[LoopAxes] = None
    a: float = 0.0
    b: float = 0.0

    @property
    def curve(self) -> RotatedFrameCurve:
        return RotatedFrameCurve(self.base, self.frame)

    @property
    def tracker(self) -> BlockTracker:
        return BlockTracker.fixed(self.block0)

    def predicted_gate(self) -> np.ndarray:
        if self.frame.is_constant:
            return effective_unitary(v_eff(self.frame.generator(0.0), self.block0))
        return effective_unitary(lambda s: v_eff(self.frame.generator(s), self.block0))

    def lab_block(self, s: float) -> Block:
        """Block of the lab-frame generator L(s) = U(s)† L̃ U(s)."""
        return self.block0.rotated(self.frame.unitary(s).conj().T)

    def to_dict(self) -> Dict:
        return {
            "axes": None if self.axes is None else self.axes.value,
            "a": self.a,
            "b": self.b,
            "m": self.block0.m,
            "n": self.block0.n,
        }


def check_closure(frame: FramePath, block0: Block) -> float:
    """‖U(1) − I‖; raises when the loop is open or the block does not return."""
    U1 = frame.unitary(1.0)
    defect = float(np.linalg.norm(U1 - np.eye(frame.dim), 2))
    if defect > CLOSURE_TOL:
        raise ParameterError(f"loop does not close: ‖U(1) − I‖ = {defect:.3e}")
    angles = principal_angles(U1.conj().T @ block0.isometry, block0.isometry)
    if angles.size and float(np.max(angles)) > 1e-8:
        raise ParameterError("block range does not return to itself at s=1")
    return defect


def make_pauli_loop(
    axes: LoopAxes,
    a: float,
    b: float,
    base: Lindbladian,
    block0: Optional[Block] = None,
) -> Loop:
    """
    Loop U(s) = exp(−is(aP₁ + bP₂)) for anticommuting Paulis P₁, P₂.

    G² = (a² + b²)I, so the loop closes exactly when a² + b² = (2π)².
    The default block is the last qubit as cofactor with ϱ^B = I/2.
    """
    axes = LoopAxes(axes)
    if abs(a * a + b * b - FULL_TURN ** 2) > CLOSURE_TOL * FULL_TURN ** 2:
        raise ParameterError(f"a² + b² = {a * a + b * b:.12g} must equal (2π)² for the loop to close")
    dim = 2 ** axes.qubits
    if base.dim != dim:
        raise DimensionError(f"{axes.value} loop acts on {axes.qubits} qubits, base has dim {base.dim}")
    first, second = axes.labels
    G = a * pauli_string(first) + b * pauli_string(second)
    frame = ConstantGenerator(G)
    block0 = product_block(dim // 2, 2) if block0 is None else block0
    defect = check_closure(frame, block0)
    log_app_event("DEBUG", "HOLONOMY", f"{axes.value} loop a={a:.6g} b={b:.6g} closes to {defect:.2e}")
    return Loop(frame, base, block0, axes, a, b)


# ==================== DISCRETE TRANSPORT ====================

@dataclass
class TransportResult:
    state: np.ndarray
    reduced: np.ndarray
    trace_loss: float
    N: int


def transport_grid(N: int, grid: str = "uniform") -> np.ndarray:
    points = np.arange(N + 1) / N
    if grid == "uniform":
        return points
    if grid == "quadratic":
        return points ** 2
    raise ParameterError(f"unknown transport grid '{grid}'")


def transport_discrete(loop: Loop, N: int, rho0: np.ndarray, grid: str = "uniform") -> TransportResult:
    """
    Apply P(s_N)···P(s_1)P(s_0), P(s) the block projector of the lab-frame
    generator at s. The state is renormalized after every projection and the
    lost trace is accumulated.
    """
    if N < 10:
        raise ParameterError(f"discrete transport needs N ≥ 10, got {N}")
    rho = np.asarray(rho0, dtype=complex)
    if rho.shape != (loop.block0.ambient_dim,) * 2:
        raise DimensionError(f"state of shape {rho.shape} for a loop in dim {loop.block0.ambient_dim}")
    kept = 1.0
    for s in transport_grid(N, grid):
        rho = block_projector(loop.lab_block(float(s))).apply(rho)
        trace = float(np.trace(rho).real)
        kept *= trace
        rho = rho / trace
    rho = hermitize(rho)
    return TransportResult(rho, loop.block0.reduce(rho), 1.0 - kept, N)


# ==================== GATE EXTRACTION ====================

@dataclass
class ExtractedGate:
    unitary: np.ndarray
    fidelity: float
    process_fidelity: float
    superoperator: np.ndarray

    def to_dict(self) -> Dict:
        return {
            "unitary": self.unitary,
            "fidelity": self.fidelity,
            "process_fidelity": self.process_fidelity,
        }


def fiducial_states(m: int) -> List[np.ndarray]:
    """Inputs spanning operator space: products of |0⟩,|1⟩,|+⟩,|+i⟩ on 2^k levels."""
    k = int(round(math.log2(m))) if m > 0 else 0
    if m > 1 and 2 ** k == m:
        single = [
            np.array([1, 0], dtype=complex),
            np.array([0, 1], dtype=complex),
            np.array([1, 1], dtype=complex) / math.sqrt(2),
            np.array([1, 1j], dtype=complex) / math.sqrt(2),
        ]
        states = [np.array([1.0], dtype=complex)]
        for _ in range(k):
            states = [np.kron(s, t) for s in states for t in single]
        return [projector(s) for s in states]
    states = [projector(ket(i, m)) for i in range(m)]
    for i in range(m):
        for j in range(i + 1, m):
            states.append(projector((ket(i, m) + ket(j, m)) / math.sqrt(2)))
            states.append(projector((ket(i, m) + 1j * ket(j, m)) / math.sqrt(2)))
    return states


def extract_unitary(samples: Sequence[Tuple[np.ndarray, np.ndarray]]) -> ExtractedGate:
    """
    Reconstruct the channel from (input, output) pairs by linear inversion and
    return the unitary closest to its dominant Kraus operator, with the
    average gate fidelity between the channel and that unitary.
    """
    if not samples:
        raise RankError("no channel samples")
    m = np.asarray(samples[0][0]).shape[0]
    inputs = np.array([vec(np.asarray(rho_in, dtype=complex)) for rho_in, _ in samples]).T
    outputs = np.array([vec(np.asarray(rho_out, dtype=complex)) for _, rho_out in samples]).T
    svals = scipy.linalg.svdvals(inputs)
    rank = int(np.sum(svals > REL_TOL * svals[0]))
    if rank < m * m:
        raise RankError(f"input states span {rank} of {m * m} operator dimensions")
    superop = outputs @ np.linalg.pinv(inputs)

    choi = np.zeros((m * m, m * m), dtype=complex)
    for i in range(m):
        for j in range(m):
            unit = np.zeros((m, m), dtype=complex)
            unit[i, j] = 1.0
            choi += np.kron(unit, apply_superop(superop, unit))
    values, vectors = np.linalg.eigh(hermitize(choi))
    kraus = math.sqrt(max(values[-1], 0.0)) * vectors[:, -1].reshape(m, m).T
    U = polar_unitary(kraus)

    process = float(np.real(np.trace(conjugation_superop(U).conj().T @ superop)) / (m * m))
    average = (m * process + 1.0) / (m + 1.0)
    return ExtractedGate(U, average, process, superop)


def unitary_fidelity(U: np.ndarray, V: np.ndarray) -> float:
    """Average gate fidelity between two unitaries; blind to global phase."""
    m = U.shape[0]
    overlap = abs(np.trace(U.conj().T @ V)) ** 2
    return float((overlap + m) / (m * (m + 1)))


# ==================== GATE RUNS ====================

@dataclass
class GateRun:
    method: str
    gate: ExtractedGate
    target: np.ndarray
    gate_fidelity: float
    trace_loss: float
    T: Optional[float] = None
    N: Optional[int] = None
    deviations: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "method": self.method,
            "T": self.T,
            "N": self.N,
            "unitary": self.gate.unitary,
            "target": self.target,
            "gate_fidelity": self.gate_fidelity,
            "channel_fidelity": self.gate.fidelity,
            "trace_loss": self.trace_loss,
        }


def run_loop_gate(
    loop: Loop,
    T: Optional[float] = None,
    N: Optional[int] = None,
    steps: Optional[int] = None,
    threads: Optional[int] = None,
) -> GateRun:
    """Send the fiducial inputs around the loop and name the resulting gate."""
    if (T is None) == (N is None):
        raise ParameterError("give exactly one of T (propagation) or N (discrete transport)")
    block = loop.block0
    inputs = fiducial_states(block.m)

    def run_one(rho_a: np.ndarray) -> Tuple[np.ndarray, float]:
        rho0 = block.embed(rho_a)
        if T is not None:
            final = propagate_curve(loop.curve, rho0, T, steps).final
            reduced = block.reduce(final)
            return reduced, float(1.0 - np.trace(reduced).real)
        result = transport_discrete(loop, N, rho0)
        return result.reduced, result.trace_loss

    outputs: List[Optional[Tuple[np.ndarray, float]]] = [None] * len(inputs)
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            futures = {executor.submit(run_one, rho): i for i, rho in enumerate(inputs)}
            for future in as_completed(futures):
                outputs[futures[future]] = future.result()
    else:
        outputs = [run_one(rho) for rho in inputs]

    gate = extract_unitary([(rho_in, out[0]) for rho_in, out in zip(inputs, outputs)])
    target = loop.predicted_gate()
    deviations = [
        trace_distance(out[0], target @ rho_in @ target.conj().T) for rho_in, out in zip(inputs, outputs)
    ]
    run = GateRun(
        method="propagate" if T is not None else "transport",
        gate=gate,
        target=target,
        gate_fidelity=unitary_fidelity(gate.unitary, target),
        trace_loss=max(out[1] for out in outputs),
        T=T,
        N=N,
        deviations=deviations,
    )
    log_app_event(
        "INFO",
        "HOLONOMY",
        f"{run.method} gate: fidelity to target {run.gate_fidelity:.6f}, channel fidelity {gate.fidelity:.6f}",
    )
    return run
