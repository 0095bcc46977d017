"""
Adiabatic transport inside a noiseless block.

When the generator changes slowly along a curve, a state ρ^A ⊗ ϱ^B stays in
product form and the A factor evolves under the effective Hamiltonian
V_eff(s) = Tr_B(P V(s) P · I⊗ϱ^B). This module provides the projector onto
a block's fixed points, V_eff, the resulting effective unitary, and the
measured deviation of the full dissipative evolution from that prediction.
"""
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from config import EFFECTIVE_STEPS, JITTER, SLOPE_FLOOR
from services.errors import DimensionError, ParameterError
from services.event_log import log_app_event
from services.lindblad import LindbladCurve, propagate_curve
from services.numerics import (
    PAULIS,
    Side,
    hermitize,
    kron,
    matexp,
    partial_trace,
    time_ordered_product,
    trace_distance,
    traceless,
    vec,
)
from services.structure import Block, BlockTracker, GapReport, compute_gaps

MIN_EFFECTIVE_STEPS = 100


# ==================== PROJECTOR ====================

class SuperProjector:
    """ρ ↦ W (Tr_B(W†ρW) ⊗ ϱ^B) W† for one block."""

    def __init__(self, block: Block):
        self.block = block
        self._matrix: Optional[np.ndarray] = None

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return self.block.embed(self.block.reduce(rho))

    __call__ = apply

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            d = self.block.ambient_dim
            columns = []
            for j in range(d):
                for i in range(d):
                    unit = np.zeros((d, d), dtype=complex)
                    unit[i, j] = 1.0
                    columns.append(vec(self.apply(unit)))
            self._matrix = np.array(columns).T
        return self._matrix


def block_projector(block: Block) -> SuperProjector:
    return SuperProjector(block)


# ==================== EFFECTIVE HAMILTONIANS ====================

def v_eff(V: np.ndarray, block: Block) -> np.ndarray:
    """Tr_B(W†VW · I⊗ϱ^B): the part of V the noiseless factor feels."""
    V = np.asarray(V, dtype=complex)
    if V.shape != (block.ambient_dim, block.ambient_dim):
        raise DimensionError(f"perturbation of shape {V.shape} for a block in dim {block.ambient_dim}")
    weighted = block.compress(V) @ np.kron(np.eye(block.m), block.fixed_state)
    return hermitize(partial_trace(weighted, block.m, block.n, Side.B))


def pauli_coefficients(X: np.ndarray) -> Dict[str, float]:
    """Real coefficients c_P of X = Σ c_P P over Pauli strings (dimension 2^k)."""
    dim = X.shape[0]
    k = int(round(math.log2(dim)))
    if 2 ** k != dim:
        raise DimensionError(f"Pauli expansion needs a power-of-two dimension, got {dim}")
    labels = [""]
    for _ in range(k):
        labels = [label + p for label in labels for p in "IXYZ"]
    coefficients = {}
    for label in labels:
        P = kron(*(PAULIS[ch] for ch in label))
        coefficients[label] = float(np.real(np.trace(P @ X)) / dim)
    return coefficients


def spans_su(generators: Sequence[np.ndarray], tol: float = 1e-9) -> bool:
    """Whether the Lie algebra generated by the traceless parts is all of su(m)."""
    if not generators:
        return False
    m = generators[0].shape[0]
    target = m * m - 1
    basis: List[np.ndarray] = []

    def add(X: np.ndarray) -> bool:
        X = traceless(hermitize(X))
        candidate = basis + [X]
        rows = np.array([np.concatenate([B.real.ravel(), B.imag.ravel()]) for B in candidate])
        rank = np.linalg.matrix_rank(rows, tol=tol * max(1.0, np.abs(rows).max()))
        if rank > len(basis):
            basis.append(X)
            return True
        return False

    for G in generators:
        add(G)
    grew = True
    while grew and len(basis) < target:
        grew = False
        for A in list(basis):
            for B in list(basis):
                if add(1j * (A @ B - B @ A)):
                    grew = True
    return len(basis) == target


# ==================== EFFECTIVE UNITARY ====================

VeffCurve = Union[np.ndarray, Callable[[float], np.ndarray]]


def effective_unitary(veff_curve: VeffCurve, s_end: float = 1.0, steps: int = EFFECTIVE_STEPS) -> np.ndarray:
    """Time-ordered exp(−i ∫₀^{s_end} V_eff(s) ds) by midpoint exponential steps."""
    if not 0.0 < s_end <= 1.0:
        raise ParameterError(f"s_end must lie in (0, 1], got {s_end}")
    if steps < MIN_EFFECTIVE_STEPS:
        raise ParameterError(f"effective unitary needs at least {MIN_EFFECTIVE_STEPS} steps")
    if not callable(veff_curve):
        return matexp(-1j * s_end * np.asarray(veff_curve, dtype=complex))
    return time_ordered_product(veff_curve, 0.0, s_end, steps)


def _check_tracker(tracker: BlockTracker) -> Block:
    if not tracker.is_fixed:
        raise ParameterError(
            "adiabatic error needs a block that is fixed in the co-moving frame; "
            "describe the curve with a rotating frame"
        )
    block = tracker.block(0.0)
    if np.linalg.norm(traceless(block.internal_hamiltonian)) > 1e-9:
        raise ParameterError("tracking of blocks with a non-trivial internal Hamiltonian is not supported")
    return block


def block_veff_curve(curve: LindbladCurve, block: Block) -> VeffCurve:
    if curve.is_stationary:
        return v_eff(curve.frame_generator(0.0), block)
    return lambda s: v_eff(curve.frame_generator(s), block)


@dataclass
class AdiabaticRun:
    T: float
    error: float
    leakage: float
    steps: int
    final_a: np.ndarray
    ideal_a: np.ndarray

    def to_dict(self) -> Dict:
        return {
            "T": self.T,
            "error": self.error,
            "leakage": self.leakage,
            "steps": self.steps,
            "final_a": self.final_a,
            "ideal_a": self.ideal_a,
        }


def adiabatic_error(
    curve: LindbladCurve,
    tracker: BlockTracker,
    rho0_a: np.ndarray,
    T: float,
    steps: Optional[int] = None,
    start_mixed: bool = False,
) -> AdiabaticRun:
    """
    Trace distance between Tr_B(P ρ(T) P) and the effective-unitary prediction.

    The initial state is ρ0^A ⊗ ϱ^B(0), or ρ0^A ⊗ I/n when ``start_mixed``
    (the cofactor needs no preparation; it relaxes on its own).
    """
    block = _check_tracker(tracker)
    rho0_a = np.asarray(rho0_a, dtype=complex)
    if rho0_a.shape != (block.m, block.m):
        raise DimensionError(f"A-state of shape {rho0_a.shape} for a block with m={block.m}")
    rho_b = np.eye(block.n, dtype=complex) / block.n if start_mixed else None
    rho0 = block.embed(rho0_a, rho_b)

    trajectory = propagate_curve(curve, rho0, T, steps)
    final_a = block.reduce(trajectory.final)
    leakage = float(1.0 - np.trace(final_a).real)

    U = effective_unitary(block_veff_curve(curve, block))
    ideal_a = U @ rho0_a @ U.conj().T
    error = trace_distance(final_a, ideal_a)
    log_app_event(
        "DEBUG", "ADIABATIC", f"T={T:g}: error {error:.4e}, leakage {leakage:.3e} ({trajectory.steps} steps)"
    )
    return AdiabaticRun(T, error, leakage, trajectory.steps, final_a, ideal_a)


# ==================== SCALING ====================

def fit_loglog_slope(T_values: Sequence[float], errors: Sequence[float]) -> Optional[float]:
    """OLS slope of log(error) against log(T), ignoring errors below the integrator floor."""
    points = [(math.log(T), math.log(e)) for T, e in zip(T_values, errors) if e >= SLOPE_FLOOR]
    if len(points) < 2:
        return None
    x = np.array([p[0] for p in points])
    y = np.array([p[1] for p in points])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


@dataclass
class ScalingReport:
    T_values: List[float]
    errors: List[float]
    leakages: List[float]
    fitted_slope: Optional[float]
    monotonic: bool
    envelope_constant: float
    envelope_holds: bool
    gap: Optional[GapReport] = None
    warnings: List[str] = field(default_factory=list)

    @property
    def flat(self) -> bool:
        return self.fitted_slope is None

    def csv_rows(self) -> List[List[float]]:
        return [[T, e, l] for T, e, l in zip(self.T_values, self.errors, self.leakages)]

    def to_dict(self) -> Dict:
        return {
            "T_values": list(self.T_values),
            "errors": list(self.errors),
            "leakages": list(self.leakages),
            "fitted_slope": self.fitted_slope,
            "slope": "flat" if self.flat else self.fitted_slope,
            "monotonic": self.monotonic,
            "envelope_constant": self.envelope_constant,
            "envelope_holds": self.envelope_holds,
            "gap": None if self.gap is None else self.gap.to_dict(),
            "warnings": list(self.warnings),
        }


def _decreasing_with_jitter(errors: Sequence[float]) -> bool:
    relevant = [e for e in errors if e >= SLOPE_FLOOR]
    return all(b <= (1.0 + JITTER) * a for a, b in zip(relevant, relevant[1:]))


def scaling_scan(
    curve: LindbladCurve,
    tracker: BlockTracker,
    rho0_a: np.ndarray,
    T_values: Sequence[float],
    steps: Optional[int] = None,
    threads: Optional[int] = None,
    start_mixed: bool = False,
    s_points: Optional[int] = None,
) -> ScalingReport:
    """Adiabatic error over a list of T, with slope fit and the C·T^{-1/2} envelope check."""
    T_values = [float(T) for T in T_values]
    if len(T_values) < 4:
        raise ParameterError(f"a scan needs at least 4 T values, got {len(T_values)}")
    if any(b <= a for a, b in zip(T_values, T_values[1:])):
        raise ParameterError("T values must be strictly increasing")
    warnings = []
    if T_values[-1] / T_values[0] < 100.0:
        message = f"T values span {math.log10(T_values[-1] / T_values[0]):.2f} decades (< 2)"
        warnings.append(message)
        log_app_event("WARN", "ADIABATIC", message)

    def run(T: float) -> AdiabaticRun:
        return adiabatic_error(curve, tracker, rho0_a, T, steps, start_mixed)

    runs: List[Optional[AdiabaticRun]] = [None] * len(T_values)
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            futures = {executor.submit(run, T): i for i, T in enumerate(T_values)}
            for future in as_completed(futures):
                runs[futures[future]] = future.result()
    else:
        runs = [run(T) for T in T_values]

    errors = [r.error for r in runs]
    leakages = [r.leakage for r in runs]
    constant = errors[0] * math.sqrt(T_values[0])
    envelope = all(e <= constant / math.sqrt(T) * (1 + 1e-12) + 1e-12 for T, e in zip(T_values, errors))
    gap = compute_gaps(curve, tracker, s_points) if s_points else None
    report = ScalingReport(
        T_values,
        errors,
        leakages,
        fit_loglog_slope(T_values, errors),
        _decreasing_with_jitter(errors),
        constant,
        envelope,
        gap,
        warnings,
    )
    log_app_event(
        "INFO",
        "ADIABATIC",
        f"scan over {len(T_values)} T values: slope {report.fitted_slope}, envelope {'ok' if envelope else 'violated'}",
    )
    return report
