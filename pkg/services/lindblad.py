"""
Lindblad generators, one-parameter curves of generators, and propagation.

A curve is always integrated in its co-moving (rotated) frame: for a frame
U(s) and co-moving generator L̃(s) the state ρ̃ = UρU† obeys

    dρ̃/dt = −(i/T)[V(t/T), ρ̃] + L̃(t/T) ρ̃,      V(s) = i U′(s) U(s)†,

and the lab-frame generator is L(s) = U(s)† L̃(s) U(s).
"""
import csv
import io
import math
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import (
    DEFAULT_MIN_STEPS,
    MAX_STEP_RATIO,
    MIN_CURVE_STEPS,
    STEP_DENSITY,
)
from services.errors import DimensionError, ParameterError, StepRefusal
from services.event_log import log_app_event
from services.numerics import (
    SIGMA_MINUS,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    as_square,
    check_density,
    check_hermitian,
    commutator_superop,
    hermitize,
    matexp,
    spectral_norm,
    unvec,
    vec,
)

HERMITICITY_DRIFT = 1e-9


class Lindbladian:
    """
    Generator L(ρ) = −i[H, ρ] + Σ_i (L_i ρ L_i† − ½{L_i†L_i, ρ}).

    Immutable after construction; the superoperator matrix is built once on
    first use and shared (read-only) afterwards.
    """

    def __init__(self, hamiltonian, dissipators: Sequence = (), name: Optional[str] = None):
        H = check_hermitian(hamiltonian, "Hamiltonian").copy()
        ops = []
        for index, op in enumerate(dissipators):
            op = as_square(op, f"dissipator {index}").copy()
            if op.shape != H.shape:
                raise DimensionError(
                    f"dissipator {index} has shape {op.shape}, Hamiltonian has {H.shape}"
                )
            ops.append(op)
        H.setflags(write=False)
        for op in ops:
            op.setflags(write=False)
        self.H = H
        self.dissipators: Tuple[np.ndarray, ...] = tuple(ops)
        self.name = name
        self._superoperator: Optional[np.ndarray] = None
        self._lock = threading.Lock()

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    @property
    def superoperator(self) -> np.ndarray:
        return build_superoperator(self)

    def conjugated(self, U: np.ndarray) -> "Lindbladian":
        """Generator of the dynamics seen through X ↦ U X U†."""
        Ud = U.conj().T
        return Lindbladian(
            hermitize(U @ self.H @ Ud), [U @ L @ Ud for L in self.dissipators], self.name
        )

    def compressed(self, W: np.ndarray) -> "Lindbladian":
        """Restriction to the range of the isometry W (valid on invariant subspaces)."""
        Wd = W.conj().T
        return Lindbladian(hermitize(Wd @ self.H @ W), [Wd @ L @ W for L in self.dissipators])

    def extended_by_identity(self, m: int) -> "Lindbladian":
        """I_m ⊗ L: the same dynamics acting on the second factor of C^m ⊗ C^d."""
        eye = np.eye(m)
        return Lindbladian(
            np.kron(eye, self.H), [np.kron(eye, L) for L in self.dissipators], self.name
        )

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return unvec(self.superoperator @ vec(rho), self.dim)

    def __repr__(self) -> str:
        label = f" '{self.name}'" if self.name else ""
        return f"Lindbladian{label}(dim={self.dim}, dissipators={len(self.dissipators)})"


def build_superoperator(lindbladian: Lindbladian) -> np.ndarray:
    """
    d²×d² matrix of the generator under column stacking:

    S = −i(I⊗H − Hᵀ⊗I) + Σ_i [conj(L_i)⊗L_i − ½ I⊗L_i†L_i − ½ (L_i†L_i)ᵀ⊗I]
    """
    cached = lindbladian._superoperator
    if cached is not None:
        return cached
    with lindbladian._lock:
        if lindbladian._superoperator is None:
            H = lindbladian.H
            eye = np.eye(lindbladian.dim)
            S = -1j * (np.kron(eye, H) - np.kron(H.T, eye))
            for L in lindbladian.dissipators:
                LdL = L.conj().T @ L
                S = S + np.kron(L.conj(), L) - 0.5 * np.kron(eye, LdL) - 0.5 * np.kron(LdL.T, eye)
            S = np.ascontiguousarray(S, dtype=complex)
            S.setflags(write=False)
            lindbladian._superoperator = S
    return lindbladian._superoperator


# ==================== STANDARD GENERATORS ====================

def depolarizer(gamma: float) -> Lindbladian:
    """dρ/dt = γ(I/2 − ρ) realised by the three Pauli dissipators √(γ/4)σ."""
    rate = math.sqrt(gamma / 4.0)
    return Lindbladian(
        np.zeros((2, 2)), [rate * SIGMA_X, rate * SIGMA_Y, rate * SIGMA_Z], name="depolarizer"
    )


def amplitude_damping(gamma: float) -> Lindbladian:
    return Lindbladian(np.zeros((2, 2)), [math.sqrt(gamma) * SIGMA_MINUS], name="amplitude-damping")


def propagate_const(lindbladian: Lindbladian, rho0: np.ndarray, t: float) -> np.ndarray:
    """ρ(t) = exp(tS) ρ0, re-hermitized."""
    if t < 0:
        raise ParameterError(f"propagation time must be non-negative, got {t}")
    rho0 = check_density(rho0, "initial state")
    if rho0.shape[0] != lindbladian.dim:
        raise DimensionError(f"state of dim {rho0.shape[0]} for generator of dim {lindbladian.dim}")
    if t == 0:
        return rho0.copy()
    rho = unvec(matexp(t * lindbladian.superoperator) @ vec(rho0), lindbladian.dim)
    return _rehermitize(rho)


def _rehermitize(rho: np.ndarray) -> np.ndarray:
    drift = float(np.max(np.abs(rho - rho.conj().T), initial=0.0))
    if drift > HERMITICITY_DRIFT:
        log_app_event("WARN", "LINDBLAD", f"hermiticity drift {drift:.3e} before re-hermitizing")
    return hermitize(rho)


# ==================== FRAME PATHS ====================

def _check_s(s: float):
    if not 0.0 <= s <= 1.0:
        raise ParameterError(f"curve parameter s={s} outside [0, 1]")


class FramePath(ABC):
    """A differentiable family of unitaries U(s) on [0, 1] with U(0) = I."""

    dim: int

    @abstractmethod
    def unitary(self, s: float) -> np.ndarray:
        ...

    @abstractmethod
    def generator(self, s: float) -> np.ndarray:
        """V(s) = i U′(s) U(s)†."""

    @property
    def is_constant(self) -> bool:
        return False


class ConstantGenerator(FramePath):
    """U(s) = exp(−isG), so V(s) = G."""

    def __init__(self, G):
        self.G = check_hermitian(G, "frame generator")
        self.dim = self.G.shape[0]
        self._energies, self._vectors = np.linalg.eigh(self.G)

    def unitary(self, s: float) -> np.ndarray:
        _check_s(s)
        if s == 0:
            return np.eye(self.dim, dtype=complex)
        phases = np.exp(-1j * s * self._energies)
        return (self._vectors * phases) @ self._vectors.conj().T

    def generator(self, s: float) -> np.ndarray:
        _check_s(s)
        return self.G

    @property
    def is_constant(self) -> bool:
        return True


class PiecewiseGenerators(FramePath):
    """
    Segments (Δs_k, G_k) applied left to right: inside segment k,
    U(s) = exp(−i(s − s_k)G_k) U(s_k).
    """

    def __init__(self, segments: Sequence[Tuple[float, np.ndarray]]):
        if not segments:
            raise ParameterError("piecewise frame needs at least one segment")
        lengths = [float(length) for length, _ in segments]
        if any(length <= 0 for length in lengths) or abs(sum(lengths) - 1.0) > 1e-12:
            raise ParameterError(f"segment lengths {lengths} must be positive and sum to 1")
        self.segments = [ConstantGenerator(G) for _, G in segments]
        self.dim = self.segments[0].dim
        if any(seg.dim != self.dim for seg in self.segments):
            raise DimensionError("segment generators have different dimensions")
        self.starts = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])
        self.lengths = np.array(lengths)
        self._start_unitaries = [np.eye(self.dim, dtype=complex)]
        for seg, length in zip(self.segments[:-1], lengths[:-1]):
            self._start_unitaries.append(seg.unitary(length) @ self._start_unitaries[-1])

    def _segment(self, s: float) -> int:
        index = int(np.searchsorted(self.starts, s, side="right")) - 1
        return min(max(index, 0), len(self.segments) - 1)

    def unitary(self, s: float) -> np.ndarray:
        _check_s(s)
        if s == 0:
            return np.eye(self.dim, dtype=complex)
        k = self._segment(s)
        local = min(s - self.starts[k], self.lengths[k])
        return self.segments[k].unitary(local) @ self._start_unitaries[k]

    def generator(self, s: float) -> np.ndarray:
        _check_s(s)
        return self.segments[self._segment(s)].G


class ScheduledGenerator(FramePath):
    """
    U(s) = exp(−iφ(s)G) with a schedule φ, so V(s) = φ′(s)G.

    Profiles: ``linear`` (φ = s) and ``ramp`` (φ = 2s − s², V vanishes at s = 1).
    """

    PROFILES = {
        "linear": (lambda s: s, lambda s: 1.0),
        "ramp": (lambda s: 2.0 * s - s * s, lambda s: 2.0 - 2.0 * s),
    }

    def __init__(self, G, profile: str = "ramp"):
        if profile not in self.PROFILES:
            raise ParameterError(f"unknown schedule '{profile}' (use {sorted(self.PROFILES)})")
        self.base = ConstantGenerator(G)
        self.G = self.base.G
        self.dim = self.base.dim
        self.profile = profile
        self._phi, self._dphi = self.PROFILES[profile]

    def unitary(self, s: float) -> np.ndarray:
        _check_s(s)
        return self.base.unitary(self._phi(s))

    def generator(self, s: float) -> np.ndarray:
        _check_s(s)
        return self._dphi(s) * self.G


def frame_generator(path: FramePath, s: float) -> np.ndarray:
    _check_s(s)
    return path.generator(s)


def identity_frame(dim: int) -> ConstantGenerator:
    return ConstantGenerator(np.zeros((dim, dim)))


# ==================== CURVES ====================

class LindbladCurve(ABC):
    """Family L(s), s ∈ [0, 1], together with its co-moving description."""

    dim: int

    @abstractmethod
    def lab(self, s: float) -> Lindbladian:
        ...

    @abstractmethod
    def rotated(self, s: float) -> Lindbladian:
        """Co-moving generator L̃(s) = U(s) L(s) U(s)†."""

    @abstractmethod
    def frame_generator(self, s: float) -> np.ndarray:
        ...

    @abstractmethod
    def frame_unitary(self, s: float) -> np.ndarray:
        ...

    @property
    def is_stationary(self) -> bool:
        """True when both L̃ and V are independent of s."""
        return False

    def rotated_superoperator(self, s: float) -> np.ndarray:
        return self.rotated(s).superoperator


class RotatedFrameCurve(LindbladCurve):
    """
    Curve whose co-moving generator is the fixed ``base`` and whose lab
    generator is carried around by ``frame``: L(s) = U(s)† base U(s).
    """

    def __init__(self, base: Lindbladian, frame: Optional[FramePath] = None):
        self.base = base
        self.dim = base.dim
        self.frame = frame if frame is not None else identity_frame(base.dim)
        if self.frame.dim != self.dim:
            raise DimensionError(f"frame of dim {self.frame.dim} for generator of dim {self.dim}")

    def lab(self, s: float) -> Lindbladian:
        return self.base.conjugated(self.frame.unitary(s).conj().T)

    def rotated(self, s: float) -> Lindbladian:
        _check_s(s)
        return self.base

    def frame_generator(self, s: float) -> np.ndarray:
        return frame_generator(self.frame, s)

    def frame_unitary(self, s: float) -> np.ndarray:
        return self.frame.unitary(s)

    @property
    def is_stationary(self) -> bool:
        return self.frame.is_constant


def constant_curve(lindbladian: Lindbladian) -> RotatedFrameCurve:
    return RotatedFrameCurve(lindbladian)


class SampledCurve(LindbladCurve):
    """
    Curve given by samples (s_k, L_k); H and every L_i are interpolated
    piecewise-linearly between samples. There is no moving frame (V = 0).
    """

    def __init__(self, samples: Sequence[Tuple[float, Lindbladian]]):
        samples = sorted(samples, key=lambda item: item[0])
        if len(samples) < 2:
            raise ParameterError("sampled curve needs at least two samples")
        if samples[0][0] != 0.0 or samples[-1][0] != 1.0:
            raise ParameterError("sampled curve must start at s=0 and end at s=1")
        grid = [s for s, _ in samples]
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ParameterError("sample positions must be distinct")
        counts = {len(L.dissipators) for _, L in samples}
        dims = {L.dim for _, L in samples}
        if len(counts) != 1 or len(dims) != 1:
            raise DimensionError("samples must share dimension and dissipator count")
        self.grid = np.array(grid)
        self.samples = [L for _, L in samples]
        self.dim = dims.pop()
        self._cache: Dict[float, Lindbladian] = {}
        self._cache_lock = threading.Lock()

    def lab(self, s: float) -> Lindbladian:
        _check_s(s)
        with self._cache_lock:
            hit = self._cache.get(s)
        if hit is not None:
            return hit
        k = min(int(np.searchsorted(self.grid, s, side="right")) - 1, len(self.grid) - 2)
        left, right = self.samples[k], self.samples[k + 1]
        w = (s - self.grid[k]) / (self.grid[k + 1] - self.grid[k])
        H = (1 - w) * left.H + w * right.H
        ops = [(1 - w) * a + w * b for a, b in zip(left.dissipators, right.dissipators)]
        result = Lindbladian(hermitize(H), ops)
        with self._cache_lock:
            if len(self._cache) < 4096:
                self._cache[s] = result
        return result

    def rotated(self, s: float) -> Lindbladian:
        return self.lab(s)

    def frame_generator(self, s: float) -> np.ndarray:
        _check_s(s)
        return np.zeros((self.dim, self.dim), dtype=complex)

    def frame_unitary(self, s: float) -> np.ndarray:
        _check_s(s)
        return np.eye(self.dim, dtype=complex)

    @property
    def is_stationary(self) -> bool:
        first = self.samples[0]
        return all(
            np.allclose(L.H, first.H, atol=0.0)
            and all(np.allclose(a, b, atol=0.0) for a, b in zip(L.dissipators, first.dissipators))
            for L in self.samples[1:]
        )


# ==================== CURVE PROPAGATION ====================

@dataclass
class Trajectory:
    T: float
    steps: int
    times: List[float] = field(default_factory=list)
    states: List[np.ndarray] = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def csv_header(self) -> List[str]:
        d = self.final.shape[0]
        header = ["t"]
        for i in range(d):
            for j in range(d):
                header += [f"re_{i}{j}", f"im_{i}{j}"]
        return header

    def csv_rows(self) -> List[List[float]]:
        rows = []
        for t, rho in zip(self.times, self.states):
            row = [t]
            for entry in rho.reshape(-1):
                row += [float(entry.real), float(entry.imag)]
            rows.append(row)
        return rows

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(self.csv_header())
        for row in self.csv_rows():
            writer.writerow(["%.17g" % value for value in row])
        return buffer.getvalue()


def curve_norm(curve: LindbladCurve) -> float:
    """‖S̃‖ estimated as the largest spectral norm over s ∈ {0, ½, 1}."""
    if curve.is_stationary:
        return spectral_norm(curve.rotated_superoperator(0.0))
    return max(spectral_norm(curve.rotated_superoperator(s)) for s in (0.0, 0.5, 1.0))


def default_steps(curve: LindbladCurve, T: float) -> int:
    return max(DEFAULT_MIN_STEPS, int(math.ceil(STEP_DENSITY * T * curve_norm(curve))))


def step_generator(curve: LindbladCurve, s: float, T: float) -> np.ndarray:
    """Superoperator of ρ ↦ −(i/T)[V(s), ρ] + L̃(s)ρ."""
    return curve.rotated_superoperator(s) - (1j / T) * commutator_superop(curve.frame_generator(s))


def propagate_curve(
    curve: LindbladCurve,
    rho0: np.ndarray,
    T: float,
    steps: Optional[int] = None,
    record_every: Optional[int] = None,
) -> Trajectory:
    """
    Integrate the co-moving master equation from t = 0 to t = T.

    Each substep applies exp(δt·K(s_mid)) with K the generator at the
    substep midpoint. States are recorded every ``record_every`` substeps
    (default: only the endpoints); t = 0 and t = T are always recorded.
    """
    if not T > 0:
        raise ParameterError(f"total time T must be positive, got {T}")
    rho0 = check_density(rho0, "initial state")
    if rho0.shape[0] != curve.dim:
        raise DimensionError(f"state of dim {rho0.shape[0]} for curve of dim {curve.dim}")

    norm = curve_norm(curve)
    if steps is None:
        steps = max(DEFAULT_MIN_STEPS, int(math.ceil(STEP_DENSITY * T * norm)))
    required = max(MIN_CURVE_STEPS, int(math.ceil(norm * T / MAX_STEP_RATIO)))
    if steps < required:
        raise StepRefusal(
            f"{steps} steps too few for T={T:g} with ‖S̃‖={norm:.4g}; need at least {required}",
            required_steps=required,
        )
    record_every = steps if record_every is None else max(1, min(int(record_every), steps))

    dt = T / steps
    d = curve.dim
    state = vec(rho0).astype(complex)
    trajectory = Trajectory(T=T, steps=steps)
    trajectory.times.append(0.0)
    trajectory.states.append(rho0.copy())

    if curve.is_stationary:
        propagator = matexp(dt * step_generator(curve, 0.5, T))
        stride = np.linalg.matrix_power(propagator, record_every)
        done = 0
        while done < steps:
            chunk = min(record_every, steps - done)
            jump = stride if chunk == record_every else np.linalg.matrix_power(propagator, chunk)
            state = jump @ state
            done += chunk
            trajectory.times.append(done * dt)
            trajectory.states.append(_rehermitize(unvec(state, d)))
    else:
        for k in range(steps):
            s_mid = (k + 0.5) / steps
            state = matexp(dt * step_generator(curve, s_mid, T)) @ state
            if (k + 1) % record_every == 0 or k + 1 == steps:
                trajectory.times.append((k + 1) * dt)
                trajectory.states.append(_rehermitize(unvec(state, d)))

    log_app_event(
        "DEBUG", "LINDBLAD", f"propagated curve to T={T:g} in {steps} steps (‖S̃‖={norm:.4g})"
    )
    return trajectory
