"""
Dense complex linear algebra shared by every other service.

Conventions used throughout the package:

* Vectorization is column stacking: ``vec(A @ X @ B) == kron(B.T, A) @ vec(X)``.
* Tensor products put the first factor in the most significant position, so a
  space written A⊗B has the B index varying fastest.
* Single-qubit operators: σ_z = diag(1, -1), σ₋ = |0⟩⟨1|, σ₊ = |1⟩⟨0|.

Matrix exponentials use ``scipy.linalg.expm``, the Padé approximant with
scaling and squaring (Al-Mohy & Higham 2009).
"""
from dataclasses import dataclass, field
from enum import Enum
from functools import reduce
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from config import REL_TOL
from services.errors import DimensionError, OperatorError
from services.event_log import log_app_event

# ==================== CONSTANTS ====================

I2 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_PLUS = np.array([[0, 0], [1, 0]], dtype=complex)

PAULIS = {"I": I2, "X": SIGMA_X, "Y": SIGMA_Y, "Z": SIGMA_Z}
SINGLE_SITE = {
    "sigma-x": SIGMA_X,
    "sigma-y": SIGMA_Y,
    "sigma-z": SIGMA_Z,
    "sigma-minus": SIGMA_MINUS,
    "sigma-plus": SIGMA_PLUS,
}


class Side(str, Enum):
    A = "A"
    B = "B"


# ==================== TYPES ====================

@dataclass(frozen=True)
class SubspaceBasis:
    """Isometry (ambient_dim × k) whose orthonormal columns span a subspace."""
    columns: np.ndarray
    warnings: Tuple[str, ...] = field(default=())

    @property
    def ambient_dim(self) -> int:
        return self.columns.shape[0]

    @property
    def dim(self) -> int:
        return self.columns.shape[1]

    def projector(self) -> np.ndarray:
        return self.columns @ self.columns.conj().T

    def orthonormality_error(self) -> float:
        gram = self.columns.conj().T @ self.columns
        return float(np.max(np.abs(gram - np.eye(self.dim)), initial=0.0))


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues sorted by (real part, imaginary part), optional right eigenvectors."""
    eigenvalues: np.ndarray
    eigenvectors: Optional[np.ndarray] = None

    def nonzero(self, threshold: float) -> np.ndarray:
        return self.eigenvalues[np.abs(self.eigenvalues) > threshold]


# ==================== VALIDATION ====================

def as_square(M, name: str = "matrix") -> np.ndarray:
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {M.shape}")
    return M


def is_hermitian(M: np.ndarray, tol: float = 1e-12) -> bool:
    scale = np.max(np.abs(M), initial=0.0)
    return bool(np.max(np.abs(M - M.conj().T), initial=0.0) <= tol * max(scale, 1e-300))


def check_hermitian(M, name: str = "operator", tol: float = 1e-12) -> np.ndarray:
    M = as_square(M, name)
    if not is_hermitian(M, tol):
        raise OperatorError(f"{name} is not Hermitian within {tol:g}")
    return M


def check_density(rho, name: str = "state") -> np.ndarray:
    rho = check_hermitian(rho, name)
    if abs(np.trace(rho) - 1.0) > 1e-10:
        raise OperatorError(f"{name} has trace {np.trace(rho).real:.12g}, expected 1")
    if np.linalg.eigvalsh(hermitize(rho))[0] < -1e-10:
        raise OperatorError(f"{name} is not positive semidefinite")
    return rho


def hermitize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.conj().T)


def traceless(X: np.ndarray) -> np.ndarray:
    return X - np.trace(X) / X.shape[0] * np.eye(X.shape[0])


# ==================== CORE OPERATIONS ====================

def matexp(M) -> np.ndarray:
    """exp(M) by Padé approximation with scaling and squaring."""
    M = as_square(M, "matexp argument")
    if not np.all(np.isfinite(M)):
        raise OperatorError("matexp argument has non-finite entries")
    return scipy.linalg.expm(M)


def null_space(M, rel_tol: float = REL_TOL) -> SubspaceBasis:
    """
    Orthonormal basis of the right kernel of M.

    A right singular vector belongs to the kernel when its singular value is
    strictly below ``rel_tol`` times the largest one. Columns are ordered by
    ascending singular value, ties broken by the position of the first
    significant entry; each column is phase-fixed so that entry is real positive.
    """
    if not 0.0 < rel_tol < 1.0:
        raise DimensionError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    M = np.asarray(M)
    if M.ndim != 2:
        raise DimensionError(f"null_space expects a matrix, got shape {M.shape}")
    rows, cols = M.shape
    if cols == 0:
        return SubspaceBasis(np.zeros((0, 0), dtype=complex))
    if rows == 0:
        return SubspaceBasis(np.eye(cols, dtype=complex))

    _, svals, vh = scipy.linalg.svd(M, full_matrices=True)
    full = np.zeros(cols)
    full[: len(svals)] = svals
    largest = full.max()
    threshold = rel_tol * largest

    warnings = []
    if largest > 0:
        borderline = (full >= threshold / 10.0) & (full <= threshold * 10.0)
        if np.any(borderline):
            message = (
                f"singular value(s) {np.sort(full[borderline])} within a factor 10 of "
                f"the rank threshold {threshold:.3e}"
            )
            warnings.append(message)
            log_app_event("WARN", "NUMERICS", message)

    mask = full < threshold if largest > 0 else np.ones(cols, dtype=bool)
    vectors = vh.conj().T[:, mask]
    values = full[mask]
    if vectors.shape[1] == 0:
        return SubspaceBasis(np.zeros((cols, 0), dtype=complex), tuple(warnings))

    vectors = np.array([_fix_phase(v) for v in vectors.T]).T
    leads = [_lead_index(v) for v in vectors.T]
    order = np.lexsort((leads, values))
    return SubspaceBasis(vectors[:, order].astype(complex), tuple(warnings))


def _lead_index(v: np.ndarray, tol: float = 1e-8) -> int:
    significant = np.nonzero(np.abs(v) > tol)[0]
    return int(significant[0]) if len(significant) else len(v)


def _fix_phase(v: np.ndarray) -> np.ndarray:
    lead = _lead_index(v)
    if lead == len(v):
        return v
    return v * (abs(v[lead]) / v[lead])


def orthogonal_complement(columns: np.ndarray) -> np.ndarray:
    d, k = columns.shape
    if k == 0:
        return np.eye(d, dtype=complex)
    if k == d:
        return np.zeros((d, 0), dtype=complex)
    return null_space(columns.conj().T).columns


def partial_trace(M, m: int, n: int, side: Union[Side, str] = Side.B) -> np.ndarray:
    """Trace out one factor of an operator on A⊗B (B index fastest)."""
    M = as_square(M, "partial_trace argument")
    if m * n != M.shape[0]:
        raise DimensionError(f"factor dims {m}×{n} do not match operator dimension {M.shape[0]}")
    blocks = M.reshape(m, n, m, n)
    if Side(side) is Side.B:
        return np.einsum("ijkj->ik", blocks)
    return np.einsum("ijil->jl", blocks)


def trace_distance(rho, sigma) -> float:
    rho = np.asarray(rho, dtype=complex)
    sigma = np.asarray(sigma, dtype=complex)
    if rho.shape != sigma.shape:
        raise DimensionError(f"trace_distance of shapes {rho.shape} and {sigma.shape}")
    return float(0.5 * np.sum(scipy.linalg.svdvals(rho - sigma)))


def spectrum(M, vectors: bool = False) -> Spectrum:
    M = as_square(M, "spectrum argument")
    if vectors:
        values, vecs = np.linalg.eig(M)
    else:
        values, vecs = np.linalg.eigvals(M), None
    order = np.lexsort((values.imag, values.real))
    return Spectrum(values[order], None if vecs is None else vecs[:, order])


def spectral_norm(M) -> float:
    M = np.asarray(M)
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


# ==================== VECTORIZATION ====================

def vec(X: np.ndarray) -> np.ndarray:
    return np.asarray(X).reshape(-1, order="F")


def unvec(v: np.ndarray, dim: Optional[int] = None) -> np.ndarray:
    v = np.asarray(v)
    if dim is None:
        dim = int(round(np.sqrt(v.size)))
    if dim * dim != v.size:
        raise DimensionError(f"cannot unvec length {v.size} into a square matrix")
    return v.reshape(dim, dim, order="F")


def commutator_superop(G: np.ndarray) -> np.ndarray:
    """Matrix of X ↦ GX − XG."""
    d = G.shape[0]
    eye = np.eye(d)
    return np.kron(eye, G) - np.kron(G.T, eye)


def conjugation_superop(U: np.ndarray) -> np.ndarray:
    """Matrix of X ↦ U X U†."""
    return np.kron(U.conj(), U)


def apply_superop(S: np.ndarray, X: np.ndarray) -> np.ndarray:
    return unvec(S @ vec(X), X.shape[0])


def choi_matrix(S: np.ndarray) -> np.ndarray:
    """Σ_ij |i⟩⟨j| ⊗ E(|i⟩⟨j|) for the channel with superoperator S."""
    d = int(round(np.sqrt(S.shape[0])))
    choi = np.zeros((d * d, d * d), dtype=complex)
    for i in range(d):
        for j in range(d):
            unit = np.zeros((d, d), dtype=complex)
            unit[i, j] = 1.0
            choi += np.kron(unit, apply_superop(S, unit))
    return choi


def is_completely_positive(S: np.ndarray, tol: float = 1e-7) -> bool:
    return bool(np.linalg.eigvalsh(hermitize(choi_matrix(S)))[0] >= -tol)


# ==================== TENSOR HELPERS ====================

def kron(*ops: np.ndarray) -> np.ndarray:
    return reduce(np.kron, ops, np.eye(1, dtype=complex))


def site_operator(op: np.ndarray, site: int, n_sites: int) -> np.ndarray:
    """``op`` acting on ``site`` (1-based, site 1 most significant) of a qubit register."""
    if not 1 <= site <= n_sites:
        raise DimensionError(f"site {site} outside register of {n_sites} sites")
    factors = [I2] * n_sites
    factors[site - 1] = op
    return kron(*factors)


def pauli_string(label: str) -> np.ndarray:
    return kron(*(PAULIS[ch] for ch in label.upper()))


def ket(index: int, dim: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[index] = 1.0
    return v


def projector(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=complex).reshape(-1)
    return np.outer(v, v.conj())


# ==================== RANDOM OPERATORS ====================

def random_hermitian(d: int, rng: np.random.Generator) -> np.ndarray:
    X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return hermitize(X)


def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    q, r = np.linalg.qr(X)
    phases = np.diag(r) / np.abs(np.diag(r))
    return q * phases


def random_density(d: int, rng: np.random.Generator, rank: Optional[int] = None) -> np.ndarray:
    rank = d if rank is None else rank
    X = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = X @ X.conj().T
    return hermitize(rho / np.trace(rho))


# ==================== SUBSPACES AND BASES ====================

def principal_angles(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    if A.shape[1] == 0 or B.shape[1] == 0:
        return np.zeros(0)
    return scipy.linalg.subspace_angles(A, B)


def hermitian_basis(operators: Sequence[np.ndarray], rel_tol: float = REL_TOL) -> List[np.ndarray]:
    """
    Real-orthonormal Hermitian basis of the real span of {(X+X†)/2, (X−X†)/2i}.

    For a †-closed complex span this basis has the same size as the complex
    dimension and is also orthonormal in the Hilbert–Schmidt product.
    """
    if not operators:
        return []
    d = operators[0].shape[0]
    parts = []
    for X in operators:
        parts.append(hermitize(X))
        parts.append(hermitize(-1j * X))
    # Hermitian matrices as real vectors: Re Tr(A†B) is the Euclidean product of these
    real_rows = np.array([np.concatenate([P.real.ravel(), P.imag.ravel()]) for P in parts])
    u, svals, _ = scipy.linalg.svd(real_rows.T, full_matrices=False)
    if svals.size == 0 or svals[0] == 0:
        return []
    rank = int(np.sum(svals > rel_tol * svals[0]))
    basis = []
    for col in u[:, :rank].T:
        re, im = col[: d * d], col[d * d:]
        basis.append(hermitize((re + 1j * im).reshape(d, d)))
    return basis


def group_eigenvalues(values: np.ndarray, tol: float) -> Tuple[List[np.ndarray], float]:
    """
    Cluster sorted real eigenvalues: neighbours closer than ``tol`` share a group.

    Returns the index groups (into ``values``) and the smallest gap between groups.
    """
    order = np.argsort(values)
    groups, current = [], [order[0]]
    smallest_gap = np.inf
    for prev, idx in zip(order, order[1:]):
        gap = values[idx] - values[prev]
        if gap <= tol:
            current.append(idx)
        else:
            smallest_gap = min(smallest_gap, gap)
            groups.append(np.array(current))
            current = [idx]
    groups.append(np.array(current))
    return groups, float(smallest_gap)


def polar_unitary(M: np.ndarray) -> np.ndarray:
    return scipy.linalg.polar(M)[0]


def matrix_abs(X: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(hermitize(X))
    return (v * np.abs(w)) @ v.conj().T


def support(X: np.ndarray, rel_tol: float = REL_TOL) -> Tuple[np.ndarray, np.ndarray]:
    """Orthonormal bases of the support and kernel of a positive semidefinite X."""
    w, v = np.linalg.eigh(hermitize(X))
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order]
    scale = max(w[0], 0.0) if len(w) else 0.0
    keep = w > rel_tol * scale if scale > 0 else np.zeros(len(w), dtype=bool)
    return v[:, keep], v[:, ~keep]


def time_ordered_product(
    generator: Callable[[float], np.ndarray], s_start: float, s_end: float, steps: int
) -> np.ndarray:
    """Π exp(−i δs G(s_mid)) with later factors on the left."""
    delta = (s_end - s_start) / steps
    dim = generator(s_start).shape[0]
    U = np.eye(dim, dtype=complex)
    for k in range(steps):
        s_mid = s_start + (k + 0.5) * delta
        U = matexp(-1j * delta * generator(s_mid)) @ U
    return U
