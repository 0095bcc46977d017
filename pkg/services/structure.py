"""
Asymptotic structure of a Lindbladian.

The Hilbert space splits as ⊕_k (A_k ⊗ B_k) ⊕ K: every asymptotic state is
⊕_k ρ_k^A ⊗ ϱ_k^B, the cofactor B_k relaxes to its unique fixed state ϱ_k^B,
and the subspace K decays. ``decompose`` finds this splitting from the
commutant of {H, L_i, L_i†} on the recurrent subspace; ``verify_blockform``,
``compute_gaps`` and ``pseudo_inverse_bound`` provide the block-form checks
and the energy scale Δ that the adiabatic error bound depends on.
"""
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from config import DEFAULT_S_POINTS, DEFAULT_SEED, MIN_S_POINTS, REL_TOL
from services.errors import (
    ConvergenceError,
    DimensionChangeError,
    DimensionError,
    ParameterError,
    StructuralError,
)
from services.event_log import log_app_event
from services.lindblad import Lindbladian, LindbladCurve, propagate_const
from services.numerics import (
    Side,
    SubspaceBasis,
    commutator_superop,
    group_eigenvalues,
    hermitian_basis,
    hermitize,
    matrix_abs,
    null_space,
    orthogonal_complement,
    partial_trace,
    polar_unitary,
    principal_angles,
    spectral_norm,
    spectrum,
    support,
    traceless,
    unvec,
    vec,
)

BLOCKFORM_TOL = 1e-8
CONVERGENCE_HORIZON = 50.0


# ==================== TYPES ====================

@dataclass(frozen=True)
class Block:
    """
    One summand A⊗B of the decomposition.

    ``isometry`` maps C^m ⊗ C^n (B index fastest) into the ambient space.
    """
    isometry: np.ndarray
    m: int
    n: int
    fixed_state: np.ndarray
    internal_hamiltonian: np.ndarray

    def __post_init__(self):
        if self.isometry.ndim != 2 or self.isometry.shape[1] != self.m * self.n:
            raise DimensionError(
                f"isometry of shape {self.isometry.shape} does not carry a {self.m}×{self.n} block"
            )
        if self.fixed_state.shape != (self.n, self.n):
            raise DimensionError(f"fixed state must be {self.n}×{self.n}")
        if self.internal_hamiltonian.shape != (self.m, self.m):
            raise DimensionError(f"internal Hamiltonian must be {self.m}×{self.m}")

    @property
    def ambient_dim(self) -> int:
        return self.isometry.shape[0]

    @property
    def dim(self) -> int:
        return self.m * self.n

    def projector(self) -> np.ndarray:
        return self.isometry @ self.isometry.conj().T

    def compress(self, X: np.ndarray) -> np.ndarray:
        return self.isometry.conj().T @ X @ self.isometry

    def embed_operator(self, X: np.ndarray) -> np.ndarray:
        return self.isometry @ X @ self.isometry.conj().T

    def embed(self, rho_a: np.ndarray, rho_b: Optional[np.ndarray] = None) -> np.ndarray:
        """W (ρ^A ⊗ ϱ^B) W†, or with ``rho_b`` in place of ϱ^B."""
        rho_b = self.fixed_state if rho_b is None else rho_b
        return self.embed_operator(np.kron(rho_a, rho_b))

    def reduce(self, rho: np.ndarray) -> np.ndarray:
        """Tr_B of the compression W†ρW (not renormalized)."""
        return partial_trace(self.compress(rho), self.m, self.n, Side.B)

    def rotated(self, U: np.ndarray) -> "Block":
        return Block(U @ self.isometry, self.m, self.n, self.fixed_state, self.internal_hamiltonian)

    def has_full_support(self, rel_tol: float = REL_TOL) -> bool:
        w = np.linalg.eigvalsh(hermitize(self.fixed_state))
        return bool(w[0] >= rel_tol * w[-1])

    def to_dict(self) -> Dict:
        return {
            "m": self.m,
            "n": self.n,
            "isometry": self.isometry.reshape(-1),
            "fixed_state": self.fixed_state,
            "fixed_state_eigenvalues": np.linalg.eigvalsh(hermitize(self.fixed_state)),
            "internal_hamiltonian": self.internal_hamiltonian,
        }


def product_block(
    m: int,
    n: int,
    fixed_state: Optional[np.ndarray] = None,
    isometry: Optional[np.ndarray] = None,
) -> Block:
    """Block with a given isometry (default: the whole space C^m ⊗ C^n)."""
    fixed_state = np.eye(n, dtype=complex) / n if fixed_state is None else np.asarray(fixed_state, dtype=complex)
    isometry = np.eye(m * n, dtype=complex) if isometry is None else np.asarray(isometry, dtype=complex)
    return Block(isometry, m, n, fixed_state, np.zeros((m, m), dtype=complex))


@dataclass
class Decomposition:
    blocks: List[Block]
    decaying: SubspaceBasis
    residual_report: float
    seed: int
    rel_tol: float
    warnings: List[str] = field(default_factory=list)

    @property
    def signature(self) -> List[Tuple[int, int]]:
        return [(block.m, block.n) for block in self.blocks]

    def stationary_operators(self) -> List[np.ndarray]:
        """Embeddings of X ⊗ ϱ^B over a basis of X commuting with H^A, per block."""
        operators = []
        for block in self.blocks:
            commuting = null_space(commutator_superop(block.internal_hamiltonian), self.rel_tol)
            for column in commuting.columns.T:
                X = unvec(column, block.m)
                operators.append(block.embed(X))
        return operators

    def to_dict(self) -> Dict:
        return {
            "blocks": [block.to_dict() for block in self.blocks],
            "signature": [list(pair) for pair in self.signature],
            "decaying_dim": self.decaying.dim,
            "residual": self.residual_report,
            "seed": self.seed,
            "rel_tol": self.rel_tol,
            "warnings": list(self.warnings),
        }


@dataclass
class BlockFormReport:
    passes: bool
    max_violation: float
    threshold: float
    residuals: Dict[str, float]
    local_hamiltonian: np.ndarray
    local_dissipators: List[np.ndarray]

    def to_dict(self) -> Dict:
        return {
            "passes": self.passes,
            "max_violation": self.max_violation,
            "threshold": self.threshold,
            "residuals": dict(self.residuals),
        }


@dataclass
class GapReport:
    s_grid: List[float]
    delta1: Optional[float]
    delta2: float
    delta: float
    per_s: List[Dict] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "s_points": len(self.s_grid),
            "delta1": self.delta1,
            "delta2": self.delta2,
            "delta": self.delta,
        }

    def csv_rows(self) -> List[List]:
        return [[row["s"], row["delta1"], row["delta2"]] for row in self.per_s]


@dataclass
class InverseBound:
    spectral_radius_of_inverse: float
    one_over_delta: float
    operator_norm_of_inverse: float
    delta: float

    def to_dict(self) -> Dict:
        return {
            "spectral_radius_of_inverse": self.spectral_radius_of_inverse,
            "one_over_delta": self.one_over_delta,
            "operator_norm_of_inverse": self.operator_norm_of_inverse,
            "delta": self.delta,
        }


# ==================== FIXED POINTS ====================

def fixed_point_basis(lindbladian: Lindbladian, rel_tol: float = REL_TOL) -> SubspaceBasis:
    """Kernel of the superoperator, as vec'd Hermitian operators when it is †-closed."""
    raw = null_space(lindbladian.superoperator, rel_tol)
    d = lindbladian.dim
    if raw.dim == 0:
        return raw
    herm = hermitian_basis([unvec(c, d) for c in raw.columns.T], rel_tol)
    if len(herm) != raw.dim:
        message = f"fixed-point space not closed under adjoint ({len(herm)} vs {raw.dim})"
        log_app_event("WARN", "STRUCTURE", message)
        return SubspaceBasis(raw.columns, raw.warnings + (message,))
    return SubspaceBasis(np.array([vec(X) for X in herm]).T, raw.warnings)


@dataclass
class _Recurrence:
    support: SubspaceBasis
    decaying: SubspaceBasis
    asymptotic_state: np.ndarray
    warnings: List[str]


def _analyze_recurrence(lindbladian: Lindbladian, rel_tol: float) -> _Recurrence:
    d = lindbladian.dim
    S = lindbladian.superoperator
    norm = spectral_norm(S)
    warnings: List[str] = []

    rho = np.eye(d, dtype=complex) / d
    eigs = np.linalg.eigvals(S)
    rates = -eigs.real[eigs.real < -rel_tol * max(norm, 1e-300)]
    if rates.size:
        t_star = CONVERGENCE_HORIZON / rates.min()
        rho = propagate_const(lindbladian, rho, t_star)
        later = propagate_const(lindbladian, rho, t_star)
        rank_now = support(rho, rel_tol)[0].shape[1]
        rank_later = support(later, rel_tol)[0].shape[1]
        if rank_now != rank_later:
            raise ConvergenceError(
                f"asymptotic support still changing between t*={t_star:.4g} and 2t* "
                f"(rank {rank_now} -> {rank_later})"
            )

    fixed = fixed_point_basis(lindbladian, rel_tol)
    warnings += list(fixed.warnings)
    total = np.zeros((d, d), dtype=complex)
    for column in fixed.columns.T:
        total += matrix_abs(unvec(column, d))
    recurrent, decaying = support(total if fixed.dim else rho, rel_tol)

    rank_rho = support(rho, rel_tol)[0].shape[1]
    if rank_rho != recurrent.shape[1]:
        message = (
            f"asymptotic state has rank {rank_rho}, fixed points span {recurrent.shape[1]} dimensions"
        )
        warnings.append(message)
        log_app_event("WARN", "STRUCTURE", message)
    return _Recurrence(SubspaceBasis(recurrent), SubspaceBasis(decaying), rho, warnings)


def recurrent_support(lindbladian: Lindbladian, rel_tol: float = REL_TOL) -> SubspaceBasis:
    """Support R of the asymptotic state reached from I/d; K is its complement."""
    return _analyze_recurrence(lindbladian, rel_tol).support


# ==================== DECOMPOSITION ====================

def _commutant(restricted: Lindbladian, rel_tol: float) -> Tuple[List[np.ndarray], Tuple[str, ...]]:
    r = restricted.dim
    generators = [restricted.H]
    for L in restricted.dissipators:
        generators += [L, L.conj().T]
    stacked = np.vstack([commutator_superop(G) for G in generators])
    kernel = null_space(stacked, rel_tol)
    elements = [unvec(c, r) for c in kernel.columns.T]

    # adjoint closure: X† must lie in the span
    P = kernel.columns @ kernel.columns.conj().T
    for X in elements:
        adj = vec(X.conj().T)
        if np.linalg.norm(adj - P @ adj) > 1e-6:
            raise StructuralError("commutant is not closed under the adjoint at tolerance")
    basis = hermitian_basis(elements, rel_tol)
    if len(basis) != len(elements):
        raise StructuralError(
            f"commutant has complex dimension {len(elements)} but {len(basis)} Hermitian generators"
        )
    return basis, kernel.warnings


def _center(elements: List[np.ndarray], rel_tol: float) -> List[np.ndarray]:
    """Hermitian basis of the center: combinations commuting with every element."""
    k = len(elements)
    if k <= 1:
        return list(elements)
    columns = []
    for Xj in elements:
        column = np.concatenate([vec(Xj @ Xi - Xi @ Xj) for Xi in elements])
        columns.append(np.concatenate([column.real, column.imag]))
    coefficient_map = np.array(columns).T
    kernel = null_space(coefficient_map, rel_tol)
    center = []
    for c in kernel.columns.T:
        c = c.real
        center.append(hermitize(sum(cj * Xj for cj, Xj in zip(c, elements))))
    return center


def _random_element(elements: Sequence[np.ndarray], rng: np.random.Generator) -> np.ndarray:
    weights = rng.standard_normal(len(elements))
    Y = hermitize(sum(w * X for w, X in zip(weights, elements)))
    norm = spectral_norm(Y)
    return Y / norm if norm > 0 else Y


def _cluster(Y: np.ndarray, rel_tol: float, warnings: List[str]) -> Tuple[np.ndarray, List[np.ndarray]]:
    values, vectors = np.linalg.eigh(Y)
    groups, gap = group_eigenvalues(values, rel_tol)
    if len(groups) > 1 and gap < 10 * rel_tol:
        message = f"eigenvalue grouping ambiguous: smallest gap {gap:.3e}"
        warnings.append(message)
        log_app_event("WARN", "STRUCTURE", message)
    groups = sorted(groups, key=lambda g: values[g].mean())
    return vectors, [np.sort(g) for g in groups]


def _algebra_dimension(elements: Sequence[np.ndarray], rel_tol: float) -> int:
    stacked = np.array([vec(X) for X in elements])
    svals = scipy.linalg.svdvals(stacked)
    if svals.size == 0 or svals[0] == 0:
        return 0
    return int(np.sum(svals > rel_tol * svals[0]))


def _split_summand(
    local: List[np.ndarray], dim: int, rng: np.random.Generator, rel_tol: float, warnings: List[str]
) -> Tuple[int, int, List[np.ndarray]]:
    """Factor a summand on which the commutant acts as M_m ⊗ I_n; returns aligned A-clusters."""
    algebra_dim = _algebra_dimension(local, rel_tol)
    m = int(round(np.sqrt(algebra_dim)))
    if m * m != algebra_dim or m == 0 or dim % m:
        raise StructuralError(f"summand of dim {dim} carries an algebra of dimension {algebra_dim}")
    n = dim // m
    if m == 1:
        return 1, n, [np.eye(dim, dtype=complex)]

    for _ in range(5):
        vectors, groups = _cluster(_random_element(local, rng), rel_tol, warnings)
        if len(groups) == m and all(len(g) == n for g in groups):
            break
    else:
        raise StructuralError(f"could not split a summand of dim {dim} into {m} clusters of size {n}")
    clusters = [vectors[:, g] for g in groups]

    # identify every cluster's B basis with the first one
    for _ in range(5):
        probe = _random_element(local, rng)
        overlaps = [F.conj().T @ probe @ clusters[0] for F in clusters[1:]]
        svals = [scipy.linalg.svdvals(M) for M in overlaps]
        if all(sv[-1] > 1e-6 for sv in svals):
            break
    else:
        raise StructuralError("could not align cofactor bases across clusters")
    for sv in svals:
        if sv[0] - sv[-1] > 1e-6 * max(sv[0], 1.0):
            raise StructuralError("cluster overlaps are not proportional to unitaries")
    aligned = [clusters[0]] + [F @ polar_unitary(M) for F, M in zip(clusters[1:], overlaps)]
    return m, n, aligned


def _fix_column_phases(Q: np.ndarray) -> np.ndarray:
    out = Q.copy()
    for j in range(Q.shape[1]):
        lead = int(np.argmax(np.abs(Q[:, j]) > 1e-8))
        out[:, j] *= abs(Q[lead, j]) / Q[lead, j]
    return out


def _fixed_point_residual(lindbladian: Lindbladian, block: Block) -> float:
    worst = 0.0
    for a in range(block.m):
        for b in range(block.m):
            X = np.zeros((block.m, block.m), dtype=complex)
            X[a, b] = 1.0
            lhs = lindbladian.apply(block.embed(X))
            HA = block.internal_hamiltonian
            rhs = block.embed(-1j * (HA @ X - X @ HA))
            worst = max(worst, float(np.linalg.norm(lhs - rhs)))
    return worst


def decompose(
    lindbladian: Lindbladian, rel_tol: float = REL_TOL, seed: int = DEFAULT_SEED
) -> Decomposition:
    """
    Noiseless-subsystem decomposition from the commutant of {H, L_i, L_i†}.

    Blocks come back ordered by descending m, then descending n, then
    ascending smallest eigenvalue of ϱ^B. Each block's B basis diagonalizes
    ϱ^B with ascending populations.
    """
    rng = np.random.default_rng(seed)
    recurrence = _analyze_recurrence(lindbladian, rel_tol)
    warnings = list(recurrence.warnings)
    R = recurrence.support.columns
    if R.shape[1] == 0:
        raise StructuralError("recurrent subspace is empty")

    restricted = lindbladian.compressed(R)
    commutant, kernel_warnings = _commutant(restricted, rel_tol)
    warnings += list(kernel_warnings)
    center = _center(commutant, rel_tol)

    if len(center) <= 1:
        summands = [np.eye(R.shape[1], dtype=complex)]
    else:
        vectors, groups = _cluster(_random_element(center, rng), rel_tol, warnings)
        if len(groups) != len(center):
            raise StructuralError(
                f"center of dimension {len(center)} produced {len(groups)} central projections"
            )
        summands = [vectors[:, g] for g in groups]

    rho_inf = recurrence.asymptotic_state
    H = lindbladian.H
    blocks = []
    for E in summands:
        local = [E.conj().T @ X @ E for X in commutant]
        m, n, clusters = _split_summand(local, E.shape[1], rng, rel_tol, warnings)
        W = R @ E @ np.hstack(clusters)

        compressed = W.conj().T @ rho_inf @ W
        rho_b = hermitize(partial_trace(compressed, m, n, Side.A))
        rho_b = rho_b / np.trace(rho_b).real
        populations, Q = np.linalg.eigh(rho_b)
        Q = _fix_column_phases(Q)
        W = W @ np.kron(np.eye(m), Q)
        rho_b = hermitize(Q.conj().T @ rho_b @ Q)

        H11 = W.conj().T @ H @ W
        HA = traceless(partial_trace(H11, m, n, Side.B) / n)
        # round-off must not masquerade as an internal Hamiltonian
        if np.linalg.norm(HA) <= rel_tol * max(spectral_norm(H), 1.0):
            HA = np.zeros((m, m), dtype=complex)
        HA = HA + np.trace(H11) / (m * n) * np.eye(m)
        block = Block(W, m, n, rho_b, hermitize(HA))
        if not block.has_full_support(rel_tol):
            message = f"block ({m},{n}) has a rank-deficient cofactor state {populations}"
            warnings.append(message)
            log_app_event("WARN", "STRUCTURE", message)
        blocks.append(block)

    def order_key(block: Block):
        weights = np.sum(np.abs(block.isometry) ** 2, axis=1)
        center_of_mass = float(np.dot(np.arange(len(weights)), weights) / block.dim)
        smallest = float(np.linalg.eigvalsh(block.fixed_state)[0])
        return (-block.m, -block.n, round(smallest, 12), round(center_of_mass, 9))

    blocks.sort(key=order_key)
    residual = max((_fixed_point_residual(lindbladian, b) for b in blocks), default=0.0)
    log_app_event(
        "INFO",
        "STRUCTURE",
        f"decomposed dim {lindbladian.dim}: blocks {[(b.m, b.n) for b in blocks]}, "
        f"K dim {recurrence.decaying.dim}, residual {residual:.2e}",
    )
    return Decomposition(blocks, recurrence.decaying, residual, seed, rel_tol, warnings)


# ==================== BLOCK FORM ====================

def _full_frame(block: Block) -> np.ndarray:
    return np.hstack([block.isometry, orthogonal_complement(block.isometry)])


def verify_blockform(lindbladian: Lindbladian, block: Block) -> BlockFormReport:
    """
    Check, in the basis (A⊗B ⊕ complement), that every L_j is upper block
    triangular with upper-left block I⊗L_j^B, that the upper-left block of H
    is H^A⊗I + I⊗H^B, and that H₂ = −(i/2) Σ_j (I⊗L_j^B)† L_{2j}.
    """
    if block.ambient_dim != lindbladian.dim:
        raise DimensionError(f"block in dim {block.ambient_dim}, generator in dim {lindbladian.dim}")
    m, n, k = block.m, block.n, block.dim
    F = _full_frame(block)
    Fd = F.conj().T
    eye_a = np.eye(m)

    residuals: Dict[str, float] = {}
    local_dissipators = []
    h2_expected = np.zeros((k, lindbladian.dim - k), dtype=complex)
    for j, L in enumerate(lindbladian.dissipators):
        Lt = Fd @ L @ F
        L11, L12, L21 = Lt[:k, :k], Lt[:k, k:], Lt[k:, :k]
        LB = partial_trace(L11, m, n, Side.A) / m
        residuals[f"lower_left_{j}"] = float(np.linalg.norm(L21))
        residuals[f"upper_left_{j}"] = float(np.linalg.norm(L11 - np.kron(eye_a, LB)))
        h2_expected += -0.5j * np.kron(eye_a, LB).conj().T @ L12
        local_dissipators.append(LB)

    Ht = Fd @ lindbladian.H @ F
    H11, H12 = Ht[:k, :k], Ht[:k, k:]
    shift = np.trace(H11) / (m * n)
    HA = partial_trace(H11, m, n, Side.B) / n
    HB = partial_trace(H11, m, n, Side.A) / m - shift * np.eye(n)
    residuals["hamiltonian"] = float(np.linalg.norm(H11 - np.kron(HA, np.eye(n)) - np.kron(eye_a, HB)))
    residuals["h2"] = float(np.linalg.norm(H12 - h2_expected)) if H12.size else 0.0

    max_violation = max(residuals.values())
    threshold = BLOCKFORM_TOL * spectral_norm(lindbladian.superoperator)
    passes = max_violation <= max(threshold, 1e-14)
    return BlockFormReport(passes, max_violation, threshold, residuals, hermitize(HB), local_dissipators)


def local_lindbladian(lindbladian: Lindbladian, block: Block) -> Lindbladian:
    """Generator of the cofactor B: Hamiltonian H^B and dissipators L_j^B."""
    report = verify_blockform(lindbladian, block)
    if not report.passes:
        raise StructuralError(
            f"block form fails (max violation {report.max_violation:.3e}); no local generator"
        )
    if block.n == 1:
        log_app_event("INFO", "STRUCTURE", "one-dimensional cofactor: local generator is empty")
        return Lindbladian(np.zeros((1, 1)), [], name="empty")
    return Lindbladian(report.local_hamiltonian, report.local_dissipators, name="local")


# ==================== GAPS ====================

def _b2_basis(block: Block) -> np.ndarray:
    """Orthonormal vec-basis of operators whose complement-complement block vanishes."""
    F = _full_frame(block)
    d, k = F.shape[0], block.dim
    columns = []
    for j in range(d):
        for i in range(d):
            if i >= k and j >= k:
                continue
            columns.append(np.kron(F[:, j].conj(), F[:, i]))
    return np.array(columns).T


@dataclass
class _GapPoint:
    s: Optional[float]
    delta1: Optional[float]
    delta2: float
    local_eigenvalues: np.ndarray
    restricted_eigenvalues: np.ndarray
    restricted: np.ndarray


def _gap_at(lindbladian: Lindbladian, block: Block, rel_tol: float, s: Optional[float] = None) -> _GapPoint:
    where = "" if s is None else f" at s={s:.6g}"
    report = verify_blockform(lindbladian, block)
    if not report.passes:
        raise StructuralError(f"block form fails{where} (max violation {report.max_violation:.3e})")
    S = lindbladian.superoperator
    threshold = rel_tol * spectral_norm(S)

    delta1 = None
    local_eigs = np.zeros(0, dtype=complex)
    if block.n > 1:
        local = Lindbladian(report.local_hamiltonian, report.local_dissipators)
        local_eigs = spectrum(local.superoperator).eigenvalues
        nonzero = local_eigs[np.abs(local_eigs) > threshold]
        delta1 = float(np.min(np.abs(nonzero.real))) if nonzero.size else float("inf")

    Q = _b2_basis(block)
    M = Q.conj().T @ S @ Q
    kernel_dim = null_space(M, rel_tol).dim
    if kernel_dim != block.m ** 2:
        raise DimensionChangeError(
            f"kernel inside the block has dimension {kernel_dim}{where}, expected {block.m ** 2}", s
        )
    restricted_eigs = spectrum(M).eigenvalues
    magnitudes = np.sort(np.abs(restricted_eigs))
    delta2 = float(magnitudes[kernel_dim]) if magnitudes.size > kernel_dim else float("inf")
    return _GapPoint(s, delta1, delta2, local_eigs, restricted_eigs, M)


def compute_gaps(
    curve: LindbladCurve,
    tracker: "BlockTracker",
    s_points: int = DEFAULT_S_POINTS,
    rel_tol: float = REL_TOL,
    threads: Optional[int] = None,
) -> GapReport:
    """Δ₁, Δ₂ and Δ = min(Δ₁, Δ₂) over a uniform grid of s values."""
    if s_points < MIN_S_POINTS:
        raise ParameterError(f"s_points must be at least {MIN_S_POINTS}, got {s_points}")
    grid = [float(s) for s in np.linspace(0.0, 1.0, s_points)]

    def evaluate(s: float) -> _GapPoint:
        return _gap_at(curve.rotated(s), tracker.block(s), rel_tol, s)

    points: List[Optional[_GapPoint]] = [None] * s_points
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            futures = {executor.submit(evaluate, s): i for i, s in enumerate(grid)}
            for future in as_completed(futures):
                points[futures[future]] = future.result()
    else:
        points = [evaluate(s) for s in grid]

    deltas1 = [p.delta1 for p in points if p.delta1 is not None]
    delta1 = min(deltas1) if deltas1 else None
    delta2 = min(p.delta2 for p in points)
    delta = min(delta2, delta1) if delta1 is not None else delta2
    per_s = [
        {
            "s": p.s,
            "delta1": p.delta1,
            "delta2": p.delta2,
            "local_eigenvalues": p.local_eigenvalues,
            "restricted_eigenvalues": p.restricted_eigenvalues,
        }
        for p in points
    ]
    log_app_event("INFO", "STRUCTURE", f"gaps over {s_points} points: Δ1={delta1}, Δ2={delta2:.6g}")
    return GapReport(grid, delta1, delta2, delta, per_s)


def pseudo_inverse_bound(
    lindbladian: Lindbladian, block: Block, rel_tol: float = REL_TOL
) -> InverseBound:
    """
    Invert the generator on B₂ with the fixed points B₀ split off.

    The restriction L′ acts on the range of S|B₂, its invariant complement to
    the kernel, so the spectral radius of L′⁻¹ is 1/min|λ| over the non-zero
    eigenvalues and never exceeds 1/Δ.
    """
    point = _gap_at(lindbladian, block, rel_tol)
    delta = min(point.delta2, point.delta1) if point.delta1 is not None else point.delta2
    M = point.restricted
    rank = M.shape[0] - block.m ** 2
    if rank == 0:
        return InverseBound(0.0, 1.0 / delta, 0.0, delta)
    u, _, _ = scipy.linalg.svd(M)
    basis = u[:, :rank]
    restricted = basis.conj().T @ M @ basis
    smallest = scipy.linalg.svdvals(restricted)[-1]
    if smallest < rel_tol * spectral_norm(lindbladian.superoperator):
        raise StructuralError("restricted generator is singular on the complement of its fixed points")
    inverse = np.linalg.inv(restricted)
    radius = float(1.0 / np.min(np.abs(np.linalg.eigvals(restricted))))
    return InverseBound(radius, 1.0 / delta, spectral_norm(inverse), delta)


# ==================== TRACKING ====================

class BlockTracker:
    """
    Supplies the block of the co-moving generator at each s: either one
    fixed block, or the block of the instantaneous decomposition whose range
    is closest to a reference block.
    """

    def __init__(
        self,
        block: Optional[Block] = None,
        curve: Optional[LindbladCurve] = None,
        reference: Optional[Block] = None,
        seed: int = DEFAULT_SEED,
        rel_tol: float = REL_TOL,
    ):
        if block is None and (curve is None or reference is None):
            raise ParameterError("tracker needs a fixed block or a curve with a reference block")
        self._block = block
        self.curve = curve
        self.reference = reference
        self.seed = seed
        self.rel_tol = rel_tol
        self._cache: Dict[float, Block] = {}
        self._lock = threading.Lock()

    @classmethod
    def fixed(cls, block: Block) -> "BlockTracker":
        return cls(block=block)

    @classmethod
    def follow(
        cls, curve: LindbladCurve, reference: Block, seed: int = DEFAULT_SEED, rel_tol: float = REL_TOL
    ) -> "BlockTracker":
        return cls(curve=curve, reference=reference, seed=seed, rel_tol=rel_tol)

    @property
    def is_fixed(self) -> bool:
        return self._block is not None

    def block(self, s: float) -> Block:
        if self._block is not None:
            return self._block
        with self._lock:
            hit = self._cache.get(s)
        if hit is not None:
            return hit
        decomposition = decompose(self.curve.rotated(s), self.rel_tol, self.seed)
        candidates = [
            b for b in decomposition.blocks if (b.m, b.n) == (self.reference.m, self.reference.n)
        ]
        if not candidates:
            raise DimensionChangeError(
                f"no ({self.reference.m},{self.reference.n}) block at s={s:.6g}: "
                f"found {decomposition.signature}",
                s,
            )
        chosen = min(
            candidates,
            key=lambda b: float(np.max(principal_angles(b.isometry, self.reference.isometry))),
        )
        with self._lock:
            self._cache[s] = chosen
        return chosen
