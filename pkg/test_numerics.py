import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from services.errors import DimensionError, OperatorError
from services.numerics import (
    SIGMA_X,
    SIGMA_Z,
    Side,
    apply_superop,
    check_density,
    choi_matrix,
    commutator_superop,
    conjugation_superop,
    group_eigenvalues,
    hermitian_basis,
    is_completely_positive,
    ket,
    kron,
    matexp,
    null_space,
    orthogonal_complement,
    partial_trace,
    pauli_string,
    principal_angles,
    projector,
    random_density,
    random_hermitian,
    random_unitary,
    site_operator,
    spectral_norm,
    support,
    time_ordered_product,
    trace_distance,
    unvec,
    vec,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def _complex(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


@settings(max_examples=500)
@given(seeds, st.integers(min_value=1, max_value=4))
def test_vec_of_product(seed, d):
    rng = np.random.default_rng(seed)
    A, X, B = _complex(rng, d, d), _complex(rng, d, d), _complex(rng, d, d)
    assert np.abs(vec(A @ X @ B) - np.kron(B.T, A) @ vec(X)).max() < 1e-10
    assert np.abs(unvec(vec(X)) - X).max() == 0


@settings(max_examples=500)
@given(seeds)
def test_commutator_and_conjugation_superops(seed):
    rng = np.random.default_rng(seed)
    G = random_hermitian(3, rng)
    U = random_unitary(3, rng)
    X = _complex(rng, 3, 3)
    assert np.abs(apply_superop(commutator_superop(G), X) - (G @ X - X @ G)).max() < 1e-10
    assert np.abs(apply_superop(conjugation_superop(U), X) - U @ X @ U.conj().T).max() < 1e-10


@settings(max_examples=200)
@given(seeds, st.integers(min_value=2, max_value=6), st.integers(min_value=1, max_value=5))
def test_null_space_of_low_rank_matrix(seed, n, rank):
    rng = np.random.default_rng(seed)
    rank = min(rank, n - 1)
    M = _complex(rng, n, rank) @ _complex(rng, rank, n)
    basis = null_space(M)
    assert basis.dim == n - rank
    assert basis.orthonormality_error() < 1e-10
    assert np.abs(M @ basis.columns).max() < 1e-8 * np.abs(M).max()
    for column in basis.columns.T:
        lead = column[np.nonzero(np.abs(column) > 1e-8)[0][0]]
        assert abs(lead.imag) < 1e-12 and lead.real > 0


def test_null_space_edge_cases():
    assert null_space(np.zeros((3, 3))).dim == 3
    assert null_space(np.eye(3)).dim == 0
    assert null_space(np.zeros((0, 4))).dim == 4
    with pytest.raises(DimensionError):
        null_space(np.eye(2), rel_tol=0.0)


def test_null_space_flags_borderline_singular_values():
    M = np.diag([1.0, 2e-9])
    basis = null_space(M, rel_tol=1e-9)
    assert basis.dim == 0
    assert basis.warnings


def test_orthogonal_complement_spans_the_rest(rng):
    Q = scipy.linalg.qr(_complex(rng, 5, 2), mode="economic")[0]
    C = orthogonal_complement(Q)
    assert C.shape == (5, 3)
    assert np.abs(Q.conj().T @ C).max() < 1e-10
    assert np.abs(np.hstack([Q, C]).conj().T @ np.hstack([Q, C]) - np.eye(5)).max() < 1e-10


def test_partial_trace_of_products(rng):
    X = _complex(rng, 2, 2)
    Y = _complex(rng, 3, 3)
    M = np.kron(X, Y)
    assert np.abs(partial_trace(M, 2, 3, Side.B) - X * np.trace(Y)).max() < 1e-10
    assert np.abs(partial_trace(M, 2, 3, "A") - np.trace(X) * Y).max() < 1e-10
    with pytest.raises(DimensionError):
        partial_trace(M, 2, 2)


def test_trace_distance():
    zero, one = projector(ket(0, 2)), projector(ket(1, 2))
    assert trace_distance(zero, one) == pytest.approx(1.0)
    assert trace_distance(zero, zero) == pytest.approx(0.0)
    assert trace_distance(zero, np.eye(2) / 2) == pytest.approx(0.5)


def test_site_operator_ordering():
    Z1 = site_operator(SIGMA_Z, 1, 3)
    Z3 = site_operator(SIGMA_Z, 3, 3)
    # |011⟩ is index 3
    assert Z1[3, 3] == 1
    assert Z3[3, 3] == -1
    assert np.array_equal(Z1, kron(SIGMA_Z, np.eye(2), np.eye(2)))
    assert np.array_equal(pauli_string("XZ"), np.kron(SIGMA_X, SIGMA_Z))
    with pytest.raises(DimensionError):
        site_operator(SIGMA_Z, 4, 3)


def test_choi_and_complete_positivity(rng):
    U = random_unitary(2, rng)
    assert is_completely_positive(conjugation_superop(U))
    assert np.trace(choi_matrix(conjugation_superop(U))).real == pytest.approx(2.0)

    transpose = np.zeros((4, 4))
    for i in range(2):
        for j in range(2):
            transpose[j * 2 + i, i * 2 + j] = 1.0
    assert not is_completely_positive(transpose)


def test_matexp_and_time_ordering(rng):
    G = random_hermitian(3, rng)
    assert np.abs(matexp(-0.7j * G) - scipy.linalg.expm(-0.7j * G)).max() < 1e-12
    U = time_ordered_product(lambda s: G, 0.0, 0.7, 50)
    assert np.abs(U - scipy.linalg.expm(-0.7j * G)).max() < 1e-10
    with pytest.raises(OperatorError):
        matexp(np.array([[np.inf, 0], [0, 0]]))


def test_time_ordering_puts_later_factors_left():
    def generator(s):
        return SIGMA_X if s < 0.5 else SIGMA_Z
    U = time_ordered_product(generator, 0.0, 1.0, 2)
    expected = scipy.linalg.expm(-0.5j * SIGMA_Z) @ scipy.linalg.expm(-0.5j * SIGMA_X)
    assert np.abs(U - expected).max() < 1e-12


def test_check_density():
    check_density(np.eye(2) / 2)
    with pytest.raises(OperatorError):
        check_density(np.eye(2))
    with pytest.raises(OperatorError):
        check_density(np.diag([1.5, -0.5]))
    with pytest.raises(OperatorError):
        check_density(np.array([[0.5, 1.0], [0.0, 0.5]]))


def test_hermitian_basis_of_adjoint_closed_span():
    raising = np.array([[0, 0], [1, 0]], dtype=complex)
    basis = hermitian_basis([raising, raising.conj().T])
    assert len(basis) == 2
    for X in basis:
        assert np.abs(X - X.conj().T).max() < 1e-12
    gram = np.array([[np.trace(A @ B).real for B in basis] for A in basis])
    assert np.abs(gram - np.eye(2)).max() < 1e-10


def test_group_eigenvalues():
    groups, gap = group_eigenvalues(np.array([0.0, 1.0, 1.0 + 1e-12, 3.0]), 1e-9)
    assert [len(g) for g in groups] == [1, 2, 1]
    assert gap == pytest.approx(1.0)


def test_support_and_principal_angles(rng):
    rho = random_density(4, rng, rank=2)
    supp, kernel = support(rho)
    assert supp.shape[1] == 2 and kernel.shape[1] == 2
    assert np.abs(rho @ kernel).max() < 1e-10
    U = random_unitary(2, rng)
    assert np.max(principal_angles(supp, supp @ U)) < 1e-7


def test_spectral_norm(rng):
    U = random_unitary(3, rng)
    assert spectral_norm(2.0 * U) == pytest.approx(2.0)
    assert spectral_norm(np.zeros((0, 0))) == 0.0
