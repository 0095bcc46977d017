import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from config import ExperimentConfig
from services.adiabatic import (
    adiabatic_error,
    block_projector,
    effective_unitary,
    fit_loglog_slope,
    pauli_coefficients,
    scaling_scan,
    spans_su,
    v_eff,
)
from services.errors import DimensionError, ParameterError
from services.lindblad import RotatedFrameCurve, ScheduledGenerator, amplitude_damping, constant_curve, depolarizer
from services.numerics import (
    SIGMA_X,
    SIGMA_Z,
    pauli_string,
    random_density,
    random_hermitian,
    random_unitary,
    site_operator,
    time_ordered_product,
    traceless,
)
from services.presets import build_system, collective_lindbladian, doublet_block
from services.structure import BlockTracker, product_block
from test_structure import BLOCK_SHAPES, random_blockform

seeds = st.integers(min_value=0, max_value=2**32 - 1)
RATES = [(1.0, 3.0), (2.0, 1.0), (1.0, 1.0)]


def _closed_sweep():
    return build_system(ExperimentConfig(experiment="scan", system={"preset": "closed-sweep"}))


# ==================== PROJECTOR ====================

@settings(max_examples=500)
@given(seeds, st.sampled_from(BLOCK_SHAPES))
def test_projector_is_idempotent(seed, shape):
    m, n, k = shape
    rng = np.random.default_rng(seed)
    W = random_unitary(m * n + k, rng)[:, : m * n]
    block = product_block(m, n, fixed_state=random_density(n, rng), isometry=W)
    P = block_projector(block).matrix
    assert np.abs(P @ P - P).max() < 1e-10


@settings(max_examples=500)
@given(seeds, st.sampled_from(BLOCK_SHAPES + [(2, 1, 1)]), st.floats(min_value=0.0, max_value=1.0))
def test_generator_annihilates_projected_states(seed, shape, s):
    rng = np.random.default_rng(seed)
    lindbladian, block = random_blockform(rng, *shape)
    curve = RotatedFrameCurve(lindbladian, ScheduledGenerator(random_hermitian(lindbladian.dim, rng), "linear"))
    P = block_projector(block).matrix
    assert np.abs(curve.rotated(s).superoperator @ P).max() < 1e-10
    # in the lab frame the block is carried along by U(s)†
    lab_block = block.rotated(curve.frame_unitary(s).conj().T)
    assert np.abs(curve.lab(s).superoperator @ block_projector(lab_block).matrix).max() < 1e-9


def test_projected_states_are_fixed_points():
    lindbladian = collective_lindbladian(1.0, 1.0, 3.0)
    P = block_projector(doublet_block(1.0, 3.0)).matrix
    assert np.abs(lindbladian.superoperator @ P).max() < 1e-10


# ==================== V_EFF ====================

@pytest.mark.parametrize("gamma_plus, gamma_minus", RATES)
def test_collective_v_eff_values(gamma_plus, gamma_minus):
    block = doublet_block(gamma_plus, gamma_minus)
    bias = (gamma_minus - gamma_plus) / (gamma_plus + gamma_minus)
    last = v_eff(site_operator(SIGMA_Z, 3, 3), block)
    assert np.abs(last - bias * np.diag([1.0, -1.0 / 3.0])).max() < 1e-12

    first = v_eff(site_operator(SIGMA_Z, 1, 3), block)
    expected = bias * (np.eye(2) / 3 + SIGMA_X / math.sqrt(3) - SIGMA_Z / 3)
    assert np.abs(first - expected).max() < 1e-12

    total = sum(v_eff(site_operator(SIGMA_Z, k, 3), block) for k in (1, 2, 3))
    assert np.abs(total - bias * np.eye(2)).max() < 1e-12


def test_site_terms_have_equal_weight():
    block = doublet_block(1.0, 3.0)
    norms = [np.linalg.norm(traceless(v_eff(site_operator(SIGMA_Z, k, 3), block))) for k in (1, 2, 3)]
    assert max(norms) - min(norms) < 1e-12


def test_pauli_coefficients():
    block = doublet_block(1.0, 3.0)
    coefficients = pauli_coefficients(v_eff(site_operator(SIGMA_Z, 1, 3), block))
    assert coefficients["I"] == pytest.approx(0.5 / 3)
    assert coefficients["X"] == pytest.approx(0.5 / math.sqrt(3))
    assert coefficients["Y"] == pytest.approx(0.0, abs=1e-14)
    assert coefficients["Z"] == pytest.approx(-0.5 / 3)
    with pytest.raises(DimensionError):
        pauli_coefficients(np.eye(3))


def test_v_eff_shape_check():
    with pytest.raises(DimensionError):
        v_eff(np.eye(4), doublet_block(1.0, 3.0))


# ==================== EFFECTIVE UNITARY ====================

def test_effective_unitary():
    U = effective_unitary(0.3 * SIGMA_Z)
    assert np.abs(U.conj().T @ U - np.eye(2)).max() < 1e-12
    assert np.abs(U - np.diag([np.exp(-0.3j), np.exp(0.3j)])).max() < 1e-12
    ramp = effective_unitary(lambda s: s * SIGMA_X)
    assert np.abs(ramp - effective_unitary(0.5 * SIGMA_X)).max() < 1e-10
    with pytest.raises(ParameterError):
        effective_unitary(SIGMA_Z, s_end=0.0)
    with pytest.raises(ParameterError):
        effective_unitary(lambda s: SIGMA_Z, steps=50)


@settings(max_examples=500)
@given(seeds, st.sampled_from([1, 2, 3, 4]))
def test_effective_unitary_is_unitary_and_composes(seed, m):
    rng = np.random.default_rng(seed)
    A, B = random_hermitian(m, rng), random_hermitian(m, rng)

    def curve(s):
        return A + s * B

    U = effective_unitary(curve, steps=200)
    assert np.abs(U.conj().T @ U - np.eye(m)).max() < 1e-10
    first = effective_unitary(curve, s_end=0.5, steps=100)
    second = time_ordered_product(curve, 0.5, 1.0, 100)
    assert np.abs(second @ first - U).max() < 1e-10
    half = effective_unitary(A, s_end=0.5)
    assert np.abs(half @ half - effective_unitary(A)).max() < 1e-10


def test_spans_su():
    assert spans_su([SIGMA_X, SIGMA_Z])
    assert not spans_su([SIGMA_Z])
    assert not spans_su([np.eye(2)])
    assert not spans_su([])
    local = [pauli_string(p) for p in ("XI", "ZI", "IX", "IZ")]
    assert not spans_su(local)
    assert spans_su(local + [pauli_string("XX")])


def test_collective_site_terms_span_su2():
    block = doublet_block(1.0, 3.0)
    terms = [v_eff(site_operator(SIGMA_Z, k, 3), block) for k in (1, 3)]
    assert spans_su(terms)


# ==================== ADIABATIC ERROR ====================

def test_closed_sweep_error_matches_leakage():
    system = _closed_sweep()
    run = adiabatic_error(system.curve, system.tracker, system.rho0_a, 100.0)
    # only the switch-on at s=0 excites the upper level
    assert 0.8e-4 < run.error < 1.7e-4
    assert run.error == pytest.approx(run.leakage / 2, rel=1e-6)


def test_closed_sweep_error_shrinks_with_time():
    system = _closed_sweep()
    short = adiabatic_error(system.curve, system.tracker, system.rho0_a, 25.0)
    long = adiabatic_error(system.curve, system.tracker, system.rho0_a, 100.0)
    assert long.error <= 0.75 * short.error


def test_collective_qubit_follows_its_effective_hamiltonian():
    config = ExperimentConfig(experiment="evolve", system={"preset": "appendix-b"})
    system = build_system(config)
    gamma_minus = system.parameters["gamma_minus"]
    run = adiabatic_error(system.curve, system.tracker, system.rho0_a, 1e4 / gamma_minus)
    assert run.error <= 0.02
    assert abs(run.leakage) < 0.02


def test_follow_tracker_is_rejected():
    system = _closed_sweep()
    tracker = BlockTracker.follow(system.curve, system.block)
    with pytest.raises(ParameterError):
        adiabatic_error(system.curve, tracker, system.rho0_a, 10.0)


def test_state_shape_is_checked():
    system = _closed_sweep()
    with pytest.raises(DimensionError):
        adiabatic_error(system.curve, system.tracker, np.eye(2) / 2, 10.0)


def test_mixed_cofactor_start_relaxes_without_error(rng):
    base = amplitude_damping(1.0).extended_by_identity(2)
    block = product_block(2, 2, fixed_state=np.diag([1.0, 0.0]))
    run = adiabatic_error(
        constant_curve(base), BlockTracker.fixed(block), random_density(2, rng), 10.0, start_mixed=True
    )
    assert run.error < 1e-9
    assert abs(run.leakage) < 1e-9


# ==================== SCALING ====================

def test_fit_loglog_slope():
    T = [1.0, 10.0, 100.0]
    assert fit_loglog_slope(T, [1.0 / t ** 2 for t in T]) == pytest.approx(-2.0)
    assert fit_loglog_slope(T, [1e-12, 1e-12, 1e-12]) is None


def test_scan_validation():
    system = _closed_sweep()
    with pytest.raises(ParameterError):
        scaling_scan(system.curve, system.tracker, system.rho0_a, [10.0, 30.0, 100.0])
    with pytest.raises(ParameterError):
        scaling_scan(system.curve, system.tracker, system.rho0_a, [10.0, 30.0, 30.0, 100.0])


def test_short_scan_warns_about_span():
    system = _closed_sweep()
    report = scaling_scan(system.curve, system.tracker, system.rho0_a, [10.0, 20.0, 40.0, 80.0])
    assert report.warnings
    assert report.monotonic


def test_scan_without_perturbation_is_flat(rng):
    base = depolarizer(1.0).extended_by_identity(2)
    tracker = BlockTracker.fixed(product_block(2, 2))
    report = scaling_scan(constant_curve(base), tracker, random_density(2, rng), [10.0, 100.0, 1000.0, 10000.0])
    assert max(report.errors) < 1e-9
    assert report.flat
    assert report.to_dict()["slope"] == "flat"


@pytest.mark.slow
def test_closed_sweep_scales_as_inverse_square():
    system = _closed_sweep()
    report = scaling_scan(system.curve, system.tracker, system.rho0_a, system.T_values, threads=2)
    assert -2.3 < report.fitted_slope < -1.7
    assert report.monotonic
    assert report.envelope_holds
    assert not report.warnings
    assert len(report.csv_rows()) == 5
