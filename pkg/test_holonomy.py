import math

import numpy as np
import pytest

from config import ExperimentConfig
from services.adiabatic import scaling_scan
from services.errors import DimensionError, ParameterError, RankError
from services.holonomy import (
    LoopAxes,
    check_closure,
    extract_unitary,
    fiducial_states,
    make_pauli_loop,
    run_loop_gate,
    transport_discrete,
    transport_grid,
    unitary_fidelity,
)
from services.lindblad import ConstantGenerator, depolarizer
from services.numerics import SIGMA_X, SIGMA_Z, matexp, pauli_string, random_density, random_unitary
from services.presets import build_system
from services.structure import product_block

TURN = math.sqrt(2.0) * math.pi
TARGETS = {
    LoopAxes.ZZ_X: SIGMA_X,
    LoopAxes.XX_Z: SIGMA_Z,
    LoopAxes.XZZ_XX: pauli_string("XX"),
}


def _loop(axes, gamma=5.0):
    base = depolarizer(gamma).extended_by_identity(2 ** (LoopAxes(axes).qubits - 1))
    return make_pauli_loop(axes, TURN, TURN, base)


def _preset(name, **parameters):
    config = ExperimentConfig(experiment="holonomy", system={"preset": name}, parameters=parameters)
    return build_system(config)


# ==================== LOOPS ====================

@pytest.mark.parametrize("axes", list(LoopAxes))
def test_loop_axes_anticommute(axes):
    P1, P2 = (pauli_string(label) for label in axes.labels)
    assert np.abs(P1 @ P2 + P2 @ P1).max() == 0


@pytest.mark.parametrize("axes", list(LoopAxes))
def test_predicted_gate(axes):
    loop = _loop(axes)
    expected = matexp(-1j * TURN * TARGETS[axes])
    assert np.abs(loop.predicted_gate() - expected).max() < 1e-10
    assert loop.to_dict()["m"] == 2 ** (axes.qubits - 1)


def test_loop_validation():
    base = depolarizer(1.0).extended_by_identity(2)
    with pytest.raises(ParameterError):
        make_pauli_loop(LoopAxes.ZZ_X, 1.0, 1.0, base)
    with pytest.raises(DimensionError):
        make_pauli_loop(LoopAxes.XZZ_XX, TURN, TURN, base)
    with pytest.raises(ValueError):
        make_pauli_loop("YY_Z", TURN, TURN, base)


def test_open_loop_is_rejected():
    frame = ConstantGenerator(0.5 * pauli_string("ZZ"))
    with pytest.raises(ParameterError):
        check_closure(frame, product_block(2, 2))


def test_closed_loop_returns_to_identity():
    loop = _loop(LoopAxes.ZZ_X)
    assert np.abs(loop.frame.unitary(1.0) - np.eye(4)).max() < 1e-10
    assert np.abs(loop.lab_block(1.0).projector() - loop.block0.projector()).max() < 1e-10


# ==================== TRANSPORT ====================

def test_transport_grids():
    assert np.array_equal(transport_grid(4), [0.0, 0.25, 0.5, 0.75, 1.0])
    assert transport_grid(4, "quadratic")[1] == pytest.approx(1 / 16)
    with pytest.raises(ParameterError):
        transport_grid(4, "cubic")


def test_transport_validation():
    loop = _loop(LoopAxes.ZZ_X)
    with pytest.raises(ParameterError):
        transport_discrete(loop, 5, np.eye(4) / 4)
    with pytest.raises(DimensionError):
        transport_discrete(loop, 100, np.eye(2) / 2)


def test_transport_keeps_trace_bookkeeping(rng):
    loop = _loop(LoopAxes.ZZ_X)
    rho0 = loop.block0.embed(random_density(2, rng))
    result = transport_discrete(loop, 200, rho0)
    assert abs(np.trace(result.state) - 1.0) < 1e-12
    # the block fills the whole space, so projecting loses nothing
    assert abs(result.trace_loss) < 1e-10


# ==================== GATE EXTRACTION ====================

def test_fiducial_counts():
    assert len(fiducial_states(2)) == 4
    assert len(fiducial_states(4)) == 16
    assert len(fiducial_states(3)) == 9


def test_extract_exact_unitary(rng):
    U = random_unitary(2, rng)
    samples = [(rho, U @ rho @ U.conj().T) for rho in fiducial_states(2)]
    gate = extract_unitary(samples)
    assert unitary_fidelity(gate.unitary, U) == pytest.approx(1.0, abs=1e-10)
    assert gate.fidelity == pytest.approx(1.0, abs=1e-10)


def test_extract_depolarized_unitary(rng):
    U = random_unitary(2, rng)
    p = 0.01
    samples = [
        (rho, (1 - p) * U @ rho @ U.conj().T + p * np.trace(rho) * np.eye(2) / 2) for rho in fiducial_states(2)
    ]
    gate = extract_unitary(samples)
    assert gate.fidelity == pytest.approx(0.995, abs=1e-10)
    assert unitary_fidelity(gate.unitary, U) == pytest.approx(1.0, abs=1e-9)


def test_extract_needs_spanning_inputs():
    states = fiducial_states(2)[:3]
    with pytest.raises(RankError):
        extract_unitary([(rho, rho) for rho in states])
    with pytest.raises(RankError):
        extract_unitary([])


def test_unitary_fidelity_ignores_global_phase(rng):
    U = random_unitary(3, rng)
    assert unitary_fidelity(U, np.exp(0.7j) * U) == pytest.approx(1.0)
    assert unitary_fidelity(np.eye(2), SIGMA_X) == pytest.approx(1 / 3)


def test_run_loop_gate_needs_one_method():
    loop = _loop(LoopAxes.ZZ_X)
    with pytest.raises(ParameterError):
        run_loop_gate(loop)
    with pytest.raises(ParameterError):
        run_loop_gate(loop, T=10.0, N=100)


# ==================== GATES ====================

@pytest.mark.slow
@pytest.mark.parametrize("preset", ["holonomy-x", "holonomy-z", "holonomy-xx"])
def test_dissipative_loop_implements_gate(preset):
    system = _preset(preset)
    run = run_loop_gate(system.loop, T=200.0)
    assert run.gate_fidelity >= 0.98
    assert run.gate.fidelity >= 0.95
    assert max(run.deviations) < 0.05


@pytest.mark.slow
def test_transport_agrees_with_propagation():
    system = _preset("holonomy-x")
    propagated = run_loop_gate(system.loop, T=200.0)
    transported = run_loop_gate(system.loop, N=2000, threads=2)
    assert max(transported.deviations) < 0.05
    assert unitary_fidelity(transported.gate.unitary, propagated.gate.unitary) >= 0.98
    for a, b in zip(transported.deviations, propagated.deviations):
        assert abs(a - b) <= 0.05


@pytest.mark.slow
def test_loop_error_decreases_with_time():
    system = _preset("holonomy-x")
    T_values = [50.0, 100.0, 200.0, 400.0, 800.0, 1600.0]
    report = scaling_scan(system.curve, system.tracker, system.rho0_a, T_values)
    assert report.monotonic
    assert report.envelope_holds
    assert report.fitted_slope < -0.5
