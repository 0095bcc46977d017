"""
Experiment router: one handler per experiment name.

Handlers take the built system and the validated config and return an
ExperimentOutput; they never touch the disk.
"""
from typing import Callable, Dict, List

import numpy as np

from config import ExperimentConfig
from services.adiabatic import adiabatic_error, effective_unitary, pauli_coefficients, scaling_scan, spans_su, v_eff
from services.errors import ParameterError
from services.event_log import log_app_event
from services.holonomy import run_loop_gate
from services.lindblad import default_steps, propagate_curve
from services.numerics import traceless
from services.presets import PresetSystem
from services.structure import (
    compute_gaps,
    decompose,
    fixed_point_basis,
    pseudo_inverse_bound,
    verify_blockform,
)
from storage import ExperimentOutput, ScanSeries

Handler = Callable[[PresetSystem, ExperimentConfig], ExperimentOutput]

TRAJECTORY_ROWS = 100


class ExperimentRouter:
    def __init__(self):
        self.routes: Dict[str, Handler] = {}

    def experiment(self, name: str):
        def decorator(handler: Handler) -> Handler:
            self.routes[name] = handler
            return handler
        return decorator

    def dispatch(self, system: PresetSystem, config: ExperimentConfig) -> ExperimentOutput:
        handler = self.routes.get(config.experiment)
        if handler is None:
            raise ParameterError(f"no handler for experiment '{config.experiment}'")
        log_app_event("INFO", "CLI", f"running {config.experiment} on {system.name}")
        output = handler(system, config)
        output.report.setdefault("experiment", config.experiment)
        output.report.setdefault("system", system.to_dict())
        output.report.setdefault("seed", config.parameters.seed)
        output.report.setdefault("warnings", [])
        return output


router = ExperimentRouter()


def _is_qubit_register(m: int) -> bool:
    return m > 1 and (m & (m - 1)) == 0


def _T_values(system: PresetSystem, config: ExperimentConfig) -> List[float]:
    if "T" in config.parameters.model_fields_set:
        return list(config.parameters.T)
    return list(system.T_values)


# ==================== DECOMPOSE ====================

@router.experiment("decompose")
def run_decompose(system: PresetSystem, config: ExperimentConfig) -> ExperimentOutput:
    params = config.parameters
    decomposition = decompose(system.base, seed=params.seed)
    kernel = fixed_point_basis(system.base)
    checks = [verify_blockform(system.base, block) for block in decomposition.blocks]
    reference = verify_blockform(system.base, system.block)

    rows = []
    for index, (block, check) in enumerate(zip(decomposition.blocks, checks)):
        populations = np.linalg.eigvalsh(block.fixed_state)
        rows.append([index, block.m, block.n, float(populations[0]), float(populations[-1]), check.max_violation])

    report = {
        "kernel_dim": kernel.dim,
        "decomposition": decomposition.to_dict(),
        "blockform": [check.to_dict() for check in checks],
        "reference_block": {**system.block.to_dict(), "blockform": reference.to_dict()},
        "warnings": list(decomposition.warnings) + list(kernel.warnings),
    }
    return ExperimentOutput(
        "decompose", report, ["block", "m", "n", "min_population", "max_population", "blockform_violation"], rows
    )


# ==================== GAPS ====================

@router.experiment("gaps")
def run_gaps(system: PresetSystem, config: ExperimentConfig) -> ExperimentOutput:
    params = config.parameters
    gaps = compute_gaps(system.curve, system.tracker, params.s_points, threads=params.threads)
    bound = pseudo_inverse_bound(system.curve.rotated(0.0), system.tracker.block(0.0))
    report = {
        "gaps": gaps.to_dict(),
        "inverse_bound": bound.to_dict(),
        "bound_holds": bound.spectral_radius_of_inverse * gaps.delta <= 1.0 + 1e-9,
    }
    return ExperimentOutput("gaps", report, ["s", "delta1", "delta2"], gaps.csv_rows())


# ==================== V_EFF ====================

@router.experiment("veff")
def run_veff(system: PresetSystem, config: ExperimentConfig) -> ExperimentOutput:
    block = system.block
    entries = []
    rows = []
    hamiltonians = []
    for label, V in system.perturbations():
        H_eff = v_eff(V, block)
        hamiltonians.append(H_eff)
        entry = {
            "term": label,
            "v_eff": H_eff,
            "trace_part": float(np.trace(H_eff).real) / block.m,
            "traceless": traceless(H_eff),
            "unitary": effective_unitary(H_eff),
        }
        if _is_qubit_register(block.m):
            coefficients = pauli_coefficients(H_eff)
            entry["pauli"] = coefficients
            rows.extend([label, name, value] for name, value in sorted(coefficients.items()))
        else:
            for i in range(block.m):
                for j in range(block.m):
                    rows.append([label, f"re_{i}{j}", float(H_eff[i, j].real)])
                    rows.append([label, f"im_{i}{j}", float(H_eff[i, j].imag)])
        entries.append(entry)
    report = {
        "block": {"m": block.m, "n": block.n, "fixed_state": block.fixed_state},
        "terms": entries,
        "spans_su": spans_su(hamiltonians) if hamiltonians else False,
    }
    return ExperimentOutput("veff", report, ["term", "component", "coefficient"], rows)


# ==================== EVOLVE ====================

@router.experiment("evolve")
def run_evolve(system: PresetSystem, config: ExperimentConfig) -> ExperimentOutput:
    params = config.parameters
    T = _T_values(system, config)[0]
    curve, block = system.curve, system.block
    steps = params.steps or default_steps(curve, T)
    rho_b = np.eye(block.n, dtype=complex) / block.n if params.start_mixed else None
    trajectory = propagate_curve(
        curve, block.embed(system.rho0_a, rho_b), T, steps, record_every=max(1, steps // TRAJECTORY_ROWS)
    )
    run = adiabatic_error(curve, system.tracker, system.rho0_a, T, steps, params.start_mixed)
    traces = [float(np.trace(rho).real) for rho in trajectory.states]
    report = {
        "T": T,
        "steps": trajectory.steps,
        "adiabatic": run.to_dict(),
        "max_trace_drift": max(abs(t - 1.0) for t in traces),
        "final_state": trajectory.final,
    }
    return ExperimentOutput("evolve", report, trajectory.csv_header(), trajectory.csv_rows())


# ==================== SCAN ====================

@router.experiment("scan")
def run_scan(system: PresetSystem, config: ExperimentConfig) -> ExperimentOutput:
    params = config.parameters
    T_values = _T_values(system, config)
    result = scaling_scan(
        system.curve,
        system.tracker,
        system.rho0_a,
        T_values,
        steps=params.steps,
        threads=params.threads,
        start_mixed=params.start_mixed,
        s_points=params.s_points,
    )
    report = {"scan": result.to_dict(), "warnings": list(result.warnings)}
    return ExperimentOutput(
        "scan",
        report,
        ["T", "error", "leakage"],
        result.csv_rows(),
        ScanSeries(result.T_values, result.errors, result.envelope_constant),
    )


# ==================== HOLONOMY ====================

@router.experiment("holonomy")
def run_holonomy(system: PresetSystem, config: ExperimentConfig) -> ExperimentOutput:
    params = config.parameters
    if system.loop is None:
        raise ParameterError(f"system '{system.name}' has no closed loop; use a holonomy preset")
    if params.method == "transport":
        run = run_loop_gate(system.loop, N=params.N, threads=params.threads)
    else:
        run = run_loop_gate(system.loop, T=_T_values(system, config)[0], steps=params.steps, threads=params.threads)
    report = {
        "loop": system.loop.to_dict(),
        "gate": run.to_dict(),
        "channel": run.gate.to_dict(),
    }
    rows = [[index, deviation] for index, deviation in enumerate(run.deviations)]
    return ExperimentOutput("holonomy", report, ["fiducial", "trace_distance_to_target"], rows)
