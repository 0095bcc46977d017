"""
Registry of named systems the runner can build.

Each preset turns a handful of numbers (rates, loop coefficients, field
strengths) into a PresetSystem: the co-moving generator, its frame path, the
block to follow and a default encoded state. Inline systems from a config
file go through the same type.
"""
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import ExperimentConfig
from services.errors import ConfigError, DimensionError, ParameterError, UnknownPresetError
from services.event_log import log_app_event
from services.holonomy import Loop, LoopAxes, make_pauli_loop
from services.lindblad import (
    ConstantGenerator,
    FramePath,
    Lindbladian,
    RotatedFrameCurve,
    ScheduledGenerator,
    depolarizer,
)
from services.numerics import (
    SIGMA_MINUS,
    SIGMA_PLUS,
    SIGMA_Y,
    SIGMA_Z,
    SINGLE_SITE,
    ket,
    pauli_string,
    projector,
    site_operator,
)
from services.structure import Block, BlockTracker, decompose, product_block

PARAMETER_KEYS = ("omega", "gamma_plus", "gamma_minus", "gamma", "a", "b", "g", "theta")


@dataclass
class PresetSystem:
    name: str
    description: str
    base: Lindbladian
    block: Block
    frame: Optional[FramePath] = None
    loop: Optional[Loop] = None
    rho0_a: Optional[np.ndarray] = None
    parameters: Dict[str, float] = field(default_factory=dict)
    T_values: List[float] = field(default_factory=lambda: [200.0])
    v_terms: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.rho0_a is None:
            self.rho0_a = probe_state(self.block.m)

    @property
    def curve(self) -> RotatedFrameCurve:
        return RotatedFrameCurve(self.base, self.frame)

    @property
    def tracker(self) -> BlockTracker:
        return BlockTracker.fixed(self.block)

    def perturbations(self) -> List[Tuple[str, np.ndarray]]:
        """(label, V) pairs the V_eff experiment reports on."""
        n_sites = qubit_count(self.base.dim) if self.v_terms else 0
        pairs = [(term, parse_term(term, n_sites)) for term in self.v_terms]
        if self.frame is not None and not self.v_terms:
            pairs.append(("frame", self.frame.generator(0.0)))
        return pairs

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "description": self.description,
            "dim": self.base.dim,
            "parameters": dict(self.parameters),
            "v_terms": list(self.v_terms),
            "loop": None if self.loop is None else self.loop.to_dict(),
        }


@dataclass(frozen=True)
class Preset:
    name: str
    description: str
    defaults: Dict[str, object]
    builder: Callable[[Dict], PresetSystem]

    def build(self, overrides: Optional[Dict] = None) -> PresetSystem:
        values = dict(self.defaults)
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        system = self.builder(values)
        log_app_event("DEBUG", "PRESETS", f"built preset {self.name}", str(system.parameters))
        return system


PRESETS: Dict[str, Preset] = {}


def register_preset(name: str, description: str, **defaults):
    def decorator(builder: Callable[[Dict], PresetSystem]):
        PRESETS[name] = Preset(name, description, defaults, builder)
        return builder
    return decorator


def get_preset(name: str) -> Preset:
    if name not in PRESETS:
        raise UnknownPresetError(name, PRESETS)
    return PRESETS[name]


def list_presets() -> str:
    """Plain-text table of the registry."""
    rows = [("NAME", "DESCRIPTION", "DEFAULTS")]
    for name in sorted(PRESETS):
        preset = PRESETS[name]
        defaults = ", ".join(
            f"{k}={_format_default(v)}" for k, v in preset.defaults.items() if k in PARAMETER_KEYS
        )
        rows.append((name, preset.description, defaults))
    widths = [max(len(row[i]) for row in rows) for i in range(2)]
    return "\n".join(
        f"{row[0].ljust(widths[0])}  {row[1].ljust(widths[1])}  {row[2]}".rstrip() for row in rows
    )


def _format_default(value) -> str:
    return f"{value:.6g}" if isinstance(value, float) else str(value)


# ==================== HELPERS ====================

def probe_state(m: int) -> np.ndarray:
    """A fixed pure state with no special alignment to any Pauli axis."""
    amplitudes = np.array([np.exp(0.25j * math.pi * k) / (k + 1) for k in range(m)])
    return projector(amplitudes / np.linalg.norm(amplitudes))


def qubit_count(dim: int) -> int:
    k = int(round(math.log2(dim))) if dim > 0 else 0
    if 2 ** k != dim:
        raise DimensionError(f"site terms need a qubit register, got dimension {dim}")
    return k


_TERM = re.compile(r"^\s*(?:(?P<coef>[-+]?[0-9.]+(?:[eE][-+]?\d+)?)\s*\*\s*)?(?P<name>[A-Za-z-]+)(?:@(?P<site>\d+))?\s*$")


def parse_term(term: str, n_sites: int) -> np.ndarray:
    """
    ``sigma-z@1`` (operator on site 1, the most significant qubit), a Pauli
    string such as ``XZI``, either optionally prefixed by ``0.5*``.
    """
    match = _TERM.match(term)
    if not match:
        raise ConfigError(f"cannot parse perturbation term '{term}'")
    coefficient = float(match.group("coef")) if match.group("coef") else 1.0
    name, site = match.group("name"), match.group("site")
    if site is not None:
        key = name.lower()
        if key not in SINGLE_SITE:
            raise ConfigError(f"unknown site operator '{name}' (use {', '.join(sorted(SINGLE_SITE))})")
        if key in ("sigma-minus", "sigma-plus"):
            raise ConfigError(f"'{name}' is not Hermitian and cannot be a perturbation")
        return coefficient * site_operator(SINGLE_SITE[key], int(site), n_sites)
    label = name.upper()
    if set(label) - set("IXYZ") or len(label) != n_sites:
        raise ConfigError(f"'{term}' is neither a site term nor a {n_sites}-qubit Pauli string")
    return coefficient * pauli_string(label)


def parse_terms(terms: Sequence[str], n_sites: int) -> np.ndarray:
    dim = 2 ** n_sites
    V = np.zeros((dim, dim), dtype=complex)
    for term in terms:
        V = V + parse_term(term, n_sites)
    return V


def _frame_from_terms(terms: Sequence[str], dim: int) -> Optional[ConstantGenerator]:
    if not terms:
        return None
    return ConstantGenerator(parse_terms(terms, qubit_count(dim)))


def parse_operator(rows, name: str) -> np.ndarray:
    """Nested [re, im] lists to a complex matrix."""
    try:
        array = np.asarray(rows, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a square matrix of [re, im] pairs")
    if array.ndim != 3 or array.shape[2] != 2 or array.shape[0] != array.shape[1]:
        raise ConfigError(f"{name} must be a square matrix of [re, im] pairs, got shape {array.shape}")
    return array[..., 0] + 1j * array[..., 1]


# ==================== COLLECTIVE DECOHERENCE ====================

def collective_operators(n_sites: int = 3) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """J_z = Σ σ_z/2, J_− = Σ σ₋, J_+ = Σ σ₊ on a register of ``n_sites`` qubits."""
    Jz = sum(site_operator(SIGMA_Z, k, n_sites) for k in range(1, n_sites + 1)) / 2
    Jm = sum(site_operator(SIGMA_MINUS, k, n_sites) for k in range(1, n_sites + 1))
    Jp = sum(site_operator(SIGMA_PLUS, k, n_sites) for k in range(1, n_sites + 1))
    return Jz, Jm, Jp


def doublet_basis() -> np.ndarray:
    """
    Columns |A0B0⟩, |A0B1⟩, |A1B0⟩, |A1B1⟩ spanning the two J = 1/2 doublets
    of three spins; A labels the doublet, B the J_z level inside it.
    """
    def state(*terms):
        v = np.zeros(8, dtype=complex)
        for coefficient, bits in terms:
            v += coefficient * ket(int(bits, 2), 8)
        return v

    a0b0 = state((1, "011"), (-1, "101")) / math.sqrt(2)
    a0b1 = state((1, "010"), (-1, "100")) / math.sqrt(2)
    a1b0 = state((2, "110"), (-1, "101"), (-1, "011")) / math.sqrt(6)
    a1b1 = state((-2, "001"), (1, "010"), (1, "100")) / math.sqrt(6)
    return np.column_stack([a0b0, a0b1, a1b0, a1b1])


def doublet_block(gamma_plus: float, gamma_minus: float) -> Block:
    """The encoded qubit of three spins, with ϱ^B = diag(γ⁺, γ⁻)/(γ⁺ + γ⁻)."""
    total = gamma_plus + gamma_minus
    rho_b = np.diag([gamma_plus / total, gamma_minus / total]).astype(complex)
    return product_block(2, 2, fixed_state=rho_b, isometry=doublet_basis())


def collective_lindbladian(omega: float, gamma_plus: float, gamma_minus: float) -> Lindbladian:
    Jz, Jm, Jp = collective_operators(3)
    return Lindbladian(
        omega * Jz,
        [math.sqrt(gamma_minus) * Jm, math.sqrt(gamma_plus) * Jp],
        name="appendix-b",
    )


# ==================== REGISTRY ====================

@register_preset(
    "appendix-b",
    "3-spin collective decoherence, encoded qubit in the J=1/2 doublets",
    omega=1.0,
    gamma_plus=1.0,
    gamma_minus=3.0,
    v=["sigma-z@1"],
    T=[200.0],
)
def _appendix_b(values: Dict) -> PresetSystem:
    omega, gp, gm = float(values["omega"]), float(values["gamma_plus"]), float(values["gamma_minus"])
    if gp <= 0 or gm <= 0:
        raise ParameterError("collective rates γ⁺ and γ⁻ must be positive")
    base = collective_lindbladian(omega, gp, gm)
    terms = list(values.get("v") or [])
    return PresetSystem(
        name="appendix-b",
        description=PRESETS["appendix-b"].description,
        base=base,
        block=doublet_block(gp, gm),
        frame=_frame_from_terms(terms, base.dim),
        parameters={"omega": omega, "gamma_plus": gp, "gamma_minus": gm},
        T_values=list(values["T"]),
        v_terms=terms,
    )


def _holonomy_builder(name: str, axes: LoopAxes):
    def build(values: Dict) -> PresetSystem:
        gamma, a, b = float(values["gamma"]), float(values["a"]), float(values["b"])
        qubits = axes.qubits
        base = depolarizer(gamma).extended_by_identity(2 ** (qubits - 1))
        loop = make_pauli_loop(axes, a, b, base)
        return PresetSystem(
            name=name,
            description=PRESETS[name].description,
            base=base,
            block=loop.block0,
            frame=loop.frame,
            loop=loop,
            parameters={"gamma": gamma, "a": a, "b": b},
            T_values=list(values["T"]),
        )
    return build


_LOOP_DEFAULTS = dict(gamma=5.0, a=math.sqrt(2.0) * math.pi, b=math.sqrt(2.0) * math.pi, T=[200.0])

for _name, _axes, _text in (
    ("holonomy-x", LoopAxes.ZZ_X, "ZZ/XI loop over a depolarized cofactor, gate exp(-ib X)"),
    ("holonomy-z", LoopAxes.XX_Z, "XX/ZI loop over a depolarized cofactor, gate exp(-ib Z)"),
    ("holonomy-xx", LoopAxes.XZZ_XX, "XZZ/XXI loop over a depolarized cofactor, gate exp(-ib XX)"),
):
    register_preset(_name, _text, **_LOOP_DEFAULTS)(_holonomy_builder(_name, _axes))


@register_preset(
    "closed-sweep",
    "two-level gapped sweep, field axis turned by theta",
    g=1.0,
    theta=math.pi / 2,
    T=[10.0, 30.0, 100.0, 300.0, 1000.0],
)
def _closed_sweep(values: Dict) -> PresetSystem:
    g, theta = float(values["g"]), float(values["theta"])
    if g == 0:
        raise ParameterError("closed sweep needs a non-zero gap g")
    base = Lindbladian(0.5 * g * SIGMA_Z, [], name="closed-sweep")
    frame = ScheduledGenerator(0.5 * theta * SIGMA_Y, "ramp")
    block = product_block(1, 1, isometry=ket(0, 2).reshape(2, 1))
    return PresetSystem(
        name="closed-sweep",
        description=PRESETS["closed-sweep"].description,
        base=base,
        block=block,
        frame=frame,
        parameters={"g": g, "theta": theta},
        T_values=list(values["T"]),
    )


@register_preset(
    "depol-b",
    "two qubits, identity on the first and a depolarizer on the second",
    gamma=1.0,
    v=["sigma-z@1"],
    T=[200.0],
)
def _depol_b(values: Dict) -> PresetSystem:
    gamma = float(values["gamma"])
    base = depolarizer(gamma).extended_by_identity(2)
    terms = list(values.get("v") or [])
    return PresetSystem(
        name="depol-b",
        description=PRESETS["depol-b"].description,
        base=Lindbladian(base.H, base.dissipators, name="depol-b"),
        block=product_block(2, 2),
        frame=_frame_from_terms(terms, base.dim),
        parameters={"gamma": gamma},
        T_values=list(values["T"]),
        v_terms=terms,
    )


# ==================== CONFIG ENTRY ====================

def _overrides(config: ExperimentConfig) -> Dict:
    params = config.parameters
    values = {key: getattr(params, key) for key in PARAMETER_KEYS}
    values["v"] = params.v
    if "T" in params.model_fields_set:
        values["T"] = list(params.T)
    return values


def build_inline(config: ExperimentConfig) -> PresetSystem:
    params = config.parameters
    H = parse_operator(config.system.hamiltonian, "hamiltonian")
    dissipators = [parse_operator(rows, f"dissipator {i}") for i, rows in enumerate(config.system.dissipators)]
    base = Lindbladian(H, dissipators, name="inline")
    decomposition = decompose(base, seed=params.seed)
    if not 0 <= params.block < len(decomposition.blocks):
        raise ParameterError(
            f"block index {params.block} out of range ({len(decomposition.blocks)} blocks found)"
        )
    terms = list(params.v or [])
    return PresetSystem(
        name="inline",
        description="inline system from config",
        base=base,
        block=decomposition.blocks[params.block],
        frame=_frame_from_terms(terms, base.dim),
        T_values=list(params.T),
        v_terms=terms,
    )


def build_system(config: ExperimentConfig) -> PresetSystem:
    if config.system.preset is None:
        return build_inline(config)
    return get_preset(config.system.preset).build(_overrides(config))
