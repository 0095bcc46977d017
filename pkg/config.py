"""
Numerical defaults, environment overrides and the experiment config schema.
"""
import math
import os
from typing import List, Literal, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

load_dotenv()

# --- Numerical defaults ---
REL_TOL = 1e-9
DEFAULT_SEED = 0xADAB
DEFAULT_S_POINTS = 101
MIN_S_POINTS = 11

# Curve integration
MIN_CURVE_STEPS = 100
DEFAULT_MIN_STEPS = 1000
STEP_DENSITY = 20          # steps per unit of T·‖S̃‖
MAX_STEP_RATIO = 0.5       # refuse when ‖S̃‖·T/steps exceeds this
EFFECTIVE_STEPS = 2000

# Scans
SLOPE_FLOOR = 1e-9
JITTER = 0.10

CONFIG_SCHEMA_VERSION = 1
EXPERIMENTS = ("decompose", "gaps", "veff", "evolve", "scan", "holonomy")


def parse_seed(value: Union[int, str]) -> int:
    """Seeds are ints in JSON configs and hex strings on the command line / env"""
    if isinstance(value, bool):
        raise ValueError("seed must be an integer or a hex string")
    if isinstance(value, int):
        if value < 0:
            raise ValueError("seed must be non-negative")
        return value
    text = str(value).strip().lower()
    if text.startswith("0x"):
        text = text[2:]
    if not text:
        raise ValueError("empty seed")
    return int(text, 16)


def env_seed() -> Optional[int]:
    raw = os.getenv("AMD_SEED")
    return parse_seed(raw) if raw else None


def env_threads() -> Optional[int]:
    raw = os.getenv("AMD_THREADS")
    return int(raw) if raw else None


def env_out_dir() -> str:
    return os.getenv("AMD_OUT_DIR", "results")


# ==================== CONFIG SCHEMA ====================

ComplexEntry = List[float]          # [re, im]
OperatorRows = List[List[ComplexEntry]]


class SystemSpec(BaseModel):
    """Either a registered preset or an inline Hamiltonian + dissipator list."""
    model_config = ConfigDict(extra="forbid")

    preset: Optional[str] = None
    hamiltonian: Optional[OperatorRows] = None
    dissipators: List[OperatorRows] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_source(self):
        if self.preset is None and self.hamiltonian is None:
            raise ValueError("system needs either 'preset' or 'hamiltonian'")
        if self.preset is not None:
            from services.presets import PRESETS
            if self.preset not in PRESETS:
                listing = ", ".join(sorted(PRESETS))
                raise ValueError(f"unknown preset '{self.preset}' (available: {listing})")
        return self


class Parameters(BaseModel):
    model_config = ConfigDict(extra="forbid")

    omega: Optional[float] = None
    gamma_plus: Optional[float] = None
    gamma_minus: Optional[float] = None
    gamma: Optional[float] = None
    a: Optional[float] = None
    b: Optional[float] = None
    g: Optional[float] = None
    theta: Optional[float] = None
    T: List[float] = Field(default_factory=lambda: [200.0])
    N: int = 2000
    steps: Optional[int] = None
    s_points: int = DEFAULT_S_POINTS
    seed: Union[int, str] = DEFAULT_SEED
    v: Optional[List[str]] = None
    block: int = 0
    start_mixed: bool = False
    method: Literal["propagate", "transport"] = "propagate"
    threads: Optional[int] = None

    @field_validator("omega", "g", "theta", "a", "b")
    @classmethod
    def finite(cls, value):
        if value is not None and not math.isfinite(value):
            raise ValueError("must be finite")
        return value

    @field_validator("gamma_plus", "gamma_minus", "gamma")
    @classmethod
    def positive_rate(cls, value):
        if value is not None and not (math.isfinite(value) and value > 0):
            raise ValueError("rates must be positive")
        return value

    @field_validator("T")
    @classmethod
    def increasing_times(cls, values):
        if not values:
            raise ValueError("T list is empty")
        if any(not (math.isfinite(t) and t > 0) for t in values):
            raise ValueError("T values must be positive")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("T values must be strictly increasing")
        return values

    @field_validator("seed")
    @classmethod
    def valid_seed(cls, value):
        return parse_seed(value)

    @field_validator("s_points")
    @classmethod
    def enough_points(cls, value):
        if value < MIN_S_POINTS:
            raise ValueError(f"s_points must be at least {MIN_S_POINTS}")
        return value

    @field_validator("N", "steps", "threads")
    @classmethod
    def positive_count(cls, value):
        if value is not None and value < 1:
            raise ValueError("must be a positive integer")
        return value


class Outputs(BaseModel):
    model_config = ConfigDict(extra="forbid")

    out_dir: str = Field(default_factory=env_out_dir)
    plot: bool = False
    xlsx: bool = False


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: int = CONFIG_SCHEMA_VERSION
    experiment: Literal["decompose", "gaps", "veff", "evolve", "scan", "holonomy"]
    system: SystemSpec
    parameters: Parameters = Field(default_factory=Parameters)
    outputs: Outputs = Field(default_factory=Outputs)

    @field_validator("schema_version")
    @classmethod
    def known_version(cls, value):
        if value != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {value} (expected {CONFIG_SCHEMA_VERSION})")
        return value
