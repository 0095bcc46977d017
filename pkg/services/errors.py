"""
Error hierarchy shared by the services and the experiment runner.

Every error carries a human-readable ``detail`` and the process exit code the
runner should return for it, the same way an HTTP exception carries a status.
"""
from typing import Optional


class AmdError(Exception):
    """Base error: detail message plus the exit code of the runner."""

    exit_code = 1

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code

    def __str__(self) -> str:
        return self.detail


# ==================== VALIDATION (exit 2) ====================

class ConfigError(AmdError):
    exit_code = 2


class UnknownPresetError(ConfigError):
    def __init__(self, name: str, available):
        listing = ", ".join(sorted(available))
        super().__init__(f"Unknown preset '{name}'. Available presets: {listing}")
        self.name = name


class DimensionError(AmdError, ValueError):
    exit_code = 2


class OperatorError(AmdError, ValueError):
    """Operator fails its Hermitian/density contract."""
    exit_code = 2


class ParameterError(AmdError, ValueError):
    """Argument outside its allowed range (negative time, s outside [0, 1], ...)."""
    exit_code = 2


# ==================== NUMERICAL DIAGNOSTICS (exit 3) ====================

class NumericalDiagnostic(AmdError):
    exit_code = 3


class StructuralError(NumericalDiagnostic):
    """The generator does not have the block structure the computation assumes."""


class DimensionChangeError(NumericalDiagnostic):
    """Kernel dimension inside a block changed along a curve."""

    def __init__(self, detail: str, s: Optional[float] = None):
        super().__init__(detail)
        self.s = s


class ConvergenceError(NumericalDiagnostic):
    pass


class StepRefusal(NumericalDiagnostic):
    """Too few integration steps for the requested time horizon."""

    def __init__(self, detail: str, required_steps: int):
        super().__init__(detail)
        self.required_steps = required_steps


class RankError(NumericalDiagnostic):
    pass
