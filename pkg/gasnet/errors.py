"""Exception types raised by the simulator."""


class GasnetError(Exception):
    """Base class for all simulator errors."""


class DomainError(GasnetError, ValueError):
    """Argument outside the admissible range of a pressure law or special function."""


class StateError(GasnetError, ValueError):
    """Nonphysical pipe state (nonpositive pressure, non-finite entries, wrong shape)."""


class AssemblyError(GasnetError):
    """Network cannot be turned into a consistent differential-algebraic system."""


class NewtonDiverged(GasnetError):
    """Newton iteration did not reach the requested tolerance."""

    def __init__(self, message: str, iterations: int = 0, residual: float = float("nan")):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class CFLViolation(GasnetError):
    """Explicit step larger than the CFL bound."""

    def __init__(self, dt: float, dt_cfl: float):
        super().__init__(f"dt={dt:.6g} s exceeds CFL bound {dt_cfl:.6g} s")
        self.dt = dt
        self.dt_cfl = dt_cfl


class IntegrationAborted(GasnetError):
    """Step size fell below dt_min while retrying failed steps."""


class ScenarioError(GasnetError, ValueError):
    """Network or scenario input could not be parsed or is semantically invalid."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field {field}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.field = field
