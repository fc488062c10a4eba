# services/errors.py
from typing import List, Optional


class ShockLabError(Exception):
    """Base class for every failure the laboratory reports to the caller."""

    exit_code = 1


class GasDomainError(ShockLabError, ValueError):
    """Invalid thermodynamic input: gamma <= 1, vacuum violation, degenerate angle."""

    exit_code = 2


class ConfigError(ShockLabError, ValueError):
    exit_code = 2


class GridTooCoarseError(ShockLabError, ValueError):
    exit_code = 2


class NotTransonicError(ShockLabError):
    """Wedge angle outside the weak transonic window."""

    exit_code = 4

    def __init__(self, message: str, side: str = "sonic"):
        super().__init__(message)
        self.side = side


class DetachedError(NotTransonicError):
    """No attached plane shock exists for this wedge angle."""

    exit_code = 3

    def __init__(self, message: str):
        super().__init__(message, side="detached")


class NotSubsonicError(ShockLabError):
    exit_code = 4


class NotWeakTransonicError(ShockLabError):
    """A sign condition of the stability certificate failed."""

    exit_code = 4

    def __init__(self, message: str, condition: Optional[str] = None):
        super().__init__(message)
        self.condition = condition


class TransformSingularError(ShockLabError):
    exit_code = 7


class SolverFailedError(ShockLabError):
    exit_code = 6

    def __init__(self, message: str, residual_history: Optional[List[float]] = None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class ShockUpdateFailedError(ShockLabError):
    exit_code = 6


class NotContractingError(ShockLabError):
    exit_code = 5

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = history
