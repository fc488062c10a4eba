# services/gas.py
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

import numpy as np

from services.errors import GasDomainError

ArrayLike = Union[float, Sequence[float], np.ndarray]

# relative band around c* that counts as sonic
SONIC_RTOL = 1e-12


class FlowRegime(str, Enum):
    SUPERSONIC = "supersonic"
    SUBSONIC = "subsonic"
    SONIC = "sonic"


@dataclass(frozen=True)
class VelocityState:
    """Velocity (u1, u2, u3) in Bernoulli units (stagnation density 1)."""

    u1: float
    u2: float
    u3: float

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.u1, self.u2, self.u3], dtype=float)

    @property
    def speed_sq(self) -> float:
        return float(self.u1 ** 2 + self.u2 ** 2 + self.u3 ** 2)

    @classmethod
    def from_vector(cls, u: ArrayLike) -> "VelocityState":
        u = np.asarray(u, dtype=float)
        return cls(float(u[0]), float(u[1]), float(u[2]))


def as_vector(U: Union[VelocityState, ArrayLike]) -> np.ndarray:
    if isinstance(U, VelocityState):
        return U.vector
    return np.asarray(U, dtype=float)


@dataclass(frozen=True)
class GasModel:
    """Polytropic gas closed by the Bernoulli law: rho = (1 - (gamma-1) q^2 / 2)^(1/(gamma-1))."""

    gamma: float = 1.4

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma <= 1.0:
            raise GasDomainError(f"Adiabatic exponent must satisfy gamma > 1, got {self.gamma}")

    @property
    def vacuum_speed_sq(self) -> float:
        return 2.0 / (self.gamma - 1.0)

    def _check_q2(self, q2: ArrayLike) -> np.ndarray:
        q2 = np.asarray(q2, dtype=float)
        bound = self.vacuum_speed_sq
        # small slack so the vacuum limit itself stays evaluable
        if np.any(q2 < 0.0) or np.any(q2 > bound * (1.0 + 1e-14)):
            raise GasDomainError(
                f"Squared speed outside [0, {bound:.6g}] (max {np.max(q2):.6g}, min {np.min(q2):.6g})"
            )
        return q2

    def sonic_speed_sq(self, q2: ArrayLike) -> Union[float, np.ndarray]:
        q2 = self._check_q2(q2)
        c2 = np.maximum(1.0 - 0.5 * (self.gamma - 1.0) * q2, 0.0)
        return float(c2) if c2.ndim == 0 else c2

    def density(self, q2: ArrayLike) -> Union[float, np.ndarray]:
        c2 = np.asarray(self.sonic_speed_sq(q2))
        rho = c2 ** (1.0 / (self.gamma - 1.0))
        return float(rho) if rho.ndim == 0 else rho

    def density_derivative(self, q2: ArrayLike) -> Union[float, np.ndarray]:
        """d rho / d(q^2) = -rho / (2 c^2)."""
        c2 = np.asarray(self.sonic_speed_sq(q2))
        if np.any(c2 <= 0.0):
            raise GasDomainError("Density derivative is unbounded at the vacuum limit")
        drho = -0.5 * c2 ** (1.0 / (self.gamma - 1.0) - 1.0)
        return float(drho) if drho.ndim == 0 else drho

    def critical_speed(self) -> float:
        return float(np.sqrt(2.0 / (self.gamma + 1.0)))

    def coefficients(self, U: Union[VelocityState, ArrayLike]) -> np.ndarray:
        """a_ij = c^2 delta_ij - u_i u_j; accepts (..., 3) arrays of velocities."""
        u = as_vector(U)
        q2 = np.sum(u * u, axis=-1)
        c2 = np.asarray(self.sonic_speed_sq(q2))
        a = -u[..., :, None] * u[..., None, :]
        a = a + c2[..., None, None] * np.eye(3)
        return a

    def classify(self, U: Union[VelocityState, ArrayLike]) -> FlowRegime:
        u = as_vector(U)
        speed = float(np.sqrt(np.dot(u, u)))
        c_star = self.critical_speed()
        if abs(speed - c_star) <= SONIC_RTOL * c_star:
            return FlowRegime.SONIC
        return FlowRegime.SUPERSONIC if speed > c_star else FlowRegime.SUBSONIC

    def is_supersonic(self, U: Union[VelocityState, ArrayLike]) -> bool:
        return self.classify(U) is FlowRegime.SUPERSONIC

    def is_subsonic(self, U: Union[VelocityState, ArrayLike]) -> bool:
        return self.classify(U) is FlowRegime.SUBSONIC


def density(model: GasModel, q2: ArrayLike):
    return model.density(q2)


def sonic_speed_sq(model: GasModel, q2: ArrayLike):
    return model.sonic_speed_sq(q2)


def critical_speed(model: GasModel) -> float:
    return model.critical_speed()


def coefficients(model: GasModel, U) -> np.ndarray:
    return model.coefficients(U)


def classify(model: GasModel, U) -> FlowRegime:
    return model.classify(U)
