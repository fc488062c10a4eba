# services/stability.py
import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from services.errors import NotSubsonicError, NotWeakTransonicError
from services.gas import GasModel, as_vector
from services.polar import BackgroundSolution

ALPHA_GRID = tuple(np.round(np.arange(0.05, 0.5001, 0.05), 2))
BETA_GRID = ALPHA_GRID
TAU_GRID = (0.01, 0.02, 0.05)
THETA_SAMPLES = 2001


def ellipticity(gas: GasModel, U_plus) -> float:
    """lambda = min(smallest eigenvalue, 1 / largest eigenvalue) of a_ij(U+)."""
    if not gas.is_subsonic(U_plus):
        raise NotSubsonicError(f"State {as_vector(U_plus)} is not strictly subsonic")
    eigenvalues = np.linalg.eigvalsh(gas.coefficients(U_plus))
    return float(min(eigenvalues[0], 1.0 / eigenvalues[-1]))


def obliqueness_mu(gas: GasModel, U_minus, U_plus) -> np.ndarray:
    """Gradient of H(u, v) in v, evaluated at (U-, U+)."""
    u = as_vector(U_minus)
    v = as_vector(U_plus)
    rho_u = gas.density(float(u @ u))
    rho_v = gas.density(float(v @ v))
    drho_v = gas.density_derivative(float(v @ v))
    return -2.0 * drho_v * v * float(v @ (u - v)) - rho_v * (u - v) - (rho_u * u - rho_v * v)


@dataclass(frozen=True)
class SectorGeometry:
    """Wedge-shock sector in the scaled plane (d1 y1, d2 y2)."""

    omega_bar: float
    phi_cap: float
    mu_bar_norm: float
    d1: float
    d2: float

    @property
    def corner_exponent(self) -> float:
        """Largest l for which r^l sin(l theta + pi/2) meets the shock condition."""
        return 1.0 + (0.5 * np.pi - self.phi_cap) / self.omega_bar


@dataclass(frozen=True)
class BarrierSpec:
    """Comparison function v* = scale * r^l sin(t theta + theta0) in scaled polar coordinates."""

    l: float
    t: float
    theta0: float
    scale: float = 1.0
    role: str = "decay-beta"

    @classmethod
    def decay(cls, beta: float, tau0: float, scale: float = 1.0) -> "BarrierSpec":
        return cls(l=beta, t=beta + tau0, theta0=0.5 * np.pi + tau0, scale=scale, role="decay-beta")

    @classmethod
    def regularity(cls, alpha: float, tau1: float, scale: float = 1.0) -> "BarrierSpec":
        return cls(l=1.0 + alpha, t=1.0 + alpha + tau1, theta0=0.5 * np.pi + tau1, scale=scale,
                   role="regularity-alpha")

    def value(self, rbar, thetabar) -> np.ndarray:
        return self.scale * np.asarray(rbar) ** self.l * np.sin(self.t * np.asarray(thetabar) + self.theta0)

    def laplacian(self, rbar, thetabar) -> np.ndarray:
        """Scaled-plane Laplacian: (l^2 - t^2) r^(l-2) sin(t theta + theta0)."""
        return (self.scale * (self.l ** 2 - self.t ** 2) * np.asarray(rbar) ** (self.l - 2.0)
                * np.sin(self.t * np.asarray(thetabar) + self.theta0))

    def shock_derivative(self, rbar, geometry: SectorGeometry, direct: bool = False) -> np.ndarray:
        """D v* . mu on the shock ray theta = omega_bar."""
        w, phi, t, l, th0 = geometry.omega_bar, geometry.phi_cap, self.t, self.l, self.theta0
        angle = t * w + th0
        if direct:
            bracket = l * np.sin(angle) * np.cos(w - phi) + t * np.cos(angle) * np.sin(phi - w)
        else:
            bracket = (l - t) * np.cos(w - phi) * np.sin(angle) + t * np.sin((t - 1.0) * w + th0 + phi)
        return self.scale * geometry.mu_bar_norm * np.asarray(rbar) ** (l - 1.0) * bracket

    def wedge_derivative(self, rbar, geometry: SectorGeometry) -> np.ndarray:
        """v*_{y2} on the wedge ray theta = 0."""
        return self.scale * geometry.d2 * self.t * np.cos(self.theta0) * np.asarray(rbar) ** (self.l - 1.0)

    def margins(self, geometry: SectorGeometry, n_theta: int = THETA_SAMPLES) -> Dict[str, float]:
        """Supersolution margins at unit radius; every entry must be positive."""
        thetabar = np.linspace(0.0, geometry.omega_bar, n_theta)
        sines = np.sin(self.t * thetabar + self.theta0)
        min_sin = float(np.min(sines))
        return {
            "positivity": min_sin,
            "interior": float((self.t ** 2 - self.l ** 2) * min_sin),
            "wedge": float(-geometry.d2 * self.t * np.cos(self.theta0)),
            "shock": float(self.shock_derivative(1.0, geometry) / self.scale),
        }


@dataclass
class BarrierCheck:
    ok: bool
    margin: float
    failing: Optional[str]
    margins: Dict[str, Dict[str, float]] = field(default_factory=dict)


def verify_barrier_params(geometry: SectorGeometry, alpha: float, beta: float, tau0: float, tau1: float,
                          n_theta: int = THETA_SAMPLES) -> BarrierCheck:
    for name, value in (("alpha", alpha), ("beta", beta)):
        if not 0.0 < value < 1.0:
            return BarrierCheck(False, -np.inf, f"{name} outside (0, 1)")
    if tau0 <= 0.0 or tau1 <= 0.0:
        return BarrierCheck(False, -np.inf, "tau not positive")

    barriers = {
        "v1": BarrierSpec.decay(beta, tau0),
        "v2": BarrierSpec.regularity(alpha, tau1),
    }
    report = {name: b.margins(geometry, n_theta) for name, b in barriers.items()}
    worst_value, failing = np.inf, None
    for name, margins in report.items():
        for condition, value in margins.items():
            if value < worst_value:
                worst_value, failing = value, f"{name}:{condition}"
    ok = bool(worst_value > 0.0)
    return BarrierCheck(ok=ok, margin=float(worst_value), failing=None if ok else failing, margins=report)


def _feasible_slacks(geometry: SectorGeometry, exponents: Sequence[float], taus: Sequence[float],
                     make) -> Dict[float, float]:
    """Smallest admissible tau for each exponent whose barrier has positive margins."""
    feasible = {}
    for exponent, tau in itertools.product(exponents, sorted(taus)):
        if exponent in feasible:
            continue
        margins = make(exponent, tau).margins(geometry)
        if min(margins.values()) > 0.0:
            feasible[exponent] = tau
    return feasible


def select_barrier_params(geometry: SectorGeometry, alphas: Sequence[float] = ALPHA_GRID,
                          betas: Sequence[float] = BETA_GRID,
                          taus: Sequence[float] = TAU_GRID) -> Optional[Tuple[float, float, float, float]]:
    """Largest beta, then largest alpha <= beta (any alpha if none), each with its smallest tau."""
    beta_ok = _feasible_slacks(geometry, betas, taus, BarrierSpec.decay)
    alpha_ok = _feasible_slacks(geometry, alphas, taus, BarrierSpec.regularity)
    if not beta_ok or not alpha_ok:
        return None
    beta = max(beta_ok)
    below = [a for a in alpha_ok if a <= beta]
    alpha = max(below) if below else max(alpha_ok)
    return float(alpha), float(beta), float(beta_ok[beta]), float(alpha_ok[alpha])


@dataclass
class StabilityCertificate:
    lam: float
    mu: np.ndarray
    n_sh: np.ndarray
    omega: float
    omega_bar: float
    phi_cap: float
    d: np.ndarray
    alpha: float
    beta: float
    tau0: float
    tau1: float
    sigma: float
    a0: np.ndarray
    margins: Dict[str, Dict[str, float]]
    corner_exponent: float

    @property
    def geometry(self) -> SectorGeometry:
        return SectorGeometry(
            omega_bar=self.omega_bar,
            phi_cap=self.phi_cap,
            mu_bar_norm=float(np.hypot(self.mu[0] * self.d[0], self.mu[1] * self.d[1])),
            d1=float(self.d[0]),
            d2=float(self.d[1]),
        )

    def to_dict(self) -> Dict:
        return {
            "lambda": self.lam,
            "mu": self.mu.tolist(),
            "n_sh": self.n_sh.tolist(),
            "omega": self.omega,
            "omega_bar": self.omega_bar,
            "phi_cap": self.phi_cap,
            "d": self.d.tolist(),
            "alpha": self.alpha,
            "beta": self.beta,
            "tau0": self.tau0,
            "tau1": self.tau1,
            "sigma": self.sigma,
            "corner_exponent": self.corner_exponent,
            "margins": self.margins,
        }


def sector_geometry(gas: GasModel, bg: BackgroundSolution, mu: Optional[np.ndarray] = None) -> SectorGeometry:
    a0 = gas.coefficients(bg.downstream)
    d = 1.0 / np.sqrt(np.diag(a0))
    if mu is None:
        mu = obliqueness_mu(gas, bg.upstream, bg.downstream)
    mu_bar = np.array([mu[0] * d[0], mu[1] * d[1]])
    return SectorGeometry(
        omega_bar=float(np.arctan2(d[1] * bg.sigma, d[0])),
        phi_cap=float(np.arctan2(mu_bar[1], mu_bar[0])),
        mu_bar_norm=float(np.hypot(*mu_bar)),
        d1=float(d[0]),
        d2=float(d[1]),
    )


def sign_conditions(gas: GasModel, bg: BackgroundSolution) -> Dict[str, bool]:
    """The three obliqueness sign conditions, evaluated without raising."""
    mu = obliqueness_mu(gas, bg.upstream, bg.downstream)
    n_sh = bg.shock_normal
    return {"mu1>0": bool(mu[0] > 0.0), "mu2>0": bool(mu[1] > 0.0), "mu.n_sh>0": bool(mu @ n_sh > 0.0)}


class StabilityAnalyzer:
    def __init__(self, gas: GasModel):
        self.gas = gas
        self.logger = logging.getLogger(__name__)

    def certify(self, bg: BackgroundSolution) -> StabilityCertificate:
        lam = ellipticity(self.gas, bg.downstream)
        mu = obliqueness_mu(self.gas, bg.upstream, bg.downstream)
        n_sh = bg.shock_normal

        for condition, holds in sign_conditions(self.gas, bg).items():
            if not holds:
                raise NotWeakTransonicError(
                    f"Obliqueness condition {condition} fails (mu={mu}, branch={bg.branch})",
                    condition=condition,
                )

        omega = float(np.arctan(bg.sigma))
        geometry = sector_geometry(self.gas, bg, mu)
        for name, angle in (("omega", omega), ("omega_bar", geometry.omega_bar), ("phi", geometry.phi_cap)):
            if not 0.0 < angle < 0.5 * np.pi:
                raise NotWeakTransonicError(f"Angle {name}={angle} outside (0, pi/2)", condition=name)

        chosen = select_barrier_params(geometry)
        if chosen is None:
            raise NotWeakTransonicError("No admissible barrier exponents on the search grid", condition="barrier")
        alpha, beta, tau0, tau1 = chosen
        check = verify_barrier_params(geometry, alpha, beta, tau0, tau1)

        a0 = self.gas.coefficients(bg.downstream)
        cert = StabilityCertificate(
            lam=lam,
            mu=mu,
            n_sh=n_sh,
            omega=omega,
            omega_bar=geometry.omega_bar,
            phi_cap=geometry.phi_cap,
            d=1.0 / np.sqrt(np.diag(a0)),
            alpha=alpha,
            beta=beta,
            tau0=tau0,
            tau1=tau1,
            sigma=bg.sigma,
            a0=a0,
            margins=check.margins,
            corner_exponent=geometry.corner_exponent,
        )
        self.logger.info(
            f"Certified: lambda={lam:.6f}, mu=({mu[0]:.6f}, {mu[1]:.6f}, {mu[2]:.6f}), "
            f"omega_bar={geometry.omega_bar:.6f}, Phi={geometry.phi_cap:.6f}, "
            f"alpha={alpha}, beta={beta}, margin={check.margin:.3e}"
        )
        return cert


def certify(gas: GasModel, bg: BackgroundSolution) -> StabilityCertificate:
    return StabilityAnalyzer(gas).certify(bg)


def identity_residuals(gas: GasModel, bg: BackgroundSolution) -> List[float]:
    """Residuals of the closed forms for mu2 and -mu1 sigma + mu2 at a background pair."""
    mu = obliqueness_mu(gas, bg.upstream, bg.downstream)
    rho_minus, rho_plus = bg.density_jump
    u1, u2 = bg.upstream.u1, bg.upstream.u2
    v1 = bg.u0
    c2_plus = gas.sonic_speed_sq(bg.downstream.speed_sq)
    mu2_closed = -u2 * (rho_minus + rho_plus)
    combo_closed = -(rho_plus / u2) * ((1.0 - v1 ** 2 / c2_plus) * (u1 - v1) ** 2 + u2 ** 2)
    return [abs(mu[1] - mu2_closed), abs(-mu[0] * bg.sigma + mu[1] - combo_closed)]
