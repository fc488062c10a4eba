# services/polar.py
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import optimize

from services.errors import DetachedError, GasDomainError, NotTransonicError
from services.gas import GasModel, VelocityState, as_vector

SCAN_POINTS = 401
ROOT_XTOL = 1e-12
NEWTON_POLISH_STEPS = 3
DETACHMENT_WIDTH = 1e-10
SONIC_XTOL = 1e-13
# smallest wedge angle probed when bracketing the critical angles
THETA_FLOOR = 1e-6
INVARIANT_TOL = 1e-10


def rh_jump(gas: GasModel, u, v) -> np.ndarray:
    """H(u, v) = (rho(|u|^2) u - rho(|v|^2) v) . (u - v), broadcast over the last axis."""
    u = as_vector(u)
    v = as_vector(v)
    rho_u = np.asarray(gas.density(np.sum(u * u, axis=-1)))
    rho_v = np.asarray(gas.density(np.sum(v * v, axis=-1)))
    flux = rho_u[..., None] * u - rho_v[..., None] * v
    value = np.sum(flux * (u - v), axis=-1)
    return float(value) if np.ndim(value) == 0 else value


@dataclass(frozen=True)
class UpstreamSpec:
    q0: float
    theta_i: float
    gas: GasModel = field(default_factory=GasModel)

    def __post_init__(self):
        c_star = self.gas.critical_speed()
        if not self.q0 > c_star:
            raise GasDomainError(f"Upstream speed q0={self.q0} is not supersonic (c*={c_star:.8f})")
        if self.q0 ** 2 >= self.gas.vacuum_speed_sq:
            raise GasDomainError(f"Upstream speed q0={self.q0} exceeds the vacuum bound")
        if not 0.0 < self.theta_i < np.pi or abs(np.sin(self.theta_i)) <= 1e-12:
            raise GasDomainError(
                f"theta_i={self.theta_i} makes the upstream flow parallel to the edge"
            )

    @property
    def normal_speed(self) -> float:
        """q0 sin(theta_i): the part of U0- in the plane normal to the edge."""
        return float(self.q0 * np.sin(self.theta_i))

    @property
    def edge_speed(self) -> float:
        """q0 cos(theta_i): velocity component along the edge, shared by both states."""
        return float(self.q0 * np.cos(self.theta_i))

    def upstream_state(self, theta_w: float) -> VelocityState:
        a = self.normal_speed
        return VelocityState(a * np.cos(theta_w), -a * np.sin(theta_w), self.edge_speed)


@dataclass(frozen=True)
class DownstreamRoots:
    u_strong: float
    u_weak: float
    residual_strong: float
    residual_weak: float
    u_min: float
    f_min: float


@dataclass
class BackgroundSolution:
    gas: GasModel
    upstream: VelocityState
    downstream: VelocityState
    theta_w: float
    theta_i: float
    q0: float
    sigma: float
    u0: float
    phi_minus: np.ndarray
    phi_plus: np.ndarray
    branch: str = "weak"

    def phi0_minus(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.phi_minus

    def phi0_plus(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.phi_plus

    @property
    def shock_normal(self) -> np.ndarray:
        n = np.array([-self.sigma, 1.0, 0.0])
        return n / np.linalg.norm(n)

    @property
    def density_jump(self) -> Tuple[float, float]:
        return (self.gas.density(self.upstream.speed_sq), self.gas.density(self.downstream.speed_sq))


@dataclass
class PolarDiagnostics:
    v_s: float
    v_w: float
    theta_w: float
    theta_w_star: float
    theta_s_star: float
    curve: pd.DataFrame

    def is_concave(self, tol: float = 1e-9) -> bool:
        v2 = self.curve["v2"].to_numpy()
        if not np.all(np.isfinite(v2)):
            return False
        return bool(np.all(np.diff(v2, 2) <= tol))


def _jump_profile(gas: GasModel, m1: float, m2: float, m3: float) -> Tuple[Callable, Callable]:
    """F(u) = H(m, (u, 0, m3)) and its derivative in u."""
    a2 = m1 * m1 + m2 * m2
    rho_m = gas.density(a2 + m3 * m3)

    def F(u):
        rho_p = gas.density(np.asarray(u) ** 2 + m3 * m3)
        return rho_m * a2 - m1 * u * (rho_m + rho_p) + rho_p * u * u

    def dF(u):
        q2 = u * u + m3 * m3
        rho_p = gas.density(q2)
        drho_p = 2.0 * u * gas.density_derivative(q2)
        return -m1 * (rho_m + rho_p) - m1 * u * drho_p + drho_p * u * u + 2.0 * rho_p * u

    return F, dF


def _scan_minimum(F: Callable, hi: float) -> Tuple[float, float]:
    grid = np.linspace(0.0, hi, SCAN_POINTS)
    values = F(grid)
    k = int(np.argmin(values))
    lo_b = grid[max(k - 1, 0)]
    hi_b = grid[min(k + 1, SCAN_POINTS - 1)]
    res = optimize.minimize_scalar(F, bounds=(lo_b, hi_b), method="bounded", options={"xatol": 1e-14})
    if res.fun < values[k]:
        return float(res.x), float(res.fun)
    return float(grid[k]), float(values[k])


def _polished_root(F: Callable, dF: Callable, lo: float, hi: float) -> float:
    u = optimize.bisect(F, lo, hi, xtol=ROOT_XTOL, maxiter=200)
    for _ in range(NEWTON_POLISH_STEPS):
        slope = dF(u)
        if slope == 0.0:
            break
        candidate = u - F(u) / slope
        if lo <= candidate <= hi and abs(F(candidate)) <= abs(F(u)):
            u = candidate
    return float(u)


def solve_downstream_for_state(gas: GasModel, U_minus) -> DownstreamRoots:
    """Both roots u of H(U-, (u, 0, U-_3)) = 0 on (0, U-_1) for an upstream state with U-_2 < 0."""
    m1, m2, m3 = (float(c) for c in as_vector(U_minus))
    if m2 >= 0.0:
        raise GasDomainError(f"Upstream state must point into the wedge (u2 < 0), got u2={m2}")
    if m1 <= 0.0:
        raise DetachedError(f"No attached shock: upstream u1={m1} is not positive")

    F, dF = _jump_profile(gas, m1, m2, m3)
    u_min, f_min = _scan_minimum(F, m1)
    if f_min >= 0.0:
        raise DetachedError(f"No attached plane shock (min of jump profile {f_min:.3e} >= 0)")

    u_strong = _polished_root(F, dF, 0.0, u_min)
    u_weak = _polished_root(F, dF, u_min, m1)
    return DownstreamRoots(
        u_strong=u_strong,
        u_weak=u_weak,
        residual_strong=abs(float(F(u_strong))),
        residual_weak=abs(float(F(u_weak))),
        u_min=u_min,
        f_min=f_min,
    )


def planar_shock_slope(gas: GasModel, U_minus) -> float:
    """Slope x2 / x1 of the weak plane shock attached to a flat wedge behind U-."""
    U = as_vector(U_minus)
    roots = solve_downstream_for_state(gas, U)
    return float((U[0] - roots.u_weak) / (-U[1]))


class ShockPolar:
    """Shock polar of one upstream state: downstream roots, critical angles, backgrounds."""

    def __init__(self, spec: UpstreamSpec):
        self.spec = spec
        self.gas = spec.gas
        self.logger = logging.getLogger(__name__)

    def solve_downstream(self, theta_w: float) -> DownstreamRoots:
        if theta_w <= 0.0:
            raise GasDomainError(f"Wedge angle must be positive, got {theta_w}")
        if theta_w >= 0.5 * np.pi:
            raise DetachedError(f"Wedge angle {theta_w} is not below pi/2")
        return solve_downstream_for_state(self.gas, self.spec.upstream_state(theta_w))

    def _has_roots(self, theta_w: float) -> bool:
        m = self.spec.upstream_state(theta_w)
        F, _ = _jump_profile(self.gas, m.u1, m.u2, m.u3)
        return _scan_minimum(F, m.u1)[1] < 0.0

    def detachment_angle(self) -> float:
        lo, hi = THETA_FLOOR, 0.5 * np.pi - 1e-9
        if not self._has_roots(lo):
            raise DetachedError("No attached shock even for vanishing wedge angle")
        while hi - lo > DETACHMENT_WIDTH:
            mid = 0.5 * (lo + hi)
            if self._has_roots(mid):
                lo = mid
            else:
                hi = mid
        # lower end: roots still exist there
        return lo

    def sonic_angle(self, theta_w_star: Optional[float] = None) -> float:
        if theta_w_star is None:
            theta_w_star = self.detachment_angle()
        c_star = self.gas.critical_speed()
        b = self.spec.edge_speed

        def excess(theta):
            return float(np.hypot(self.solve_downstream(theta).u_weak, b)) - c_star

        if excess(theta_w_star) >= 0.0:
            raise NotTransonicError(
                "Weak downstream state stays supersonic up to detachment; no transonic window",
                side="sonic",
            )
        if excess(THETA_FLOOR) <= 0.0:
            raise NotTransonicError("Weak downstream state is subsonic at vanishing wedge angle")
        return float(optimize.bisect(excess, THETA_FLOOR, theta_w_star, xtol=SONIC_XTOL, maxiter=200))

    def critical_angles(self) -> Dict[str, float]:
        theta_w_star, theta_s_star = _critical_angles_cached(self.spec)
        return {"theta_w_star": theta_w_star, "theta_s_star": theta_s_star}

    def window_midpoint(self) -> float:
        angles = self.critical_angles()
        return 0.5 * (angles["theta_w_star"] + angles["theta_s_star"])

    def background(self, theta_w: float, branch: str = "weak") -> BackgroundSolution:
        if branch not in ("weak", "strong"):
            raise ValueError(f"Unknown branch {branch!r}")
        if theta_w <= 0.0:
            raise GasDomainError(f"Wedge angle must be positive, got {theta_w}")
        angles = self.critical_angles()
        if theta_w > angles["theta_w_star"]:
            raise DetachedError(
                f"theta_w={np.degrees(theta_w):.6f} deg is beyond detachment "
                f"({np.degrees(angles['theta_w_star']):.6f} deg)"
            )
        if branch == "weak" and theta_w <= angles["theta_s_star"]:
            raise NotTransonicError(
                f"theta_w={np.degrees(theta_w):.6f} deg is at or below the sonic angle "
                f"({np.degrees(angles['theta_s_star']):.6f} deg); weak downstream is not subsonic",
                side="sonic",
            )

        roots = self.solve_downstream(theta_w)
        u0 = roots.u_weak if branch == "weak" else roots.u_strong
        upstream = self.spec.upstream_state(theta_w)
        downstream = VelocityState(u0, 0.0, self.spec.edge_speed)
        a = self.spec.normal_speed
        sigma = (a * np.cos(theta_w) - u0) / (a * np.sin(theta_w))

        bg = BackgroundSolution(
            gas=self.gas,
            upstream=upstream,
            downstream=downstream,
            theta_w=float(theta_w),
            theta_i=float(self.spec.theta_i),
            q0=float(self.spec.q0),
            sigma=float(sigma),
            u0=float(u0),
            phi_minus=upstream.vector,
            phi_plus=downstream.vector,
            branch=branch,
        )
        self._verify_background(bg)
        self.logger.debug(f"Background ({branch}) at theta_w={theta_w:.8f}: u0={u0:.12f}, sigma={sigma:.12f}")
        return bg

    def _verify_background(self, bg: BackgroundSolution) -> None:
        residual = abs(rh_jump(self.gas, bg.upstream, bg.downstream))
        if residual > INVARIANT_TOL:
            raise NotTransonicError(f"Jump residual {residual:.3e} exceeds tolerance", side="degenerate")
        rho_minus, rho_plus = bg.density_jump
        if not rho_minus < rho_plus:
            raise NotTransonicError("Entropy condition rho- < rho+ violated", side="degenerate")
        if not bg.sigma > 0.0:
            raise NotTransonicError(f"Shock slope sigma={bg.sigma} is not positive", side="degenerate")
        if not self.gas.is_supersonic(bg.upstream):
            raise NotTransonicError("Upstream state is not supersonic", side="degenerate")
        if not self.gas.is_subsonic(bg.downstream):
            raise NotTransonicError("Downstream state is not subsonic", side="sonic")
        x1 = np.linspace(-1.0, 1.0, 5)
        on_shock = np.stack([x1, bg.sigma * x1, np.linspace(2.0, -2.0, 5)], axis=-1)
        gap = np.max(np.abs(bg.phi0_minus(on_shock) - bg.phi0_plus(on_shock)))
        if gap > INVARIANT_TOL:
            raise NotTransonicError(f"Potentials disagree on the shock plane by {gap:.3e}", side="degenerate")

    def polar_curve(self, n: int = 101, theta_w: Optional[float] = None) -> PolarDiagnostics:
        """Upper polar arc v2(v1) >= 0 between the strong and weak roots."""
        if n < 3:
            raise ValueError(f"polar_curve needs at least 3 samples, got {n}")
        angles = self.critical_angles()
        if theta_w is None:
            theta_w = 0.5 * (angles["theta_w_star"] + angles["theta_s_star"])
        roots = self.solve_downstream(theta_w)
        upstream = self.spec.upstream_state(theta_w).vector
        b = self.spec.edge_speed
        q0 = self.spec.q0

        v1_samples = np.linspace(roots.u_strong, roots.u_weak, n)
        v2_samples = np.zeros(n)
        for k in range(1, n - 1):
            v1 = v1_samples[k]

            def H_of(v2, v1=v1):
                return rh_jump(self.gas, upstream, np.array([v1, v2, b]))

            top = np.sqrt(max(q0 * q0 - v1 * v1 - b * b, 0.0))
            if H_of(0.0) >= 0.0 or H_of(top) <= 0.0:
                self.logger.warning(f"Polar sample v1={v1:.12f} has no bracket; set to NaN")
                v2_samples[k] = np.nan
                continue
            v2_samples[k] = optimize.bisect(H_of, 0.0, top, xtol=1e-14, maxiter=200)

        curve = pd.DataFrame({"v1": v1_samples, "v2": v2_samples})
        return PolarDiagnostics(
            v_s=roots.u_strong,
            v_w=roots.u_weak,
            theta_w=float(theta_w),
            theta_w_star=angles["theta_w_star"],
            theta_s_star=angles["theta_s_star"],
            curve=curve,
        )


@lru_cache(maxsize=64)
def _critical_angles_cached(spec: UpstreamSpec) -> Tuple[float, float]:
    polar = ShockPolar(spec)
    theta_w_star = polar.detachment_angle()
    theta_s_star = polar.sonic_angle(theta_w_star)
    polar.logger.info(
        f"Critical angles for q0={spec.q0}, theta_i={spec.theta_i:.6f}: "
        f"detachment {np.degrees(theta_w_star):.8f} deg, sonic {np.degrees(theta_s_star):.8f} deg"
    )
    return theta_w_star, theta_s_star


def solve_downstream(spec: UpstreamSpec, theta_w: float) -> DownstreamRoots:
    return ShockPolar(spec).solve_downstream(theta_w)


def critical_angles(spec: UpstreamSpec) -> Dict[str, float]:
    return ShockPolar(spec).critical_angles()


def background(spec: UpstreamSpec, theta_w: float, branch: str = "weak") -> BackgroundSolution:
    return ShockPolar(spec).background(theta_w, branch=branch)


def polar_curve(spec: UpstreamSpec, n: int = 101, theta_w: Optional[float] = None) -> PolarDiagnostics:
    return ShockPolar(spec).polar_curve(n, theta_w=theta_w)
