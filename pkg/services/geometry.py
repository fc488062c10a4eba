# services/geometry.py
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline

from services.errors import TransformSingularError
from services.norms import GridField, WeightSpec, weighted_norm

GAUSS_ORDER = 32
NEWTON_MAX_ITER = 50
NEWTON_TOL = 1e-14
SINGULAR_FLOOR = 0.5


def bump_profile(s, nu: int = 0) -> np.ndarray:
    """phi(s) = (1 - s^2)^4 on |s| < 1 (C^3), and its first two derivatives."""
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1.0
    p = np.where(inside, 1.0 - s * s, 0.0)
    if nu == 0:
        return p ** 4
    if nu == 1:
        return -8.0 * s * p ** 3
    if nu == 2:
        return -8.0 * p ** 3 + 48.0 * s * s * p ** 2
    raise ValueError(f"bump_profile supports nu <= 2, got {nu}")


@dataclass(frozen=True)
class Bump:
    """amplitude * phi((x1 - center1)/width1) * phi((x3 - center3)/width3); a None width means invariant."""

    amplitude: float
    center1: float = 0.0
    width1: Optional[float] = None
    center3: float = 0.0
    width3: Optional[float] = None

    def _factor(self, x, center, width, nu):
        if width is None:
            return np.ones_like(x) if nu == 0 else np.zeros_like(x)
        return bump_profile((x - center) / width, nu) / width ** nu

    def __call__(self, x1, x3, d1: int = 0, d3: int = 0) -> np.ndarray:
        x1 = np.asarray(x1, dtype=float)
        x3 = np.asarray(x3, dtype=float)
        return (self.amplitude * self._factor(x1, self.center1, self.width1, d1)
                * self._factor(x3, self.center3, self.width3, d3))


@dataclass(frozen=True)
class BumpSum:
    bumps: Tuple[Bump, ...] = ()

    def __call__(self, x1, x3, d1: int = 0, d3: int = 0) -> np.ndarray:
        x1, x3 = np.broadcast_arrays(np.asarray(x1, dtype=float), np.asarray(x3, dtype=float))
        total = np.zeros(x1.shape)
        for bump in self.bumps:
            total = total + bump(x1, x3, d1, d3)
        return total

    @property
    def is_zero(self) -> bool:
        return all(b.amplitude == 0.0 for b in self.bumps)

    @property
    def is_x3_invariant(self) -> bool:
        return all(b.width3 is None for b in self.bumps)

    def scaled(self, factor: float) -> "BumpSum":
        return BumpSum(tuple(replace(b, amplitude=b.amplitude * factor) for b in self.bumps))


@dataclass(frozen=True)
class WedgeGeometry:
    """Wedge surface x2 = w(x1, x3) and edge curve x1 = e1(x3), x2 = e2(x3) = w(e1(x3), x3)."""

    w: BumpSum = field(default_factory=BumpSum)
    e1: BumpSum = field(default_factory=BumpSum)

    @classmethod
    def from_bumps(cls, w_bumps: Sequence[Bump] = (), e1_bumps: Sequence[Bump] = ()) -> "WedgeGeometry":
        for b in e1_bumps:
            if b.width1 is not None:
                raise ValueError("Edge bumps depend on x3 only; width1 must be None")
        return cls(BumpSum(tuple(w_bumps)), BumpSum(tuple(e1_bumps)))

    def height(self, x1, x3, d1: int = 0, d3: int = 0) -> np.ndarray:
        return self.w(x1, x3, d1, d3)

    def edge(self, x3, nu: int = 0) -> np.ndarray:
        x3 = np.asarray(x3, dtype=float)
        return self.e1(np.zeros_like(x3), x3, 0, nu)

    def edge_point(self, x3) -> np.ndarray:
        x3 = np.asarray(x3, dtype=float)
        e1 = self.edge(x3)
        return np.stack([e1, self.height(e1, x3), x3], axis=-1)

    @property
    def is_flat(self) -> bool:
        return self.w.is_zero and self.e1.is_zero

    @property
    def is_planar(self) -> bool:
        return self.w.is_x3_invariant and self.e1.is_x3_invariant

    @property
    def amplitude(self) -> float:
        """Sum of |amplitude| over all bumps: a crude size of the perturbation."""
        return float(sum(abs(b.amplitude) for b in self.w.bumps + self.e1.bumps))

    def sup_norms(self, x1_range=(-4.0, 4.0), x3_range=(-4.0, 4.0), n: int = 201) -> dict:
        x1, x3 = np.meshgrid(np.linspace(*x1_range, n), np.linspace(*x3_range, n), indexing="ij")
        z = np.linspace(*x3_range, n)
        return {
            "w": float(np.max(np.abs(self.height(x1, x3)))),
            "w_x1": float(np.max(np.abs(self.height(x1, x3, d1=1)))),
            "w_x3": float(np.max(np.abs(self.height(x1, x3, d3=1)))),
            "e1": float(np.max(np.abs(self.edge(z)))),
            "e1_x3": float(np.max(np.abs(self.edge(z, 1)))),
        }

    def scaled(self, factor: float) -> "WedgeGeometry":
        return WedgeGeometry(self.w.scaled(factor), self.e1.scaled(factor))


def cutoff(t, nu: int = 0) -> np.ndarray:
    """Quintic smoothstep: 1 on [-1, 1], 0 outside [-2, 2]."""
    t = np.asarray(t, dtype=float)
    u = np.clip(2.0 - np.abs(t), 0.0, 1.0)
    if nu == 0:
        return u ** 3 * (6.0 * u * u - 15.0 * u + 10.0)
    if nu == 1:
        return -np.sign(t) * 30.0 * u * u * (u - 1.0) ** 2
    if nu == 2:
        return 120.0 * u ** 3 - 180.0 * u ** 2 + 60.0 * u
    raise ValueError(f"cutoff supports nu <= 2, got {nu}")


def _mollifier_weights(order: int = GAUSS_ORDER) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    kernel = np.exp(-1.0 / (1.0 - nodes * nodes))
    w = weights * kernel
    return nodes, w / np.sum(w)


MOLLIFIER_NODES, MOLLIFIER_WEIGHTS = _mollifier_weights()


class ShockPerturbation:
    """delta_s_hat(y2, y3) = e1(y3) + r(y2, y3), with r sampled on a grid and r(0, .) = 0."""

    def __init__(self, sigma: float, y2_nodes, remainder, y3_nodes=None,
                 edge: Optional[BumpSum] = None, period: Optional[float] = None):
        self.sigma = float(sigma)
        self.edge = edge if edge is not None else BumpSum()
        self.y2_nodes = np.asarray(y2_nodes, dtype=float)
        self.y3_nodes = None if y3_nodes is None else np.asarray(y3_nodes, dtype=float)
        self.period = period
        if self.y2_nodes[0] != 0.0:
            raise ValueError("Shock samples must start at y2 = 0")
        remainder = np.array(remainder, dtype=float)
        remainder[0, ...] = 0.0
        self.remainder = remainder

        if self.y3_nodes is None:
            self._spline = CubicSpline(self.y2_nodes, remainder)
        else:
            z, values = self.y3_nodes, remainder
            if period is not None and z[-1] < z[0] + period - 1e-12:
                z = np.append(z, z[0] + period)
                values = np.concatenate([values, values[:, :1]], axis=1)
            self._z_range = (z[0], z[-1])
            self._spline = RectBivariateSpline(self.y2_nodes, z, values, kx=3, ky=3, s=0)

    @classmethod
    def zero(cls, sigma: float, y2_nodes, y3_nodes=None, edge: Optional[BumpSum] = None,
             period: Optional[float] = None) -> "ShockPerturbation":
        shape = (len(y2_nodes),) if y3_nodes is None else (len(y2_nodes), len(y3_nodes))
        return cls(sigma, y2_nodes, np.zeros(shape), y3_nodes, edge, period)

    @classmethod
    def from_values(cls, sigma: float, y2_nodes, values, y3_nodes=None, edge: Optional[BumpSum] = None,
                    period: Optional[float] = None) -> "ShockPerturbation":
        """Build from full samples delta_s_hat; the y2 = 0 row is replaced by the edge curve."""
        values = np.asarray(values, dtype=float)
        edge = edge if edge is not None else BumpSum()
        z = np.zeros(1) if y3_nodes is None else np.asarray(y3_nodes, dtype=float)
        e1 = edge(np.zeros_like(z), z)
        remainder = values - (e1[0] if y3_nodes is None else e1[None, :])
        return cls(sigma, y2_nodes, remainder, y3_nodes, edge, period)

    @property
    def planar(self) -> bool:
        return self.y3_nodes is None

    def node_values(self) -> np.ndarray:
        if self.planar:
            return self.remainder + self.edge(0.0, 0.0)
        e1 = self.edge(np.zeros_like(self.y3_nodes), self.y3_nodes)
        return self.remainder + e1[None, :]

    def _wrap(self, y3):
        if self.period is None:
            return y3, np.ones_like(y3, dtype=bool)
        lo = self._z_range[0]
        return lo + np.mod(y3 - lo, self.period), np.ones_like(y3, dtype=bool)

    def __call__(self, y2, y3, d2: int = 0, d3: int = 0) -> np.ndarray:
        y2, y3 = np.broadcast_arrays(np.asarray(y2, dtype=float), np.asarray(y3, dtype=float))
        edge_part = self.edge(np.zeros_like(y3), y3, 0, d3) if d2 == 0 else np.zeros(y2.shape)

        y2c = np.clip(y2, self.y2_nodes[0], self.y2_nodes[-1])
        inside2 = (y2 >= self.y2_nodes[0]) & (y2 <= self.y2_nodes[-1])
        if self.planar:
            if d3 > 0:
                return edge_part
            rem = self._spline(y2c, d2) if d2 > 0 else self._spline(y2c)
            if d2 > 0:
                rem = np.where(inside2, rem, 0.0)
            return edge_part + rem

        if self.period is None:
            y3c = np.clip(y3, self._z_range[0], self._z_range[1])
            inside3 = (y3 >= self._z_range[0]) & (y3 <= self._z_range[1])
        else:
            y3c, inside3 = self._wrap(y3)
        rem = self._spline.ev(y2c.ravel(), y3c.ravel(), dx=d2, dy=d3).reshape(y2.shape)
        if d2 > 0:
            rem = np.where(inside2, rem, 0.0)
        if d3 > 0:
            rem = np.where(inside3, rem, 0.0)
        return edge_part + rem

    def extension(self, y, order: int = 0):
        """Mollified extension delta_s_bar(y) and, for order >= 1/2, its gradient and Hessian."""
        y = np.asarray(y, dtype=float)
        y1, y2, y3 = y[..., 0], y[..., 1], y[..., 2]
        s = self.sigma * y1 - y2
        eta = cutoff(s)
        t = MOLLIFIER_NODES
        W = MOLLIFIER_WEIGHTS
        y2k = y2[..., None] * np.ones_like(t)
        zk = y3[..., None] + t * s[..., None]

        g = self(y2k, zk)
        integral = np.sum(W * g, axis=-1)
        value = eta * integral
        if order == 0:
            return value

        ds = np.array([self.sigma, -1.0, 0.0])
        e2 = np.array([0.0, 1.0, 0.0])
        dz = np.stack([t * self.sigma, -t, np.ones_like(t)], axis=-1)  # (K, 3)
        g2 = self(y2k, zk, d2=1)
        g3 = self(y2k, zk, d3=1)
        grad_I = np.sum(W * g2, axis=-1)[..., None] * e2 + np.einsum("k,...k,kj->...j", W, g3, dz)
        deta = cutoff(s, 1)
        grad = deta[..., None] * integral[..., None] * ds + eta[..., None] * grad_I
        if order == 1:
            return value, grad

        g22 = self(y2k, zk, d2=2)
        g23 = self(y2k, zk, d2=1, d3=1)
        g33 = self(y2k, zk, d3=2)
        E22 = np.outer(e2, e2)
        cross = np.einsum("i,kj->kij", e2, dz)
        cross = cross + np.transpose(cross, (0, 2, 1))
        outer_dz = np.einsum("ki,kj->kij", dz, dz)
        hess_I = (np.sum(W * g22, axis=-1)[..., None, None] * E22
                  + np.einsum("k,...k,kij->...ij", W, g23, cross)
                  + np.einsum("k,...k,kij->...ij", W, g33, outer_dz))
        d2eta = cutoff(s, 2)
        outer_ds = np.outer(ds, ds)
        hess = (d2eta[..., None, None] * integral[..., None, None] * outer_ds
                + deta[..., None, None] * (ds[:, None] * grad_I[..., None, :] + grad_I[..., :, None] * ds[None, :])
                + eta[..., None, None] * hess_I)
        return value, grad, hess


def mollify_extend(sp: ShockPerturbation):
    """delta_s_bar as a callable on the quadrant y1 > 0, y2 > 0."""
    return lambda y, order=0: sp.extension(y, order)


class CoordinateTransform:
    """x -> y: y2 = x2 - w(x1, x3), y3 = x3, x1 = y1 + delta_s_bar(y)."""

    def __init__(self, wedge: WedgeGeometry, shock: ShockPerturbation):
        self.wedge = wedge
        self.shock = shock
        self.extend = mollify_extend(shock)
        self.logger = logging.getLogger(__name__)

    def inverse(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        x1 = y[..., 0] + self.extend(y)
        x2 = y[..., 1] + self.wedge.height(x1, y[..., 2])
        return np.stack([x1, x2, y[..., 2]], axis=-1)

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x1, x3 = x[..., 0], x[..., 2]
        y2 = x[..., 1] - self.wedge.height(x1, x3)
        y1 = np.array(x1, dtype=float, copy=True)

        def residual(y1_):
            return y1_ + self.extend(np.stack([y1_, y2, x3], axis=-1)) - x1

        res = residual(y1)
        for _ in range(NEWTON_MAX_ITER):
            if np.all(np.abs(res) <= NEWTON_TOL * (1.0 + np.abs(x1))):
                return np.stack([y1, y2, x3], axis=-1)
            _, grad = self.extend(np.stack([y1, y2, x3], axis=-1), order=1)
            slope = 1.0 + grad[..., 0]
            if np.any(slope <= 0.0):
                raise TransformSingularError("Newton slope 1 + d(delta_s_bar)/dy1 is not positive")
            step = -res / slope
            damping = np.ones_like(y1)
            trial = y1 + step
            trial_res = residual(trial)
            for _ in range(30):
                worse = np.abs(trial_res) > np.abs(res)
                if not np.any(worse):
                    break
                damping = np.where(worse, 0.5 * damping, damping)
                trial = y1 + damping * step
                trial_res = residual(trial)
            if np.any(damping < 1.0):
                self.logger.debug(f"Damped inversion step, smallest factor {np.min(damping):.3g}")
            y1, res = trial, trial_res
        raise TransformSingularError(
            f"Transform inversion did not converge in {NEWTON_MAX_ITER} iterations "
            f"(max residual {np.max(np.abs(res)):.3e}); perturbation too large"
        )

    def jacobian(self, y, second: bool = True):
        """J[..., i, j] = dy_i/dx_j and Y2[..., i, k, m] = d^2 y_i / dx_k dx_m."""
        y = np.asarray(y, dtype=float)
        _, D, HD = self.extend(y, order=2)
        x1 = y[..., 0] + self.extend(y)
        x3 = y[..., 2]
        den = 1.0 + D[..., 0]
        if np.any(den <= SINGULAR_FLOOR):
            raise TransformSingularError(
                f"1 + d(delta_s_bar)/dy1 = {np.min(den):.3f} <= {SINGULAR_FLOOR}; perturbation too large"
            )
        w1 = self.wedge.height(x1, x3, d1=1)
        w3 = self.wedge.height(x1, x3, d3=1)
        zeros = np.zeros_like(den)
        ones = np.ones_like(den)
        J = np.stack([
            np.stack([(1.0 + D[..., 1] * w1) / den, -D[..., 1] / den, (D[..., 1] * w3 - D[..., 2]) / den], -1),
            np.stack([-w1, ones, -w3], -1),
            np.stack([zeros, zeros, ones], -1),
        ], axis=-2)
        if not second:
            return J

        w_hess = np.zeros(y.shape[:-1] + (3, 3))
        w_hess[..., 0, 0] = self.wedge.height(x1, x3, d1=2)
        w_hess[..., 0, 2] = w_hess[..., 2, 0] = self.wedge.height(x1, x3, d1=1, d3=1)
        w_hess[..., 2, 2] = self.wedge.height(x1, x3, d3=2)
        T = np.einsum("...ak,...ab,...bm->...km", J, HD, J)
        Y2 = np.zeros(y.shape[:-1] + (3, 3, 3))
        Y2[..., 1, :, :] = -w_hess
        Y2[..., 0, :, :] = (D[..., 1, None, None] * w_hess - T) / den[..., None, None]
        return J, Y2

    def determinant(self, y) -> np.ndarray:
        return np.linalg.det(self.jacobian(y, second=False))


def forward(x, wedge: WedgeGeometry, sp: ShockPerturbation) -> np.ndarray:
    return CoordinateTransform(wedge, sp).forward(x)


def jacobian(y, wedge: WedgeGeometry, sp: ShockPerturbation, second: bool = True):
    return CoordinateTransform(wedge, sp).jacobian(y, second)


def measure_extension_constant(sp: ShockPerturbation, spec: WeightSpec, n1: int = 41, n2: int = 41,
                               extent: float = 3.0) -> dict:
    """Ratio of the weighted norm of delta_s_bar on a quadrant patch to that of delta_s_hat on the shock plane."""
    if not sp.planar:
        raise ValueError("Extension constant is measured on the y3-invariant family")
    y1 = np.linspace(0.0, extent, n1)
    y2 = np.linspace(0.0, extent, n2)
    Y1, Y2 = np.meshgrid(y1, y2, indexing="ij")
    pts = np.stack([Y1, Y2, np.zeros_like(Y1)], axis=-1)
    bar = GridField(values=sp.extension(pts), axes=(y1, y2), coords=np.stack([Y1, Y2], axis=-1),
                    name="delta_s_bar")
    hat = GridField(values=sp(y2, np.zeros_like(y2)), axes=(y2,), coords=y2[:, None], name="delta_s_hat")
    bar_report = weighted_norm(bar, replace(spec, edge_axes=(0, 1), far_axes=(0, 1)))
    hat_report = weighted_norm(hat, replace(spec, edge_axes=(0,), far_axes=(0,)))
    ratio = bar_report.total / hat_report.total if hat_report.total > 0 else 0.0
    return {"extension_norm": bar_report.total, "shock_norm": hat_report.total, "constant": float(ratio)}
