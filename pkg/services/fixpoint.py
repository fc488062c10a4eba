# services/fixpoint.py
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from services.elliptic import EllipticSolver, TruncatedDomain
from services.errors import ConfigError, NotContractingError, ShockUpdateFailedError
from services.gas import GasModel
from services.geometry import CoordinateTransform, ShockPerturbation, WedgeGeometry
from services.norms import GridField, WeightSpec, derivative_tensors, weighted_c1, weighted_norm
from services.polar import BackgroundSolution, rh_jump, solve_downstream_for_state
from services.stability import StabilityCertificate, certify

SHOCK_FP_MAX_ITER = 200
SHOCK_NEWTON_MAX_ITER = 50
SHOCK_TOL = 1e-14
DEFAULT_C0 = 10.0


@dataclass(frozen=True)
class UpstreamFlow:
    """phi-(x) = U- . x + A exp(-|x - c|^2 / w^2); the Gaussian part is optional."""

    velocity: np.ndarray
    bump_amplitude: float = 0.0
    bump_center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    bump_width: float = 1.0

    @classmethod
    def from_background(cls, bg: BackgroundSolution, perturbation=None, bump_amplitude: float = 0.0,
                        bump_center=(0.0, 0.0, 0.0), bump_width: float = 1.0) -> "UpstreamFlow":
        U = bg.upstream.vector.copy()
        if perturbation is not None:
            U = U + np.asarray(perturbation, dtype=float)
        return cls(U, float(bump_amplitude), tuple(float(c) for c in bump_center), float(bump_width))

    @property
    def is_constant(self) -> bool:
        return self.bump_amplitude == 0.0

    def _gauss(self, x):
        d = np.asarray(x, dtype=float) - np.asarray(self.bump_center)
        return d, self.bump_amplitude * np.exp(-np.sum(d * d, axis=-1) / self.bump_width ** 2)

    def potential(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        value = x @ self.velocity
        if self.is_constant:
            return value
        return value + self._gauss(x)[1]

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        grad = np.broadcast_to(self.velocity, x.shape).copy()
        if self.is_constant:
            return grad
        d, g = self._gauss(x)
        return grad - 2.0 * g[..., None] * d / self.bump_width ** 2

    def hessian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        hess = np.zeros(x.shape + (3,))
        if self.is_constant:
            return hess
        d, g = self._gauss(x)
        w2 = self.bump_width ** 2
        return g[..., None, None] * (4.0 * d[..., :, None] * d[..., None, :] / w2 ** 2 - 2.0 * np.eye(3) / w2)

    def pde_residual(self, gas: GasModel, x) -> np.ndarray:
        """sum a_ij(D phi-) phi-_ij; identically zero for the constant family."""
        a = gas.coefficients(self.gradient(x))
        return np.einsum("...ij,...ij->...", a, self.hessian(x))

    def is_supersonic(self, gas: GasModel, x) -> bool:
        speed = np.linalg.norm(self.gradient(x), axis=-1)
        return bool(np.all(speed > gas.critical_speed()))

    def size(self, bg: BackgroundSolution) -> float:
        return float(np.linalg.norm(self.velocity - bg.upstream.vector) + abs(self.bump_amplitude))


@dataclass(frozen=True)
class IterationSettings:
    tol: float = 1e-8
    max_iter: int = 50
    epsilon: float = 1e-3
    c0: Optional[float] = None
    patience: int = 5
    far_field: str = "zero"

    def __post_init__(self):
        if self.far_field not in ("zero", "polar"):
            raise ConfigError(f"far_field must be 'zero' or 'polar', got {self.far_field!r}")
        if self.tol <= 0.0 or self.max_iter < 1 or self.patience < 1:
            raise ConfigError("Iteration tolerance, cap and patience must be positive")


@dataclass(frozen=True)
class IterationState:
    delta_s_hat: ShockPerturbation
    delta_phi: GridField
    domain: TruncatedDomain
    iteration: int = 0
    norms: Dict[str, float] = field(default_factory=dict)
    in_set: Optional[bool] = None

    def shock_field(self) -> GridField:
        """delta_s_hat sampled at its nodes as a field over (y2[, y3])."""
        sp = self.delta_s_hat
        if sp.planar:
            return GridField(values=sp.node_values(), axes=(sp.y2_nodes,), coords=sp.y2_nodes[:, None],
                             name="delta_s_hat", iteration=self.iteration)
        Y2, Y3 = np.meshgrid(sp.y2_nodes, sp.y3_nodes, indexing="ij")
        return GridField(values=sp.node_values(), axes=(sp.y2_nodes, sp.y3_nodes),
                         coords=np.stack([Y2, Y3], axis=-1), name="delta_s_hat", iteration=self.iteration)


@dataclass
class ConvergenceHistory:
    records: List[Dict] = field(default_factory=list)

    def append(self, **record):
        self.records.append(record)

    @property
    def distances(self) -> List[float]:
        return [r["distance"] for r in self.records]

    @property
    def kappas(self) -> List[float]:
        return [r["kappa"] for r in self.records if np.isfinite(r["kappa"])]

    def to_frame(self) -> pd.DataFrame:
        columns = ["iter", "distance", "kappa", "norm_phi", "norm_s", "in_set", "solver", "shock_update"]
        return pd.DataFrame(self.records, columns=columns)


def shock_nodes(dom: TruncatedDomain) -> np.ndarray:
    """y2 of the shock samples: the edge, then the grid's shock ray."""
    y2 = np.exp(dom.s) * np.sin(dom.omega_bar) / dom.T[1, 1]
    return np.concatenate([[0.0], y2])


def node_coordinates(dom: TruncatedDomain) -> np.ndarray:
    """(y1, y2, y3) at every node; y3 = 0 for the planar grid."""
    y = dom.coords()
    if dom.planar:
        y = np.concatenate([y, np.zeros(y.shape[:-1] + (1,))], axis=-1)
    return y


def _y_derivatives(f: GridField) -> Tuple[np.ndarray, np.ndarray]:
    """D_y and D_y^2 of a grid field, padded to three components."""
    _, grad, hess = derivative_tensors(f, 2)
    if f.dim == 3:
        return grad, hess
    shape = f.values.shape
    D = np.zeros(shape + (3,))
    D2 = np.zeros(shape + (3, 3))
    D[..., :2] = grad
    D2[..., :2, :2] = hess
    return D, D2


def _side(array: np.ndarray, j: int) -> np.ndarray:
    return array[:, j, ...]


class FixedPointSolver:
    """The iteration map on (delta_s_hat, delta_phi) and its fixed-point driver."""

    def __init__(self, bg: BackgroundSolution, cert: StabilityCertificate, wedge: WedgeGeometry,
                 upstream: UpstreamFlow, dom: TruncatedDomain, settings: Optional[IterationSettings] = None,
                 **solver_kwargs):
        self.bg = bg
        self.gas = bg.gas
        self.cert = cert
        self.wedge = wedge
        self.upstream = upstream
        self.dom = dom
        self.settings = settings or IterationSettings()
        self.mu = np.asarray(cert.mu, dtype=float)
        self.a0 = np.asarray(cert.a0, dtype=float)
        self.U0_plus = bg.downstream.vector
        self.elliptic = EllipticSolver(self.a0, dom, self.mu, **solver_kwargs)
        self.y = node_coordinates(dom)
        self.y2_nodes = shock_nodes(dom)
        self.norm_spec = WeightSpec(tau=-1.0 - cert.alpha, l=-cert.beta, k=2, alpha=cert.alpha)
        self.c0 = self.settings.c0
        self._pointwise_cache = None
        self.logger = logging.getLogger(__name__)
        if not dom.planar and not wedge.is_planar and not dom.periodic:
            self.logger.info("Compact 3D perturbation on a capped domain")

    # -- states ---------------------------------------------------------

    def _shock(self, values: np.ndarray) -> ShockPerturbation:
        dom = self.dom
        period = dom.z_length if (not dom.planar and dom.periodic) else None
        return ShockPerturbation.from_values(self.bg.sigma, self.y2_nodes, values,
                                             None if dom.planar else dom.z, self.wedge.e1, period)

    def zero_state(self) -> IterationState:
        dom = self.dom
        shape = (len(self.y2_nodes),) if dom.planar else (len(self.y2_nodes), dom.nz)
        e1 = self.wedge.edge(np.zeros(1) if dom.planar else dom.z)
        values = np.zeros(shape)
        values[:] = e1[0] if dom.planar else e1[None, :]
        return self.make_state(self._shock(values), np.zeros(dom.shape))

    def make_state(self, delta_s_hat: ShockPerturbation, phi_values: np.ndarray, iteration: int = 0) -> IterationState:
        phi = self.dom.field(phi_values, name="delta_phi", iteration=iteration)
        state = IterationState(delta_s_hat, phi, self.dom, iteration)
        norms = self.state_norms(state)
        bound = (self.c0 or DEFAULT_C0) * self.settings.epsilon
        in_set = norms["phi"] <= bound and norms["s"] <= bound
        return replace(state, norms=norms, in_set=bool(in_set))

    def random_state(self, scale: float, rng: np.random.Generator, n_modes: int = 3) -> IterationState:
        """Smooth admissible state of size ~scale, for Lipschitz probes."""
        dom = self.dom
        y = self.y
        r = np.linalg.norm(y[..., :2], axis=-1)
        phi = np.zeros(dom.shape)
        for _ in range(n_modes):
            center = rng.uniform(0.5, 3.0) * np.array([1.0, 0.5 * self.bg.sigma])
            width = rng.uniform(0.5, 1.5)
            phi += rng.uniform(-1.0, 1.0) * np.exp(-np.sum((y[..., :2] - center) ** 2, axis=-1) / width ** 2)
        phi *= scale * r ** 2 / (1.0 + r ** 2)
        y2 = self.y2_nodes
        profile = rng.uniform(-1.0, 1.0) * y2 * np.exp(-0.5 * y2 ** 2)
        e1 = self.wedge.edge(np.zeros(1) if dom.planar else dom.z)
        if dom.planar:
            values = e1[0] + scale * profile
        else:
            values = e1[None, :] + scale * profile[:, None] * np.cos(2.0 * np.pi * dom.z / dom.z_length)[None, :]
        return self.make_state(self._shock(values), phi)

    def norm_masks(self) -> Tuple[np.ndarray, np.ndarray]:
        """Nodes entering the norms: the cut layers r_bar < 2 r_in and r_bar > r_out / 2 are left out.

        The shock mask keeps the edge sample and drops the rays beyond r_out / 2.
        """
        dom = self.dom
        r = dom.rbar()
        phi_mask = (r >= 2.0 * dom.r_in) & (r <= 0.5 * dom.r_out)
        rays = np.concatenate([[True], np.exp(dom.s) <= 0.5 * dom.r_out])
        shock_mask = rays if dom.planar else np.repeat(rays[:, None], dom.nz, axis=1)
        return phi_mask, shock_mask

    def state_norms(self, state: IterationState) -> Dict[str, float]:
        phi_mask, shock_mask = self.norm_masks()
        shock_spec = replace(self.norm_spec, edge_axes=(0,), far_axes=(0,))
        return {
            "phi": weighted_norm(state.delta_phi, self.norm_spec, mask=phi_mask).total,
            "s": weighted_norm(state.shock_field(), shock_spec, mask=shock_mask).total,
        }

    def distance(self, a: IterationState, b: IterationState) -> float:
        """Weighted C^1 distance of both components away from the cut layers."""
        tau, l = self.norm_spec.tau, self.norm_spec.l
        phi_mask, shock_mask = self.norm_masks()
        d_phi = weighted_c1(a.delta_phi - b.delta_phi, tau, l, mask=phi_mask)
        d_s = weighted_c1(a.shock_field() - b.shock_field(), tau, l, edge_axes=(0,), far_axes=(0,),
                          mask=shock_mask)
        return float(d_phi + d_s)

    # -- data assembly --------------------------------------------------

    def _pointwise(self, state: IterationState):
        if self._pointwise_cache is not None and self._pointwise_cache[0] is state:
            return self._pointwise_cache[1]
        transform = CoordinateTransform(self.wedge, state.delta_s_hat)
        J, Y2 = transform.jacobian(self.y)
        Dy, D2y = _y_derivatives(state.delta_phi)
        Dx = np.einsum("...ji,...j->...i", J, Dy)
        data = (transform, J, Y2, Dy, D2y, Dx)
        self._pointwise_cache = (state, data)
        return data

    def assemble_interior(self, state: IterationState) -> GridField:
        _, J, Y2, Dy, D2y, Dx = self._pointwise(state)
        a = self.gas.coefficients(Dx + self.U0_plus)
        a_tilde = np.einsum("...ik,...km,...jm->...ij", J, a, J)
        b_tilde = np.einsum("...km,...ikm->...i", a, Y2)
        f = np.einsum("...ij,...ij->...", self.a0 - a_tilde, D2y) - np.einsum("...i,...i->...", b_tilde, Dy)
        return state.delta_phi.with_values(f, name="f", iteration=state.iteration)

    def assemble_wedge(self, state: IterationState) -> np.ndarray:
        """g_w = (delta_phi)_y2 - (D_x delta_phi + U0+) . n on the wedge, n = (-w_x1, 1, -w_x3)."""
        transform, _, _, Dy, _, Dx = self._pointwise(state)
        y = _side(self.y, 0)
        x = transform.inverse(y)
        n = np.stack([-self.wedge.height(x[..., 0], x[..., 2], d1=1), np.ones(x.shape[:-1]),
                      -self.wedge.height(x[..., 0], x[..., 2], d3=1)], axis=-1)
        U = _side(Dx, 0) + self.U0_plus
        return _side(Dy, 0)[..., 1] - np.sum(U * n, axis=-1)

    def assemble_shock(self, state: IterationState) -> np.ndarray:
        """g_s = D_y(delta_phi)(I - J) . mu + D_x(delta_phi) . mu - H(D phi-, D_x delta_phi + U0+)."""
        transform, _, _, Dy, _, Dx = self._pointwise(state)
        y = _side(self.y, -1)
        x = transform.inverse(y)
        Dy_s, Dx_s = _side(Dy, -1), _side(Dx, -1)
        H = rh_jump(self.gas, self.upstream.gradient(x), Dx_s + self.U0_plus)
        # the D_x terms cancel
        return Dy_s @ self.mu - H

    def assemble_edge(self, state: IterationState):
        """g_e(y3) = (phi- - phi0+) at the edge point (e1, w(e1, y3), y3)."""
        z = np.zeros(1) if self.dom.planar else self.dom.z
        x = self.wedge.edge_point(z)
        g = self.upstream.potential(x) - self.bg.phi0_plus(x)
        return float(g[0]) if self.dom.planar else g

    def _far_field(self, state: IterationState) -> Optional[np.ndarray]:
        """Cut values: zero, or the plane shock state of U- attached at the edge on both cuts."""
        if self.settings.far_field == "zero":
            return None
        U_minus = self.upstream.velocity
        roots = solve_downstream_for_state(self.gas, U_minus)
        U_plus = np.array([roots.u_weak, 0.0, U_minus[2]])
        transform = CoordinateTransform(self.wedge, state.delta_s_hat)
        z = np.zeros(1) if self.dom.planar else self.dom.z
        x_edge = self.wedge.edge_point(z)
        g_edge = np.asarray(self.assemble_edge(state))
        values = np.zeros(self.dom.shape)
        for i in (0, -1):
            x = transform.inverse(self.y[i])
            # phi'+ - phi0+ is affine; it takes the edge value g_e on the edge line
            values[i] = g_edge + (x - x_edge) @ (U_plus - self.U0_plus)
        return values

    # -- map --------------------------------------------------------------

    def update_shock(self, phi_shock: np.ndarray) -> Tuple[ShockPerturbation, str]:
        """Solve (phi- - phi0+)(x1, y2 + w(x1, y3), y3) = delta_phi~ on the shock for x1 at every node."""
        dom = self.dom
        y2 = self.y2_nodes[1:]
        z = np.zeros(1) if dom.planar else dom.z
        Y2, Y3 = np.meshgrid(y2, z, indexing="ij")
        rhs = np.asarray(phi_shock, dtype=float).reshape(Y2.shape)
        s0 = Y2 / self.bg.sigma
        denom = self.bg.upstream.u1 - self.bg.u0

        def point(ds):
            x1 = s0 + ds
            return np.stack([x1, Y2 + self.wedge.height(x1, Y3), Y3], axis=-1)

        ds = np.zeros_like(Y2)
        method = "fixed-point"
        converged = False
        for _ in range(SHOCK_FP_MAX_ITER):
            x = point(ds)
            w = self.wedge.height(x[..., 0], Y3)
            new = w / self.bg.sigma + (rhs - (self.upstream.potential(x) - self.bg.phi0_minus(x))) / denom
            step = np.max(np.abs(new - ds))
            ds = new
            if not np.all(np.isfinite(ds)):
                break
            if step <= SHOCK_TOL * (1.0 + np.max(np.abs(ds))):
                converged = True
                break

        if not converged:
            self.logger.warning("Explicit shock update did not settle; switching to Newton")
            ds, method = self._newton_shock(s0, Y2, Y3, rhs), "newton"

        e1 = self.wedge.edge(z)
        values = np.concatenate([e1[None, :], ds], axis=0)
        if dom.planar:
            values = values[:, 0]
        return self._shock(values), method

    def _newton_shock(self, s0, Y2, Y3, rhs) -> np.ndarray:
        ds = np.zeros_like(Y2)

        def residual(ds_):
            x1 = s0 + ds_
            x = np.stack([x1, Y2 + self.wedge.height(x1, Y3), Y3], axis=-1)
            return self.upstream.potential(x) - self.bg.phi0_plus(x) - rhs, x

        res, x = residual(ds)
        for _ in range(SHOCK_NEWTON_MAX_ITER):
            if np.max(np.abs(res)) <= SHOCK_TOL * (1.0 + np.max(np.abs(rhs))):
                return ds
            jump = self.upstream.gradient(x) - self.U0_plus
            slope = jump[..., 0] + jump[..., 1] * self.wedge.height(x[..., 0], Y3, d1=1)
            if np.any(np.abs(slope) < 1e-12):
                break
            step = -res / slope
            damping = np.ones_like(ds)
            trial_res, trial_x = residual(ds + step)
            for _ in range(30):
                worse = np.abs(trial_res) > np.abs(res)
                if not np.any(worse):
                    break
                damping = np.where(worse, 0.5 * damping, damping)
                trial_res, trial_x = residual(ds + damping * step)
            ds, res, x = ds + damping * step, trial_res, trial_x
        raise ShockUpdateFailedError(f"Shock update did not converge (max residual {np.max(np.abs(res)):.3e})")

    def apply(self, state: IterationState) -> Tuple[IterationState, Dict[str, str]]:
        f = self.assemble_interior(state)
        g1 = self.assemble_wedge(state)
        g2 = self.assemble_shock(state)
        cuts = self._far_field(state)
        # the polar cut values already carry the edge value
        g3 = self.assemble_edge(state) if cuts is None else None
        result = self.elliptic.solve(f.values, g1, g2, g3=g3, boundary_values=cuts,
                                     name="delta_phi", iteration=state.iteration + 1)
        new_phi = result.field.values
        shock, method = self.update_shock(new_phi[:, -1, ...])
        new_state = self.make_state(shock, new_phi, state.iteration + 1)
        return new_state, {"solver": result.method, "shock_update": method}

    def calibrate_c0(self) -> float:
        """Twice the data-to-solution gain of one map application from the zero state."""
        size = self.wedge.amplitude + self.upstream.size(self.bg)
        if size == 0.0:
            self.c0 = self.settings.c0 or DEFAULT_C0
            return self.c0
        out, _ = self.apply(self.zero_state())
        gain = max(out.norms["phi"], out.norms["s"]) / size
        self.c0 = float(2.0 * gain) if gain > 0.0 else DEFAULT_C0
        self.logger.info(f"Pilot run: data size {size:.3e}, gain {gain:.3e}, C0 = {self.c0:.3e}")
        return self.c0

    def iterate(self, initial: Optional[IterationState] = None) -> Tuple[IterationState, ConvergenceHistory]:
        settings = self.settings
        if self.c0 is None:
            self.calibrate_c0()
        state = initial if initial is not None else self.zero_state()
        history = ConvergenceHistory()
        previous, streak = None, 0
        for k in range(1, settings.max_iter + 1):
            new_state, info = self.apply(state)
            d = self.distance(new_state, state)
            kappa = d / previous if previous not in (None, 0.0) else float("nan")
            history.append(iter=k, distance=d, kappa=kappa, norm_phi=new_state.norms["phi"],
                           norm_s=new_state.norms["s"], in_set=new_state.in_set, **info)
            if not new_state.in_set:
                self.logger.warning(f"Iterate {k} leaves the iteration set (norms {new_state.norms})")
            self.logger.info(f"Iteration {k}: distance {d:.3e}, kappa {kappa:.3f}")
            state = new_state
            if d < settings.tol:
                return state, history
            streak = streak + 1 if np.isfinite(kappa) and kappa >= 1.0 else 0
            if streak >= settings.patience:
                raise NotContractingError(
                    f"Contraction factor >= 1 for {streak} consecutive steps; perturbation too large or grid too coarse",
                    history=history,
                )
            previous = d
        raise NotContractingError(f"No convergence within {settings.max_iter} iterations", history=history)

    # -- diagnostics ------------------------------------------------------

    def residual_check(self, state: IterationState) -> Dict[str, float]:
        """Nonlinear residuals of the converged pair in max norm."""
        transform, J, Y2, Dy, D2y, Dx = self._pointwise(state)
        a = self.gas.coefficients(Dx + self.U0_plus)
        a_tilde = np.einsum("...ik,...km,...jm->...ij", J, a, J)
        b_tilde = np.einsum("...km,...ikm->...i", a, Y2)
        pde = np.einsum("...ij,...ij->...", a_tilde, D2y) + np.einsum("...i,...i->...", b_tilde, Dy)
        pde = pde[1:-1, 1:-1, ...]
        if not self.dom.planar and not self.dom.periodic:
            pde = pde[..., 1:-1]

        y_s = self.y[:, -1, ...]
        x_s = transform.inverse(y_s)
        U_plus = Dx[:, -1, ...] + self.U0_plus
        U_minus = self.upstream.gradient(x_s)
        jump = rh_jump(self.gas, U_minus, U_plus)
        phi_plus = self.bg.phi0_plus(x_s) + state.delta_phi.values[:, -1, ...]
        continuity = phi_plus - self.upstream.potential(x_s)

        x_w = transform.inverse(self.y[:, 0, ...])
        n = np.stack([-self.wedge.height(x_w[..., 0], x_w[..., 2], d1=1), np.ones(x_w.shape[:-1]),
                      -self.wedge.height(x_w[..., 0], x_w[..., 2], d3=1)], axis=-1)
        slip = np.sum((Dx[:, 0, ...] + self.U0_plus) * n, axis=-1)

        rho_minus = self.gas.density(np.sum(U_minus * U_minus, axis=-1))
        rho_plus = self.gas.density(np.sum(U_plus * U_plus, axis=-1))
        entropy = float(np.min(rho_plus - rho_minus))
        z = np.zeros(1) if self.dom.planar else self.dom.z
        if not self.dom.planar:
            # between nodes the interpolant must keep the shock on the edge too
            z = np.concatenate([z, 0.5 * (z[1:] + z[:-1])])
        attachment = np.max(np.abs(state.delta_s_hat(np.zeros_like(z), z) - self.wedge.edge(z)))
        return {
            "pde": float(np.max(np.abs(pde))),
            "rh_jump": float(np.max(np.abs(jump))),
            "continuity": float(np.max(np.abs(continuity))),
            "slip": float(np.max(np.abs(slip))),
            "entropy_margin": entropy,
            "entropy_ok": bool(entropy > 0.0),
            "upstream_pde": float(np.max(np.abs(self.upstream.pde_residual(self.gas, x_s)))),
            "attachment": float(attachment),
        }

    def lipschitz_probe(self, a: IterationState, b: IterationState) -> float:
        """|T a - T b| / |a - b| in the iteration distance."""
        d_in = self.distance(a, b)
        if d_in == 0.0:
            raise ValueError("Probe states coincide")
        Ta, _ = self.apply(a)
        Tb, _ = self.apply(b)
        return self.distance(Ta, Tb) / d_in


def _solver_for(state: IterationState, bg: BackgroundSolution, wedge: WedgeGeometry,
                upstream: UpstreamFlow, cert: Optional[StabilityCertificate] = None) -> FixedPointSolver:
    if cert is None:
        cert = certify(bg.gas, bg)
    return FixedPointSolver(bg, cert, wedge, upstream, state.domain)


def assemble_interior(state: IterationState, bg: BackgroundSolution, wedge: WedgeGeometry,
                      upstream: UpstreamFlow, cert: Optional[StabilityCertificate] = None) -> GridField:
    return _solver_for(state, bg, wedge, upstream, cert).assemble_interior(state)


def assemble_wedge(state: IterationState, bg: BackgroundSolution, wedge: WedgeGeometry,
                   upstream: UpstreamFlow, cert: Optional[StabilityCertificate] = None) -> np.ndarray:
    return _solver_for(state, bg, wedge, upstream, cert).assemble_wedge(state)


def assemble_shock(state: IterationState, bg: BackgroundSolution, wedge: WedgeGeometry,
                   upstream: UpstreamFlow, cert: Optional[StabilityCertificate] = None) -> np.ndarray:
    return _solver_for(state, bg, wedge, upstream, cert).assemble_shock(state)


def assemble_edge(state: IterationState, bg: BackgroundSolution, wedge: WedgeGeometry,
                  upstream: UpstreamFlow, cert: Optional[StabilityCertificate] = None):
    return _solver_for(state, bg, wedge, upstream, cert).assemble_edge(state)


def apply_T(state: IterationState, bg: BackgroundSolution, cert: StabilityCertificate, wedge: WedgeGeometry,
            upstream: UpstreamFlow, settings: Optional[IterationSettings] = None, **solver_kwargs) -> IterationState:
    solver = FixedPointSolver(bg, cert, wedge, upstream, state.domain, settings, **solver_kwargs)
    return solver.apply(state)[0]


def iterate_to_fixed_point(initial: IterationState, bg: BackgroundSolution, cert: StabilityCertificate,
                           wedge: WedgeGeometry, upstream: UpstreamFlow,
                           settings: Optional[IterationSettings] = None,
                           **solver_kwargs) -> Tuple[IterationState, ConvergenceHistory, Dict[str, float]]:
    solver = FixedPointSolver(bg, cert, wedge, upstream, initial.domain, settings, **solver_kwargs)
    state, history = solver.iterate(initial)
    return state, history, solver.residual_check(state)


def residual_check(state: IterationState, bg: BackgroundSolution, wedge: WedgeGeometry, upstream: UpstreamFlow,
                   cert: Optional[StabilityCertificate] = None) -> Dict[str, float]:
    return _solver_for(state, bg, wedge, upstream, cert).residual_check(state)


def lipschitz_probe(state_a: IterationState, state_b: IterationState, bg: BackgroundSolution,
                    cert: StabilityCertificate, wedge: WedgeGeometry, upstream: UpstreamFlow) -> float:
    return FixedPointSolver(bg, cert, wedge, upstream, state_a.domain).lipschitz_probe(state_a, state_b)


def shock_surface_frame(state: IterationState, sigma: float) -> pd.DataFrame:
    """Converged shock x1 = s_hat(y2, y3) as a table."""
    sp = state.delta_s_hat
    z = np.zeros(1) if sp.planar else sp.y3_nodes
    Y2, Y3 = np.meshgrid(sp.y2_nodes, z, indexing="ij")
    values = sp.node_values().reshape(Y2.shape)
    return pd.DataFrame({"y2": Y2.ravel(), "y3": Y3.ravel(), "x1": (Y2 / sigma + values).ravel()})
