# services/experiments.py
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from config.settings import ExperimentConfig, Settings
from services.elliptic import (EllipticSolver, TruncatedDomain, comparison_check, compact_source, decay_fit,
                               truncation_study)
from services.errors import ConfigError, NotWeakTransonicError, ShockLabError
from services.fixpoint import FixedPointSolver, IterationSettings, UpstreamFlow, shock_surface_frame
from services.gas import GasModel
from services.geometry import Bump, WedgeGeometry
from services.norms import GridField, WeightSpec, weighted_norm
from services.polar import BackgroundSolution, ShockPolar, UpstreamSpec, rh_jump
from services.stability import BarrierSpec, StabilityAnalyzer, StabilityCertificate, identity_residuals, sign_conditions
from utils.helpers import config_hash, write_csv, write_field_binary, write_json

RANDOM_POLAR_CASES = 20
# barrier-generated data is scaled down so the barrier is a strict supersolution
BARRIER_DATA_FRACTION = 0.5
# largest R to 2R change, relative to the solution maximum, still counted as R-stable
TRUNCATION_TOLERANCE = 0.05


@dataclass
class RunSummary:
    certificate: Dict[str, Any]
    input_norms: Dict[str, float]
    output_norms: Dict[str, float]
    residuals: Dict[str, Any]
    history_path: Optional[str]
    iterations: int
    stability_constant: float
    wall_clock: float
    c0: Optional[float] = None
    files: List[str] = field(default_factory=list)


def field_frame(f: GridField) -> pd.DataFrame:
    """Node coordinates and value of a field, one row per node."""
    names = ["y1", "y2", "y3"][: f.dim]
    frame = pd.DataFrame(f.coords.reshape(-1, f.dim), columns=names)
    frame[f.name] = f.values.ravel()
    return frame


class ExperimentRunner:
    """Builds the background, certificate, geometry and solvers for one configuration and writes artifacts."""

    def __init__(self, config: ExperimentConfig, settings: Optional[Settings] = None,
                 out_dir: Optional[Path] = None, progress: Optional[bool] = None):
        self.config = config
        self.settings = settings or Settings()
        self.hash = config_hash(config.canonical())
        self.out_dir = Path(out_dir or config.output.directory or self.settings.output_dir / f"{config.mode}-{self.hash}")
        self.progress = self.settings.progress if progress is None else progress
        self.logger = logging.getLogger(__name__)
        self.files: List[str] = []

        self.gas = GasModel(config.gas.gamma)
        self.spec = UpstreamSpec(config.upstream.q0, config.upstream.theta_i, self.gas)
        self.polar = ShockPolar(self.spec)

    # -- building blocks --------------------------------------------------

    def _write_csv(self, frame: pd.DataFrame, name: str) -> Path:
        path = write_csv(frame, self.out_dir / name, self.hash)
        self.files.append(str(path))
        return path

    def _write_json(self, payload: Dict, name: str) -> Path:
        path = write_json(payload, self.out_dir / name, self.hash)
        self.files.append(str(path))
        return path

    def _write_field(self, f: GridField, stem: str) -> None:
        if not self.config.output.write_fields:
            return
        self._write_csv(field_frame(f), f"{stem}.csv")
        if self.config.output.write_binary:
            path = write_field_binary(f.values, self.out_dir / f"{stem}.bin", self.hash)
            self.files.append(str(path))

    def wedge_angle(self) -> float:
        wedge = self.config.wedge
        if wedge.theta_w is not None:
            return wedge.theta_w
        angles = self.polar.critical_angles()
        lo, hi = angles["theta_s_star"], angles["theta_w_star"]
        return lo + wedge.window_fraction * (hi - lo)

    def background(self) -> BackgroundSolution:
        return self.polar.background(self.wedge_angle(), branch=self.config.wedge.branch)

    def certificate(self, bg: BackgroundSolution) -> StabilityCertificate:
        return StabilityAnalyzer(self.gas).certify(bg)

    def wedge_geometry(self) -> WedgeGeometry:
        geo = self.config.geometry
        return WedgeGeometry.from_bumps([Bump(**b.model_dump()) for b in geo.w],
                                        [Bump(**b.model_dump()) for b in geo.e1])

    def upstream_flow(self, bg: BackgroundSolution) -> UpstreamFlow:
        up = self.config.upstream
        return UpstreamFlow.from_background(bg, up.perturbation, up.bump_amplitude, up.bump_center, up.bump_width)

    def domain(self, cert: StabilityCertificate) -> TruncatedDomain:
        s = self.config.solver
        nz = s.grid[2] if len(s.grid) == 3 else None
        return TruncatedDomain.from_coefficients(cert.a0, cert.sigma, s.radius, s.grid[0], s.grid[1], nz,
                                                 r_in=s.r_in, r_out=s.r_out, z_length=s.z_length,
                                                 periodic=s.periodic, outer=s.outer_cut)

    def input_norms(self, wedge: WedgeGeometry, upstream: UpstreamFlow, bg: BackgroundSolution,
                    cert: StabilityCertificate) -> Dict[str, float]:
        """Weighted norms of the wedge and edge perturbations and the size of the upstream change."""
        R = self.config.solver.radius
        x1 = np.concatenate([[0.0], np.geomspace(1.0 / R, R, 160)])
        spec = WeightSpec.planar(tau=-1.0 - cert.alpha, l=-cert.beta, alpha=cert.alpha)
        if self.config.solver.planar:
            w_field = GridField(wedge.height(x1, np.zeros_like(x1)), (x1,), x1[:, None], name="w")
        else:
            x3 = np.linspace(-0.5 * self.config.solver.z_length, 0.5 * self.config.solver.z_length, 64)
            X1, X3 = np.meshgrid(x1, x3, indexing="ij")
            w_field = GridField(wedge.height(X1, X3), (x1, x3), np.stack([X1, X3], axis=-1), name="w")
        sup = wedge.sup_norms()
        return {
            "w": weighted_norm(w_field, spec).total,
            "e1": float(sup["e1"] + sup["e1_x3"]),
            "upstream": upstream.size(bg),
        }

    # -- modes ------------------------------------------------------------

    def run_polar(self) -> Dict[str, Any]:
        angles = self.polar.critical_angles()
        theta_w = self.wedge_angle()
        diag = self.polar.polar_curve(101, theta_w=theta_w)
        self._write_csv(diag.curve, "polar_curve.csv")
        payload = {
            "theta_w_star_deg": np.degrees(angles["theta_w_star"]),
            "theta_s_star_deg": np.degrees(angles["theta_s_star"]),
            "theta_w_deg": np.degrees(theta_w),
            "v_s": diag.v_s,
            "v_w": diag.v_w,
            "concave": diag.is_concave(),
        }
        self._write_json(payload, "angles.json")
        return payload

    def run_certify(self) -> Dict[str, Any]:
        bg = self.background()
        payload: Dict[str, Any] = {
            "theta_w_deg": np.degrees(bg.theta_w),
            "sigma": bg.sigma,
            "u0": bg.u0,
            "sign_conditions": sign_conditions(self.gas, bg),
            "identity_residuals": identity_residuals(self.gas, bg),
        }
        try:
            payload["certificate"] = self.certificate(bg).to_dict()
        except NotWeakTransonicError as e:
            payload["certificate"] = None
            payload["failure"] = {"condition": e.condition, "message": str(e)}
            self._write_json(payload, "certificate.json")
            raise
        try:
            strong = self.polar.background(bg.theta_w, branch="strong")
            self.certificate(strong)
            payload["strong_branch"] = {"certified": True}
        except NotWeakTransonicError as e:
            payload["strong_branch"] = {"certified": False, "condition": e.condition}
        self._write_json(payload, "certificate.json")
        return payload

    def linear_data(self, dom: TruncatedDomain, cert: StabilityCertificate):
        """(f1, g1, g2, g3, cut values, barrier) for the linear experiment."""
        lin = self.config.linear
        geometry = cert.geometry
        r = dom.rbar()
        th = dom.thetabar()
        rs = np.exp(dom.s)
        bshape = dom.boundary_shape()
        if lin.data == "barrier":
            if lin.barrier == "decay":
                barrier = BarrierSpec.decay(cert.beta, cert.tau0, scale=lin.amplitude)
            else:
                barrier = BarrierSpec.regularity(cert.alpha, cert.tau1, scale=lin.amplitude)
            k = BARRIER_DATA_FRACTION
            f1 = k * barrier.laplacian(r, th)
            g1 = k * np.broadcast_to(barrier.wedge_derivative(rs, geometry).reshape((-1,) + (1,) * (len(bshape) - 1)),
                                 bshape)
            g2 = k * np.broadcast_to(barrier.shock_derivative(rs, geometry).reshape((-1,) + (1,) * (len(bshape) - 1)),
                                 bshape)
            return f1, g1, g2, None, k * barrier.value(r, th), barrier

        ybar = np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)
        center = np.asarray(lin.center, dtype=float)
        f1 = lin.amplitude * np.exp(-np.sum((ybar - center) ** 2, axis=-1) / lin.width ** 2)
        g3 = lin.g_edge if dom.planar else np.full(dom.nz, lin.g_edge)
        return f1, np.zeros(bshape), np.zeros(bshape), g3, None, BarrierSpec.decay(cert.beta, cert.tau0)

    def run_solve_linear(self) -> Dict[str, Any]:
        bg = self.background()
        cert = self.certificate(bg)
        dom = self.domain(cert)
        solver = EllipticSolver(cert.a0, dom, cert.mu, **self.config.solver.solver_kwargs())
        f1, g1, g2, g3, cut, barrier = self.linear_data(dom, cert)
        result = solver.solve(f1, g1, g2, g3=g3, boundary_values=cut)
        fit = decay_fit(result.field, dom)
        payload: Dict[str, Any] = {
            "method": result.method,
            "relative_residual": result.relative_residual,
            "m_matrix": solver.operator.m_matrix,
            "decay_fit": fit,
            "certificate": cert.to_dict(),
        }
        if self.config.linear.data == "barrier":
            payload["comparison"] = comparison_check(result.field, barrier, dom, cert.geometry, cert.mu,
                                                     tol=1e-6 * self.config.linear.amplitude)
        self._write_field(result.field, "linear_field")
        self._write_json(payload, "linear.json")
        return payload

    def run_truncation(self) -> Dict[str, Any]:
        """Linear solve with the compact [linear] source at R and 2R, compared on r_bar <= R/2."""
        bg = self.background()
        cert = self.certificate(bg)
        s = self.config.solver
        lin = self.config.linear
        per_octave = max(2, int(round((s.grid[0] - 1) / (2.0 * np.log2(s.radius)))))

        def source(dom: TruncatedDomain) -> np.ndarray:
            return compact_source(dom, radius=float(np.hypot(*lin.center)), width=lin.width,
                                  amplitude=lin.amplitude)

        report = truncation_study(cert.a0, cert.mu, cert.sigma, s.radius, s.grid[1], per_octave=per_octave,
                                  outer=s.outer_cut, source=source, **s.solver_kwargs())
        if report.difference > TRUNCATION_TOLERANCE:
            self.logger.warning(
                f"Solutions at R={s.radius:g} and {2 * s.radius:g} differ by {report.difference:.1%} of their "
                f"maximum (peak at r={report.peak_radius:.3g}); the {s.outer_cut} outer cut is not R-stable here"
            )
        payload = {"truncation": report, "stable": report.difference <= TRUNCATION_TOLERANCE,
                   "tolerance": TRUNCATION_TOLERANCE}
        self._write_json(payload, "truncation.json")
        return payload

    def run_iteration(self, write: bool = True) -> RunSummary:
        start = time.perf_counter()
        bg = self.background()
        cert = self.certificate(bg)
        dom = self.domain(cert)
        wedge = self.wedge_geometry()
        upstream = self.upstream_flow(bg)
        it = self.config.iteration
        settings = IterationSettings(tol=it.tol, max_iter=it.max_iter, epsilon=it.epsilon, c0=it.c0,
                                     patience=it.patience, far_field=it.far_field)
        solver = FixedPointSolver(bg, cert, wedge, upstream, dom, settings, **self.config.solver.solver_kwargs())
        state, history = solver.iterate()
        residuals = solver.residual_check(state)

        inputs = self.input_norms(wedge, upstream, bg, cert)
        outputs = dict(state.norms)
        total_in = sum(inputs.values())
        total_out = sum(outputs.values())
        history_path = None
        if write:
            history_path = str(self._write_csv(history.to_frame(), "history.csv"))
            self._write_csv(shock_surface_frame(state, bg.sigma), "shock_surface.csv")
            self._write_field(state.delta_phi, "delta_phi")
        summary = RunSummary(
            certificate=cert.to_dict(),
            input_norms=inputs,
            output_norms=outputs,
            residuals=residuals,
            history_path=history_path,
            iterations=len(history.records),
            stability_constant=total_out / total_in if total_in > 0.0 else 0.0,
            wall_clock=time.perf_counter() - start,
            c0=solver.c0,
        )
        if write:
            summary.files = list(self.files)
            self._write_json({"summary": summary}, "summary.json")
        self.logger.info(f"Run finished in {summary.iterations} iterations, {summary.wall_clock:.1f} s")
        return summary

    def scaled_config(self, amplitude: float) -> ExperimentConfig:
        """Copy of the config with the swept perturbation rescaled to the given size."""
        cfg = self.config
        if cfg.sweep.target == "wedge":
            base = self.wedge_geometry().amplitude
            if base == 0.0:
                raise ConfigError("Sweep over the wedge needs at least one nonzero bump in [geometry]")
            factor = amplitude / base
            geometry = cfg.geometry.model_copy(update={
                "w": [b.model_copy(update={"amplitude": b.amplitude * factor}) for b in cfg.geometry.w],
                "e1": [b.model_copy(update={"amplitude": b.amplitude * factor}) for b in cfg.geometry.e1],
            })
            return cfg.model_copy(update={"geometry": geometry})
        direction = np.asarray(cfg.upstream.perturbation, dtype=float)
        norm = np.linalg.norm(direction)
        if norm == 0.0:
            raise ConfigError("Sweep over the upstream state needs a nonzero [upstream].perturbation direction")
        upstream = cfg.upstream.model_copy(update={"perturbation": tuple(amplitude * direction / norm)})
        return cfg.model_copy(update={"upstream": upstream})

    def run_sweep(self, n_jobs: Optional[int] = None) -> pd.DataFrame:
        amplitudes = self.config.sweep.amplitudes
        n_jobs = n_jobs or self.settings.n_jobs
        configs = [self.scaled_config(t) for t in amplitudes]
        iterator = tqdm(list(enumerate(configs)), desc="sweep", disable=not self.progress)
        rows = Parallel(n_jobs=n_jobs)(
            delayed(_sweep_point)(cfg, amplitudes[k], self.out_dir / f"amp-{k:02d}") for k, cfg in iterator
        )
        frame = pd.DataFrame(rows)
        ok = frame[frame["status"] == "ok"]
        if len(ok) >= 2:
            slope = float(np.polyfit(np.log(ok["amplitude"]), np.log(ok["output_norm"]), 1)[0])
            constants = ok["stability_constant"].to_numpy()
            spread = float(constants.max() / constants.min() - 1.0) if constants.min() > 0 else float("inf")
        else:
            slope, spread = float("nan"), float("nan")
        self._write_csv(frame, "sweep.csv")
        self._write_json({"slope": slope, "constant_spread": spread, "points": len(frame)}, "sweep.json")
        self.logger.info(f"Sweep slope {slope:.3f}, stability-constant spread {spread:.2%}")
        return frame

    # -- dry run ------------------------------------------------------------

    def validate(self, seed: Optional[int] = None) -> Dict[str, Any]:
        """Precondition report; never launches a solve."""
        report: Dict[str, Any] = {"ok": True, "errors": [], "warnings": []}
        margin = None
        try:
            angles = self.polar.critical_angles()
            report["theta_w_star_deg"] = np.degrees(angles["theta_w_star"])
            report["theta_s_star_deg"] = np.degrees(angles["theta_s_star"])
            theta_w = self.wedge_angle()
            report["theta_w_deg"] = np.degrees(theta_w)
            margin = min(theta_w - angles["theta_s_star"], angles["theta_w_star"] - theta_w)
            report["angular_margin_deg"] = np.degrees(margin)
            if theta_w > angles["theta_w_star"]:
                report["errors"].append("Detached: wedge angle beyond detachment")
            elif self.config.wedge.branch == "weak" and theta_w <= angles["theta_s_star"]:
                report["errors"].append("NotTransonic: wedge angle at or below the sonic angle")
        except ShockLabError as e:
            report["errors"].append(f"{type(e).__name__}: {e}")

        wedge = self.wedge_geometry()
        size = wedge.amplitude + float(np.linalg.norm(self.config.upstream.perturbation)) + abs(
            self.config.upstream.bump_amplitude)
        report["perturbation_size"] = size
        if size > self.config.iteration.epsilon:
            report["warnings"].append(
                f"Perturbation size {size:.3e} exceeds epsilon {self.config.iteration.epsilon:.3e}: "
                "outside contraction regime, run may fail"
            )
        turning = wedge.sup_norms()["w_x1"]
        report["max_wedge_slope"] = turning
        if margin is not None and margin > 0.0 and turning > margin:
            report["warnings"].append(
                f"Wedge slope {turning:.3e} exceeds the angular margin {margin:.3e} rad to the window ends: "
                "the perturbed wedge leaves the weak transonic window"
            )

        s = self.config.solver
        if s.r_in is not None and s.r_out is not None and not s.r_in < s.r_out:
            report["errors"].append("Grid: r_in must be smaller than r_out")
        r_in = s.r_in or 1.0 / s.radius
        r_out = s.r_out or s.radius
        hs = np.log(r_out / r_in) / (s.grid[0] - 1)
        report["log_radial_step"] = hs
        if hs > 0.2:
            report["warnings"].append(f"Radial step {hs:.3f} in log r is coarse; refine ns")

        if seed is not None:
            report["random_polar"] = random_polar_check(seed)
            if not report["random_polar"]["ok"]:
                report["errors"].append("Randomized polar property check failed")

        report["ok"] = not report["errors"]
        self._write_json(report, "validate.json")
        for w in report["warnings"]:
            self.logger.warning(w)
        return report


def _sweep_point(config: ExperimentConfig, amplitude: float, out_dir: Path) -> Dict[str, Any]:
    runner = ExperimentRunner(config, out_dir=out_dir, progress=False)
    try:
        summary = runner.run_iteration()
    except ShockLabError as e:
        runner.logger.warning(f"Sweep point {amplitude:.3e} failed: {e}")
        return {"amplitude": amplitude, "status": type(e).__name__, "input_norm": np.nan,
                "output_norm": np.nan, "stability_constant": np.nan, "iterations": 0}
    return {
        "amplitude": amplitude,
        "status": "ok",
        "input_norm": sum(summary.input_norms.values()),
        "output_norm": sum(summary.output_norms.values()),
        "stability_constant": summary.stability_constant,
        "iterations": summary.iterations,
    }


def random_polar_check(seed: int, cases: int = RANDOM_POLAR_CASES) -> Dict[str, Any]:
    """Polar invariants on random (gamma, q0, theta_i, theta_w) drawn inside the weak window."""
    rng = np.random.default_rng(seed)
    failures = []
    worst = 0.0
    for k in range(cases):
        gamma = rng.uniform(1.1, 2.0)
        gas = GasModel(gamma)
        c_star = gas.critical_speed()
        q_max = np.sqrt(gas.vacuum_speed_sq)
        q0 = c_star + rng.uniform(0.3, 0.7) * (q_max - c_star)
        theta_i = np.radians(rng.uniform(60.0, 120.0))
        try:
            polar = ShockPolar(UpstreamSpec(q0, theta_i, gas))
            angles = polar.critical_angles()
            theta_w = angles["theta_s_star"] + rng.uniform(0.05, 0.95) * (angles["theta_w_star"] - angles["theta_s_star"])
            bg = polar.background(theta_w)
            roots = polar.solve_downstream(theta_w)
            residual = abs(rh_jump(gas, bg.upstream, bg.downstream))
            worst = max(worst, residual)
            rho_minus, rho_plus = bg.density_jump
            checks = {
                "residual": residual <= 1e-10,
                "ordering": roots.u_strong < roots.u_weak,
                "entropy": rho_minus < rho_plus,
                "subsonic": gas.is_subsonic(bg.downstream),
                "concave": polar.polar_curve(41, theta_w=theta_w).is_concave(),
            }
        except ShockLabError as e:
            failures.append({"case": k, "error": str(e)})
            continue
        bad = [name for name, ok in checks.items() if not ok]
        if bad:
            failures.append({"case": k, "gamma": gamma, "q0": q0, "theta_i": theta_i, "failed": bad})
    return {"ok": not failures, "cases": cases, "max_residual": worst, "failures": failures}
