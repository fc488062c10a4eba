# services/elliptic.py
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from services.errors import ConfigError, GasDomainError, SolverFailedError
from services.geometry import cutoff
from services.norms import GridField
from services.stability import BarrierSpec, SectorGeometry

# boundary classification codes carried by GridField.boundary
INTERIOR, WEDGE, SHOCK, CUT, CAP = 0, 1, 2, 3, 4


def scaling_matrix(a0: np.ndarray) -> np.ndarray:
    """Upper-triangular T with T a_in T^T = I for the in-plane block a_in of a0."""
    a_in = np.asarray(a0, dtype=float)[:2, :2]
    try:
        lower = np.linalg.cholesky(np.linalg.inv(a_in))
    except np.linalg.LinAlgError as exc:
        raise GasDomainError("Coefficient block is not positive definite") from exc
    return lower.T


@dataclass
class TruncatedDomain:
    """Sector {0 < theta_bar < omega_bar, r_in < r_bar < r_out} in scaled coordinates, optionally times y3."""

    R: float
    sigma: float
    T: np.ndarray
    ns: int
    nt: int
    nz: Optional[int] = None
    r_in: Optional[float] = None
    r_out: Optional[float] = None
    z_length: float = 2.0 * np.pi
    periodic: bool = True
    outer: str = "dirichlet"

    def __post_init__(self):
        if not self.R > 4.0:
            raise ConfigError(f"Truncation radius must exceed 4, got {self.R}")
        if self.ns < 3 or self.nt < 3 or (self.nz is not None and self.nz < 3):
            raise ConfigError(f"Grid ({self.ns}, {self.nt}, {self.nz}) is too small")
        if self.outer not in ("dirichlet", "neumann"):
            raise ConfigError(f"Outer cut must be 'dirichlet' or 'neumann', got {self.outer!r}")
        if not self.sigma > 0.0:
            raise ConfigError(f"Shock slope must be positive, got {self.sigma}")
        self.T = np.asarray(self.T, dtype=float)
        self.r_in = 1.0 / self.R if self.r_in is None else float(self.r_in)
        self.r_out = self.R if self.r_out is None else float(self.r_out)
        if not 0.0 < self.r_in < self.r_out:
            raise ConfigError(f"Cut radii must satisfy 0 < r_in < r_out, got {self.r_in}, {self.r_out}")
        shock_dir = self.T @ np.array([1.0, self.sigma])
        self.omega_bar = float(np.arctan2(shock_dir[1], shock_dir[0]))
        self.s = np.linspace(np.log(self.r_in), np.log(self.r_out), self.ns)
        self.theta = np.linspace(0.0, self.omega_bar, self.nt)
        self.hs = float(self.s[1] - self.s[0])
        self.ht = float(self.theta[1] - self.theta[0])
        if self.nz is None:
            self.z = None
            self.hz = None
        elif self.periodic:
            self.z = np.arange(self.nz) * (self.z_length / self.nz) - 0.5 * self.z_length
            self.hz = float(self.z_length / self.nz)
        else:
            self.z = np.linspace(-0.5 * self.z_length, 0.5 * self.z_length, self.nz)
            self.hz = float(self.z[1] - self.z[0])

    @classmethod
    def from_coefficients(cls, a0: np.ndarray, sigma: float, R: float, ns: int, nt: int,
                          nz: Optional[int] = None, **kwargs) -> "TruncatedDomain":
        return cls(R=R, sigma=sigma, T=scaling_matrix(a0), ns=ns, nt=nt, nz=nz, **kwargs)

    @property
    def planar(self) -> bool:
        return self.nz is None

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.ns, self.nt) if self.planar else (self.ns, self.nt, self.nz)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def axes(self) -> Tuple[np.ndarray, ...]:
        return (self.s, self.theta) if self.planar else (self.s, self.theta, self.z)

    def _mesh(self):
        return np.meshgrid(*self.axes, indexing="ij")

    def rbar(self) -> np.ndarray:
        return np.exp(self._mesh()[0])

    def thetabar(self) -> np.ndarray:
        return self._mesh()[1]

    def coords(self) -> np.ndarray:
        """Physical (y1, y2[, y3]) at every node."""
        mesh = self._mesh()
        r = np.exp(mesh[0])
        ybar = np.stack([r * np.cos(mesh[1]), r * np.sin(mesh[1])], axis=-1)
        y_in = np.linalg.solve(self.T, ybar[..., None])[..., 0]
        if self.planar:
            return y_in
        return np.concatenate([y_in, mesh[2][..., None]], axis=-1)

    def boundary_codes(self) -> np.ndarray:
        codes = np.zeros(self.shape, dtype=int)
        codes[:, 0, ...] = WEDGE
        codes[:, -1, ...] = SHOCK
        if not self.planar and not self.periodic:
            codes[..., 0] = CAP
            codes[..., -1] = CAP
        codes[0, ...] = CUT
        codes[-1, ...] = CUT
        return codes

    def field(self, values: np.ndarray, name: str = "v", iteration: Optional[int] = None) -> GridField:
        return GridField(values=values, axes=self.axes, coords=self.coords(), name=name,
                         iteration=iteration, boundary=self.boundary_codes())

    def boundary_shape(self) -> Tuple[int, ...]:
        return (self.ns,) if self.planar else (self.ns, self.nz)


@dataclass
class EllipticOperator:
    matrix: sp.csr_matrix
    wedge_data: sp.csr_matrix
    shock_data: sp.csr_matrix
    pde_rows: np.ndarray
    interior_mask: np.ndarray
    m_matrix: bool
    domain: TruncatedDomain

    def apply_interior(self, values: np.ndarray) -> np.ndarray:
        """sum a_ij v_ij at interior nodes (NaN elsewhere)."""
        dom = self.domain
        out = (self.matrix @ np.asarray(values, dtype=float).ravel()).reshape(dom.shape)
        out = out / dom.rbar() ** 2
        return np.where(self.interior_mask, out, np.nan)


@dataclass
class SolveResult:
    field: GridField
    residual_history: List[float]
    method: str
    relative_residual: float
    extension: Optional[np.ndarray] = None


class _Assembler:
    def __init__(self, dom: TruncatedDomain, T: np.ndarray, mu: np.ndarray, tangential: str):
        self.dom = dom
        self.T = T
        self.mu = mu
        self.tangential = tangential
        self.rows: List[np.ndarray] = []
        self.cols: List[np.ndarray] = []
        self.vals: List[np.ndarray] = []
        self.g1_entries: List[Tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self.g2_entries: List[Tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        m = T @ mu[:2]
        w = dom.omega_bar
        self.A_s = float(m[0] * np.cos(w) + m[1] * np.sin(w))
        self.A_t = float(-m[0] * np.sin(w) + m[1] * np.cos(w))
        if self.A_t <= 0.0:
            raise GasDomainError(f"Oblique vector does not point out of the shock (A_theta={self.A_t:.3e})")

    def index(self, i, j, k):
        dom = self.dom
        if dom.planar:
            return i * dom.nt + j
        return (i * dom.nt + j) * dom.nz + k

    def bindex(self, i, k):
        return i if self.dom.planar else i * self.dom.nz + k

    def emit(self, rows, i, j, k, coef):
        self.rows.append(rows)
        self.cols.append(self.index(i, j, k))
        self.vals.append(coef)

    def d_s(self, rows, i, j, k, coef):
        hs = self.dom.hs
        # v_s vanishes on a Neumann outer cut
        keep = i < self.dom.ns - 1
        if not np.all(keep):
            rows, i, j, k, coef = rows[keep], i[keep], j[keep], k[keep], coef[keep]
        if self.tangential == "upwind":
            fwd = coef > 0.0
            self.emit(rows[fwd], i[fwd] + 1, j[fwd], k[fwd], coef[fwd] / hs)
            self.emit(rows[fwd], i[fwd], j[fwd], k[fwd], -coef[fwd] / hs)
            bwd = ~fwd
            self.emit(rows[bwd], i[bwd], j[bwd], k[bwd], coef[bwd] / hs)
            self.emit(rows[bwd], i[bwd] - 1, j[bwd], k[bwd], -coef[bwd] / hs)
        else:
            self.emit(rows, i + 1, j, k, coef / (2.0 * hs))
            self.emit(rows, i - 1, j, k, -coef / (2.0 * hs))

    def d_z(self, rows, i, j, k, coef):
        dom = self.dom
        hz = dom.hz
        if dom.periodic:
            kp, km = (k + 1) % dom.nz, (k - 1) % dom.nz
            has_p = has_m = np.ones_like(k, dtype=bool)
        else:
            kp, km = np.minimum(k + 1, dom.nz - 1), np.maximum(k - 1, 0)
            has_p, has_m = k < dom.nz - 1, k > 0
        if self.tangential == "upwind":
            fwd = ((coef > 0.0) & has_p) | ~has_m
        else:
            central = has_p & has_m
            self.emit(rows[central], i[central], j[central], kp[central], coef[central] / (2.0 * hz))
            self.emit(rows[central], i[central], j[central], km[central], -coef[central] / (2.0 * hz))
            fwd = ~central & has_p
            bwd = ~central & ~has_p
            self._one_sided_z(rows, i, j, k, kp, km, coef, fwd, bwd)
            return
        bwd = ~fwd
        self._one_sided_z(rows, i, j, k, kp, km, coef, fwd, bwd)

    def _one_sided_z(self, rows, i, j, k, kp, km, coef, fwd, bwd):
        hz = self.dom.hz
        self.emit(rows[fwd], i[fwd], j[fwd], kp[fwd], coef[fwd] / hz)
        self.emit(rows[fwd], i[fwd], j[fwd], k[fwd], -coef[fwd] / hz)
        self.emit(rows[bwd], i[bwd], j[bwd], k[bwd], coef[bwd] / hz)
        self.emit(rows[bwd], i[bwd], j[bwd], km[bwd], -coef[bwd] / hz)

    def wedge_ghost(self, rows, i, k, coef):
        # v_{-1} = v_1 - (2 ht / T22)(e^s g1 - T12 v_s); the g1 part goes to the right-hand side
        dom, T = self.dom, self.T
        one = np.ones_like(i)
        self.emit(rows, i, one, k, coef)
        if T[0, 1] != 0.0:
            self.d_s(rows, i, 0 * one, k, coef * 2.0 * dom.ht * T[0, 1] / T[1, 1])
        self.g1_entries.append((rows, self.bindex(i, k), coef * 2.0 * dom.ht / T[1, 1] * np.exp(dom.s[i])))

    def shock_ghost(self, rows, i, k, coef):
        # v_{N} = v_{N-2} + (2 ht / A_t)(e^s g2 - A_s v_s - e^s mu3 v_z); likewise for g2
        dom = self.dom
        last = np.full_like(i, dom.nt - 1)
        self.emit(rows, i, last - 1, k, coef)
        self.d_s(rows, i, last, k, -coef * 2.0 * dom.ht * self.A_s / self.A_t)
        if not dom.planar and self.mu[2] != 0.0:
            self.d_z(rows, i, last, k, -coef * 2.0 * dom.ht * self.mu[2] * np.exp(dom.s[i]) / self.A_t)
        self.g2_entries.append((rows, self.bindex(i, k), -coef * 2.0 * dom.ht / self.A_t * np.exp(dom.s[i])))

    def term(self, rows, i, j, k, di, dj, dk, coef):
        dom = self.dom
        ti, tj = i + di, j + dj
        if dom.outer == "neumann":
            ti = np.where(ti > dom.ns - 1, 2 * (dom.ns - 1) - ti, ti)
        tk = k + dk
        if not dom.planar and dom.periodic:
            tk = tk % dom.nz
        inside = (tj >= 0) & (tj <= dom.nt - 1)
        self.emit(rows[inside], ti[inside], tj[inside], tk[inside], coef[inside])
        low = tj < 0
        if np.any(low):
            self.wedge_ghost(rows[low], ti[low], tk[low], coef[low])
        high = tj > dom.nt - 1
        if np.any(high):
            self.shock_ghost(rows[high], ti[high], tk[high], coef[high])


class EllipticSolver:
    """Finite differences for sum a0_ij v_ij = f1 with v_y2 = g1 (wedge), Dv.mu = g2 (shock).

    The inner cut is Dirichlet; the outer cut is Dirichlet or Neumann (`TruncatedDomain.outer`).
    """

    def __init__(self, a0: np.ndarray, dom: TruncatedDomain, mu: np.ndarray, tangential: str = "central",
                 rtol: float = 1e-10, restart: int = 200, maxiter: int = 2000, drop_tol: float = 1e-5,
                 fill_factor: float = 20.0, direct_fallback: bool = True, chi_radius: float = 0.5):
        a0 = np.asarray(a0, dtype=float)
        if not np.allclose(a0, a0.T) or np.linalg.eigvalsh(a0)[0] <= 0.0:
            raise GasDomainError("Coefficient matrix must be symmetric positive definite")
        if tangential not in ("central", "upwind"):
            raise ConfigError(f"Unknown tangential stencil {tangential!r}")
        self.a0 = a0
        self.dom = dom
        self.mu = np.asarray(mu, dtype=float)
        self.T = dom.T
        self.tangential = tangential
        self.rtol = rtol
        self.restart = restart
        self.maxiter = maxiter
        self.drop_tol = drop_tol
        self.fill_factor = fill_factor
        self.direct_fallback = direct_fallback
        self.chi_radius = chi_radius
        self.logger = logging.getLogger(__name__)
        self._operator: Optional[EllipticOperator] = None

    @property
    def operator(self) -> EllipticOperator:
        if self._operator is None:
            self._operator = self.build_operator()
        return self._operator

    def build_operator(self) -> EllipticOperator:
        dom = self.dom
        asm = _Assembler(dom, self.T, self.mu, self.tangential)
        idx = np.indices(dom.shape)
        i_all, j_all = idx[0].ravel(), idx[1].ravel()
        k_all = np.zeros_like(i_all) if dom.planar else idx[2].ravel()

        # a Neumann outer cut keeps its PDE rows with the mirror ghost v_{ns} = v_{ns-2}
        last = dom.ns if dom.outer == "neumann" else dom.ns - 1
        pde = (i_all > 0) & (i_all < last)
        if not dom.planar and not dom.periodic:
            pde &= (k_all > 0) & (k_all < dom.nz - 1)
        I, J, K = i_all[pde], j_all[pde], k_all[pde]
        rows = asm.index(I, J, K)
        hs2, ht2 = dom.hs ** 2, dom.ht ** 2
        one = np.ones(rows.shape)

        # e^{2s} L v = v_ss + v_tt + mixed + a33 e^{2s} v_zz
        asm.term(rows, I, J, K, 1, 0, 0, one / hs2)
        asm.term(rows, I, J, K, -1, 0, 0, one / hs2)
        asm.term(rows, I, J, K, 0, 1, 0, one / ht2)
        asm.term(rows, I, J, K, 0, -1, 0, one / ht2)
        asm.term(rows, I, J, K, 0, 0, 0, -2.0 * one * (1.0 / hs2 + 1.0 / ht2))

        if not dom.planar:
            es = np.exp(dom.s[I])
            th = dom.theta[J]
            hz = dom.hz
            a33 = self.a0[2, 2] * es ** 2
            asm.term(rows, I, J, K, 0, 0, 1, a33 / hz ** 2)
            asm.term(rows, I, J, K, 0, 0, -1, a33 / hz ** 2)
            asm.term(rows, I, J, K, 0, 0, 0, -2.0 * a33 / hz ** 2)
            b = self.T @ self.a0[:2, 2]
            c_sz = 2.0 * es * (b[0] * np.cos(th) + b[1] * np.sin(th))
            c_tz = 2.0 * es * (b[1] * np.cos(th) - b[0] * np.sin(th))
            for di in (1, -1):
                for dk in (1, -1):
                    asm.term(rows, I, J, K, di, 0, dk, di * dk * c_sz / (4.0 * dom.hs * hz))
            for dj in (1, -1):
                for dk in (1, -1):
                    asm.term(rows, I, J, K, 0, dj, dk, dj * dk * c_tz / (4.0 * dom.ht * hz))

        dirichlet = np.flatnonzero(~pde)
        d_rows = asm.index(i_all[dirichlet], j_all[dirichlet], k_all[dirichlet])
        asm.rows.append(d_rows)
        asm.cols.append(d_rows)
        asm.vals.append(np.ones(d_rows.shape))

        n = dom.size
        matrix = sp.coo_matrix(
            (np.concatenate(asm.vals), (np.concatenate(asm.rows), np.concatenate(asm.cols))), shape=(n, n)
        ).tocsr()
        matrix.sum_duplicates()
        nb = int(np.prod(dom.boundary_shape()))

        def data_map(entries):
            if not entries:
                return sp.csr_matrix((n, nb))
            r = np.concatenate([e[0] for e in entries])
            c = np.concatenate([e[1] for e in entries])
            v = np.concatenate([e[2] for e in entries])
            return sp.coo_matrix((v, (r, c)), shape=(n, nb)).tocsr()

        interior = np.zeros(dom.shape, dtype=bool)
        interior[1:-1, 1:-1, ...] = True
        if not dom.planar and not dom.periodic:
            interior[..., 0] = False
            interior[..., -1] = False

        m_ok = self._check_m_matrix(matrix, rows)
        return EllipticOperator(matrix=matrix, wedge_data=data_map(asm.g1_entries),
                                shock_data=data_map(asm.g2_entries), pde_rows=rows,
                                interior_mask=interior, m_matrix=m_ok, domain=dom)

    def _check_m_matrix(self, matrix: sp.csr_matrix, rows: np.ndarray) -> bool:
        sub = matrix[rows].tocoo()
        off = sub.col != rows[sub.row]
        diag = np.abs(matrix.diagonal()[rows])
        worst = sub.data[off] / diag[sub.row[off]] if np.any(off) else np.zeros(1)
        ok = bool(np.min(worst) >= -1e-12)
        if not ok:
            self.logger.warning(
                f"Discrete operator is not an M-matrix (min scaled off-diagonal {np.min(worst):.3e}); "
                "refine the mesh ratio or use tangential='upwind'"
            )
        return ok

    def edge_extension(self, g1: np.ndarray, g2: np.ndarray, g3) -> np.ndarray:
        """chi(r)[g3 + y2 g1(0, y3) + y1 h(y3)] with h fixed by the oblique condition at the edge."""
        dom = self.dom
        g1_0 = np.asarray(g1, dtype=float)[0]
        g2_0 = np.asarray(g2, dtype=float)[0]
        g3 = np.asarray(g3, dtype=float)
        if dom.planar:
            g3p = 0.0
        elif dom.periodic:
            g3p = (np.roll(g3, -1) - np.roll(g3, 1)) / (2.0 * dom.hz)
        else:
            g3p = np.gradient(g3, dom.z, edge_order=2)
        mu1, mu2, mu3 = self.mu
        h = (g2_0 - mu2 * g1_0 - (0.0 if dom.planar else mu3) * g3p) / mu1
        y = dom.coords()
        chi = cutoff(dom.rbar() / self.chi_radius)
        if dom.planar:
            return chi * (g3 + y[..., 1] * g1_0 + y[..., 0] * h)
        return chi * (g3[None, None, :] + y[..., 1] * g1_0[None, None, :] + y[..., 0] * h[None, None, :])

    def rhs(self, f1: np.ndarray, g1: np.ndarray, g2: np.ndarray,
            dirichlet: Optional[np.ndarray] = None) -> np.ndarray:
        dom = self.dom
        op = self.operator
        b = np.zeros(dom.size)
        f1 = np.broadcast_to(np.asarray(f1, dtype=float), dom.shape)
        scaled = (dom.rbar() ** 2 * f1).ravel()
        b[op.pde_rows] = scaled[op.pde_rows]
        b += op.wedge_data @ np.broadcast_to(np.asarray(g1, dtype=float), dom.boundary_shape()).ravel()
        b += op.shock_data @ np.broadcast_to(np.asarray(g2, dtype=float), dom.boundary_shape()).ravel()
        mask = np.ones(dom.size, dtype=bool)
        mask[op.pde_rows] = False
        if dirichlet is not None:
            b[mask] = np.asarray(dirichlet, dtype=float).ravel()[mask]
        return b

    def solve(self, f1, g1, g2, g3=None, boundary_values: Optional[np.ndarray] = None,
              name: str = "v", iteration: Optional[int] = None) -> SolveResult:
        dom = self.dom
        A = self.operator.matrix
        g1 = np.broadcast_to(np.asarray(g1, dtype=float), dom.boundary_shape())
        g2 = np.broadcast_to(np.asarray(g2, dtype=float), dom.boundary_shape())
        ext = None
        if g3 is not None:
            ext = self.edge_extension(g1, g2, g3)
        dirichlet = np.zeros(dom.shape) if boundary_values is None else np.asarray(boundary_values, dtype=float)
        if ext is not None:
            dirichlet = dirichlet + ext

        b = self.rhs(f1, g1, g2, dirichlet)
        if ext is not None:
            b = b - A @ ext.ravel()

        w, history, method, rel = self._linear_solve(A, b)
        values = w.reshape(dom.shape)
        if ext is not None:
            values = values + ext
        return SolveResult(field=dom.field(values, name=name, iteration=iteration), residual_history=history,
                           method=method, relative_residual=rel, extension=ext)

    def _linear_solve(self, A: sp.csr_matrix, b: np.ndarray):
        b_norm = float(np.linalg.norm(b))
        if b_norm == 0.0:
            return np.zeros_like(b), [0.0], "trivial", 0.0
        accept = 10.0 * self.rtol
        history: List[float] = []

        try:
            ilu = spla.spilu(A.tocsc(), drop_tol=self.drop_tol, fill_factor=self.fill_factor)
            M = spla.LinearOperator(A.shape, ilu.solve)
        except RuntimeError as e:
            self.logger.warning(f"Incomplete factorization failed ({e}); running unpreconditioned")
            M = None

        x, info = spla.gmres(A, b, rtol=self.rtol, atol=0.0, restart=self.restart, maxiter=self.maxiter, M=M,
                             callback=lambda r: history.append(float(r)), callback_type="pr_norm")
        rel = float(np.linalg.norm(b - A @ x) / b_norm)
        if info == 0 and rel <= accept:
            return x, history, "gmres", rel

        self.logger.warning(f"GMRES stopped with info={info}, relative residual {rel:.3e}; trying BiCGSTAB")
        x, info = spla.bicgstab(A, b, x0=x, rtol=self.rtol, atol=0.0, maxiter=self.maxiter, M=M,
                                callback=lambda xk: history.append(float(np.linalg.norm(b - A @ xk) / b_norm)))
        rel = float(np.linalg.norm(b - A @ x) / b_norm)
        if info == 0 and rel <= accept:
            return x, history, "bicgstab", rel

        if self.direct_fallback:
            self.logger.warning(f"Krylov solvers stagnated at {rel:.3e}; falling back to a direct solve")
            x = spla.spsolve(A.tocsc(), b)
            rel = float(np.linalg.norm(b - A @ x) / b_norm)
            history.append(rel)
            if rel <= accept:
                return x, history, "direct", rel
        raise SolverFailedError(f"Linear solve failed (relative residual {rel:.3e})", residual_history=history)


def build_operator(a0: np.ndarray, dom: TruncatedDomain, mu: Optional[np.ndarray] = None,
                   tangential: str = "central") -> EllipticOperator:
    if mu is None:
        mu = np.array([0.0, 1.0, 0.0])
    return EllipticSolver(a0, dom, mu, tangential=tangential).build_operator()


def solve_mixed_bvp(a0, dom: TruncatedDomain, mu, f1, g1, g2, g3ext=None, **solver_kwargs) -> GridField:
    return EllipticSolver(a0, dom, mu, **solver_kwargs).solve(f1, g1, g2, g3=g3ext).field


@dataclass
class DecayFit:
    near_slope: float
    far_slope: float
    near_points: int
    far_points: int
    warnings: List[str] = field(default_factory=list)


def _loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def decay_fit(v: GridField, dom: TruncatedDomain, near_range: Optional[Tuple[float, float]] = None,
              far_range: Optional[Tuple[float, float]] = None, min_points: int = 3) -> DecayFit:
    """Log-log slopes of max |v| over each r-shell: near the edge against r, far away against r + 1."""
    r = np.exp(dom.s)
    profile = np.max(np.abs(v.values).reshape(dom.ns, -1), axis=1)
    near_range = near_range or (2.0 / dom.R, 0.1)
    far_range = far_range or (2.0, 0.5 * dom.r_out)
    warnings = []

    def fit(lo, hi, shift, label):
        sel = (r >= lo) & (r <= hi) & (profile > 1e-300)
        count = int(np.sum(sel))
        if count < min_points:
            warnings.append(f"{label}: only {count} usable shells in [{lo:.3g}, {hi:.3g}]")
            return float("nan"), count
        span = (r[sel].max() + shift) / (r[sel].min() + shift)
        if span < 2.0:
            warnings.append(f"{label}: insufficient dynamic range (ratio {span:.2f})")
        return _loglog_slope(r[sel] + shift, profile[sel]), count

    near, n_near = fit(*near_range, 0.0, "near-edge")
    far, n_far = fit(*far_range, 1.0, "far-field")
    for w in warnings:
        logging.getLogger(__name__).warning(f"decay_fit {w}")
    return DecayFit(near_slope=near, far_slope=far, near_points=n_near, far_points=n_far, warnings=warnings)


def compact_source(dom: TruncatedDomain, radius: float = 2.0, width: float = 0.8,
                   amplitude: float = 1.0) -> np.ndarray:
    """amplitude (1 - d^2/width^2)_+^4 around the point at r_bar = radius on the sector bisector."""
    r, th = dom.rbar(), dom.thetabar()
    half = 0.5 * dom.omega_bar
    dist2 = (r * np.cos(th) - radius * np.cos(half)) ** 2 + (r * np.sin(th) - radius * np.sin(half)) ** 2
    return amplitude * np.clip(1.0 - dist2 / width ** 2, 0.0, None) ** 4


@dataclass
class TruncationReport:
    R: float
    outer: str
    per_octave: int
    difference: float
    near_difference: float
    peak_radius: float


def truncation_study(a0: np.ndarray, mu: np.ndarray, sigma: float, R: float, nt: int, per_octave: int = 8,
                     outer: str = "dirichlet", near_radius: float = 4.0, source=compact_source,
                     **solver_kwargs) -> TruncationReport:
    """Solve with the same data at R and 2R and compare on r_bar <= R/2, relative to max |v_2R|.

    Both grids use the log-radial step log(2)/per_octave, so the R grid is a slice of the 2R grid.
    """
    octaves = np.log2(R)
    if abs(octaves - round(octaves)) > 1e-12:
        raise ConfigError(f"Truncation study needs a power-of-two radius, got {R}")
    values = []
    for radius in (R, 2.0 * R):
        ns = 1 + 2 * per_octave * int(round(np.log2(radius)))
        dom = TruncatedDomain.from_coefficients(a0, sigma, R=radius, ns=ns, nt=nt, outer=outer)
        v = EllipticSolver(a0, dom, mu, **solver_kwargs).solve(source(dom), 0.0, 0.0).field.values
        values.append((dom, v))
    (dom, v_R), (_, v_2R) = values
    shared = v_2R[per_octave:per_octave + dom.ns]
    gap = np.max(np.abs(v_R - shared).reshape(dom.ns, -1), axis=1)
    scale = float(np.max(np.abs(v_2R)))
    r = np.exp(dom.s)
    inside = r <= 0.5 * R
    near = r <= near_radius
    peak = int(np.argmax(np.where(inside, gap, -np.inf)))
    report = TruncationReport(R=float(R), outer=outer, per_octave=per_octave,
                              difference=float(np.max(gap[inside]) / scale),
                              near_difference=float(np.max(gap[near]) / scale), peak_radius=float(r[peak]))
    logging.getLogger(__name__).info(
        f"R={R:g} vs {2 * R:g} ({outer} outer cut): difference {report.difference:.3e} "
        f"(r <= {near_radius:g}: {report.near_difference:.3e}), peak at r={report.peak_radius:.3g}"
    )
    return report


@dataclass
class ComparisonReport:
    ok: bool
    dominance_margin: float
    supersolution_margins: Dict[str, float]


def comparison_check(v: GridField, barrier: BarrierSpec, dom: TruncatedDomain, geometry: SectorGeometry,
                     mu: np.ndarray, tol: float = 1e-12) -> ComparisonReport:
    """Nodewise |v| <= barrier, plus the barrier's interior, wedge and shock inequalities on the grid.

    The boundary margins use the operator's ghost-node stencils with the barrier sampled one step
    outside the sector.
    """
    r = dom.rbar()
    th = dom.thetabar()
    b = barrier.value(r, th)
    dominance = float(np.min(b - np.abs(v.values)))

    # discrete interior operator of the scaled Laplacian on the barrier
    lap = np.full(dom.shape, np.nan)
    hs2, ht2 = dom.hs ** 2, dom.ht ** 2
    core = (slice(1, -1), slice(1, -1))
    lap[core] = ((b[2:, 1:-1] - 2.0 * b[1:-1, 1:-1] + b[:-2, 1:-1]) / hs2
                 + (b[1:-1, 2:] - 2.0 * b[1:-1, 1:-1] + b[1:-1, :-2]) / ht2)
    # lap holds r^2 times the Laplacian
    interior = float(np.nanmin(-lap[core] * r[core] ** (-barrier.l)))

    rr = np.exp(dom.s)
    ht = dom.ht
    T = dom.T
    asm = _Assembler(dom, T, np.asarray(mu, dtype=float), "central")

    def ray(theta):
        return barrier.value(rr, np.full_like(rr, theta))

    def d_theta(theta):
        return (ray(theta + ht) - ray(theta - ht)) / (2.0 * ht)

    # the barrier does not depend on y3, so the mu3 part of the shock row drops out
    wedge_h = (T[0, 1] * np.gradient(ray(0.0), dom.s, edge_order=2) + T[1, 1] * d_theta(0.0)) / rr
    w = dom.omega_bar
    shock_h = (asm.A_s * np.gradient(ray(w), dom.s, edge_order=2) + asm.A_t * d_theta(w)) / rr
    wedge = float(np.min(-wedge_h * rr ** (1.0 - barrier.l)))
    shock = float(np.min(shock_h * rr ** (1.0 - barrier.l)))
    margins = {"interior": interior, "wedge": wedge, "shock": shock}
    ok = dominance >= -tol and all(m > 0.0 for m in margins.values())
    return ComparisonReport(ok=bool(ok), dominance_margin=dominance, supersolution_margins=margins)


def uniqueness_barrier(dom: TruncatedDomain, beta_prime: float, tau: float, tau2: float = 0.01,
                       C1: float = 1.0) -> np.ndarray:
    """v5 = tau (C1 v3 + v4), v3 = r^b' sin((b'+tau2) theta + pi/2 + tau2), v4 = |y|^b'."""
    v3 = BarrierSpec(l=beta_prime, t=beta_prime + tau2, theta0=0.5 * np.pi + tau2,
                     role="uniqueness-beta-prime").value(dom.rbar(), dom.thetabar())
    y = dom.coords()
    v4 = np.linalg.norm(y[..., :2], axis=-1) ** beta_prime
    return tau * (C1 * v3 + v4)


def crossing_radius(tau: float, C2: float, beta: float, beta_prime: float) -> float:
    """Radius where tau R^(b' - b) = C2, beyond which the uniqueness barrier dominates C2 r^b."""
    if not beta_prime > beta:
        raise ValueError("Uniqueness barrier needs beta' > beta")
    return float((C2 / tau) ** (1.0 / (beta_prime - beta)))


def dominance_radius(dom: TruncatedDomain, beta: float, beta_prime: float, tau: float, C2: float,
                     tau2: float = 0.01) -> float:
    """Smallest grid radius beyond which v5 >= C2 r^beta on every shell."""
    v5 = uniqueness_barrier(dom, beta_prime, tau, tau2)
    bound = C2 * dom.rbar() ** beta
    shell_ok = np.all((v5 - bound).reshape(dom.ns, -1) >= 0.0, axis=1)
    r = np.exp(dom.s)
    if not shell_ok[-1]:
        return float("inf")
    k = dom.ns - 1
    while k > 0 and shell_ok[k - 1]:
        k -= 1
    return float(r[k])
