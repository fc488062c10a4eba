import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, strategies as st

from services.elliptic import (
    CUT,
    SHOCK,
    WEDGE,
    EllipticSolver,
    TruncatedDomain,
    comparison_check,
    compact_source,
    crossing_radius,
    decay_fit,
    dominance_radius,
    scaling_matrix,
    solve_mixed_bvp,
    truncation_study,
    uniqueness_barrier,
)
from services.errors import ConfigError
from services.polar import ShockPolar, UpstreamSpec
from services.stability import BarrierSpec, obliqueness_mu

# oblique vector for the isotropic sector: v_y2 on the shock ray theta = pi/4
MU_ISO = np.array([0.0, 1.0, 0.0])


def harmonic(y):
    return y[..., 0] ** 2 - y[..., 1] ** 2


def harmonic_data(dom):
    y = dom.coords()
    shock_y2 = np.exp(dom.s) * np.sin(dom.omega_bar)
    cut = np.zeros(dom.shape)
    cut[0] = harmonic(y[0])
    cut[-1] = harmonic(y[-1])
    return harmonic(y), np.zeros(dom.ns), -2.0 * shock_y2, cut


def barrier_data(dom, certificate, fraction=0.5):
    barrier = BarrierSpec.decay(certificate.beta, certificate.tau0)
    geometry = certificate.geometry
    r, th, rs = dom.rbar(), dom.thetabar(), np.exp(dom.s)
    return (barrier, fraction * barrier.laplacian(r, th), fraction * barrier.wedge_derivative(rs, geometry),
            fraction * barrier.shock_derivative(rs, geometry), fraction * barrier.value(r, th))


def test_scaling_matrix_normalizes_coefficients(certificate):
    T = scaling_matrix(certificate.a0)
    assert np.allclose(T @ certificate.a0[:2, :2] @ T.T, np.eye(2))
    assert np.allclose(np.diag(T), certificate.d[:2])


def test_domain_layout(planar_domain, certificate):
    dom = planar_domain
    assert dom.omega_bar == pytest.approx(certificate.omega_bar)
    assert dom.r_in == pytest.approx(1.0 / 16.0) and dom.r_out == pytest.approx(16.0)
    codes = dom.boundary_codes()
    assert np.all(codes[1:-1, 0] == WEDGE)
    assert np.all(codes[1:-1, -1] == SHOCK)
    assert np.all(codes[0] == CUT) and np.all(codes[-1] == CUT)
    # shock nodes lie on the physical plane y2 = sigma y1
    y = dom.coords()[:, -1]
    assert np.allclose(y[:, 1], certificate.sigma * y[:, 0])
    assert np.allclose(dom.coords()[:, 0, 1], 0.0)


@pytest.mark.parametrize("kwargs", [{"R": 3.0}, {"ns": 2}, {"sigma": -1.0}])
def test_domain_rejects_bad_parameters(kwargs):
    params = dict(R=8.0, sigma=1.0, T=np.eye(2), ns=9, nt=9)
    params.update(kwargs)
    with pytest.raises(ConfigError):
        TruncatedDomain(**params)


def test_zero_data_gives_zero(isotropic_domain):
    solver = EllipticSolver(np.eye(3), isotropic_domain, MU_ISO)
    result = solver.solve(0.0, 0.0, 0.0)
    assert result.method == "trivial"
    assert np.all(result.field.values == 0.0)


def test_recovers_harmonic_polynomial(isotropic_domain):
    dom = isotropic_domain
    exact, g1, g2, cut = harmonic_data(dom)
    solver = EllipticSolver(np.eye(3), dom, MU_ISO)
    result = solver.solve(0.0, g1, g2, boundary_values=cut)
    error = np.max(np.abs(result.field.values - exact)) / np.max(np.abs(exact))
    assert error < 2e-2
    assert result.relative_residual <= 1e-9


def cubic(y):
    """q = y1^3 + y1 y2^2 with its gradient and Hessian entries (q11, q12, q22)."""
    y1, y2 = y[..., 0], y[..., 1]
    return y1 ** 3 + y1 * y2 ** 2, (3.0 * y1 ** 2 + y2 ** 2, 2.0 * y1 * y2), (6.0 * y1, 2.0 * y2, 2.0 * y1)


def relative_error(field, exact):
    return np.max(np.abs(field.values - exact)) / np.max(np.abs(exact))


@pytest.mark.slow
def test_second_order_convergence(certificate):
    a, mu = certificate.a0, certificate.mu
    errors = []
    for ns, nt in ((33, 17), (65, 33), (129, 65)):
        dom = TruncatedDomain.from_coefficients(a, certificate.sigma, R=8.0, ns=ns, nt=nt)
        y = dom.coords()
        exact, _, (q11, q12, q22) = cubic(y)
        f1 = a[0, 0] * q11 + 2.0 * a[0, 1] * q12 + a[1, 1] * q22
        _, (q1, q2), _ = cubic(y[:, 0])
        g1 = q2
        _, (q1, q2), _ = cubic(y[:, -1])
        g2 = mu[0] * q1 + mu[1] * q2
        cut = np.zeros(dom.shape)
        cut[[0, -1]] = exact[[0, -1]]
        field = EllipticSolver(a, dom, mu).solve(f1, g1, g2, boundary_values=cut).field
        errors.append(relative_error(field, exact))
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(orders >= 1.9)


@pytest.fixture(scope="module")
def oblique_background(gas):
    """Incidence 75 degrees: a0 and mu both couple y3 to the plane."""
    polar = ShockPolar(UpstreamSpec(q0=1.3, theta_i=np.radians(75.0), gas=gas))
    angles = polar.critical_angles()
    return polar.background(angles["theta_s_star"] + 0.3 * (angles["theta_w_star"] - angles["theta_s_star"]))


@pytest.mark.slow
def test_second_order_convergence_in_three_dimensions(gas, oblique_background):
    bg = oblique_background
    a = gas.coefficients(bg.downstream)
    mu = obliqueness_mu(gas, bg.upstream, bg.downstream)
    assert abs(a[0, 2]) > 1e-3 and abs(mu[2]) > 1e-3
    errors = []
    for ns, nt in ((33, 17), (65, 33), (129, 65)):
        # capped y3 with a linear factor: the z stencils are exact, every error comes from the plane
        dom = TruncatedDomain.from_coefficients(a, bg.sigma, R=8.0, ns=ns, nt=nt, nz=5, periodic=False,
                                                z_length=2.0)
        y = dom.coords()
        zeta = 1.0 + 0.5 * y[..., 2]
        q, (q1, q2), (q11, q12, q22) = cubic(y)
        exact = q * zeta
        f1 = (zeta * (a[0, 0] * q11 + 2.0 * a[0, 1] * q12 + a[1, 1] * q22)
              + a[0, 2] * q1 + a[1, 2] * q2)
        g1 = q2[:, 0] * zeta[:, 0]
        g2 = (mu[0] * q1[:, -1] + mu[1] * q2[:, -1]) * zeta[:, -1] + 0.5 * mu[2] * q[:, -1]
        cut = np.zeros(dom.shape)
        cut[[0, -1]] = exact[[0, -1]]
        cut[..., [0, -1]] = exact[..., [0, -1]]
        field = EllipticSolver(a, dom, mu).solve(f1, g1, g2, boundary_values=cut).field
        errors.append(relative_error(field, exact))
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(orders >= 1.9)


def test_periodic_three_dimensional_solve_recovers_mode(gas, oblique_background):
    bg = oblique_background
    a = gas.coefficients(bg.downstream)
    mu = obliqueness_mu(gas, bg.upstream, bg.downstream)
    dom = TruncatedDomain.from_coefficients(a, bg.sigma, R=8.0, ns=33, nt=17, nz=16)
    assert dom.periodic and dom.boundary_codes()[5, 5, 0] == 0
    y = dom.coords()
    q, (q1, q2), (q11, q12, q22) = cubic(y)
    c, s = np.cos(y[..., 2]), np.sin(y[..., 2])
    exact = q * c
    f1 = (c * (a[0, 0] * q11 + 2.0 * a[0, 1] * q12 + a[1, 1] * q22)
          - 2.0 * s * (a[0, 2] * q1 + a[1, 2] * q2) - a[2, 2] * q * c)
    g1 = q2[:, 0] * c[:, 0]
    g2 = (mu[0] * q1[:, -1] + mu[1] * q2[:, -1]) * c[:, -1] - mu[2] * q[:, -1] * s[:, -1]
    cut = np.zeros(dom.shape)
    cut[[0, -1]] = exact[[0, -1]]
    result = EllipticSolver(a, dom, mu).solve(f1, g1, g2, boundary_values=cut)
    assert result.field.values.shape == (33, 17, 16)
    assert relative_error(result.field, exact) < 5e-2


def test_interior_operator_on_harmonic(isotropic_domain):
    dom = isotropic_domain
    op = EllipticSolver(np.eye(3), dom, MU_ISO).operator
    exact = harmonic(dom.coords())
    residual = op.apply_interior(exact)
    assert np.all(np.isnan(residual[0]))
    assert np.nanmax(np.abs(residual)) < 0.05


def test_upwind_operator_is_m_matrix_and_keeps_sign(isotropic_domain):
    dom = isotropic_domain
    solver = EllipticSolver(np.eye(3), dom, MU_ISO, tangential="upwind")
    assert solver.operator.m_matrix
    r = dom.rbar()
    f1 = np.exp(-((r - 2.0) ** 2))
    g1 = np.where(np.exp(dom.s) < 1.0, 0.3, 0.0)
    g2 = -0.2 * np.exp(-np.exp(dom.s))
    v = solver.solve(f1, g1, g2).field.values
    assert np.max(v) <= 1e-8 * np.max(np.abs(v))
    assert np.min(v) < 0.0


def test_edge_value_is_attained(planar_domain, certificate):
    solver = EllipticSolver(certificate.a0, planar_domain, certificate.mu)
    result = solver.solve(0.0, 0.0, 0.0, g3=0.25)
    values = result.field.values
    # the inner cut sits at r = 1/R, well inside the cutoff plateau
    assert np.allclose(values[0], result.extension[0], atol=1e-6)
    assert np.max(np.abs(values[0] - 0.25)) < 0.1


def test_barrier_data_is_dominated(planar_domain, certificate):
    dom = planar_domain
    barrier, f1, g1, g2, cut = barrier_data(dom, certificate)
    field = EllipticSolver(certificate.a0, dom, certificate.mu).solve(f1, g1, g2, boundary_values=cut).field
    report = comparison_check(field, barrier, dom, certificate.geometry, certificate.mu, tol=1e-8)
    assert report.ok
    assert report.dominance_margin > 0.0
    assert all(m > 0.0 for m in report.supersolution_margins.values())


def test_solve_mixed_bvp_returns_field(planar_domain, certificate):
    _, f1, g1, g2, _ = barrier_data(planar_domain, certificate)
    v = solve_mixed_bvp(certificate.a0, planar_domain, certificate.mu, f1, g1, g2)
    assert v.values.shape == planar_domain.shape
    peak = np.max(np.abs(v.values))
    assert peak > 0.0
    assert np.max(np.abs(v.values[[0, -1]])) <= 1e-6 * peak


def test_zero_field_is_dominated(planar_domain, certificate):
    barrier = BarrierSpec.decay(certificate.beta, certificate.tau0)
    report = comparison_check(planar_domain.field(np.zeros(planar_domain.shape)), barrier, planar_domain,
                              certificate.geometry, certificate.mu)
    assert report.ok


def test_near_edge_slope_of_barrier_solution(certificate):
    dom = TruncatedDomain.from_coefficients(certificate.a0, certificate.sigma, R=64.0, ns=97, nt=33)
    _, f1, g1, g2, cut = barrier_data(dom, certificate)
    field = EllipticSolver(certificate.a0, dom, certificate.mu).solve(f1, g1, g2, boundary_values=cut).field
    fit = decay_fit(field, dom)
    assert fit.near_points >= 3
    assert fit.near_slope == pytest.approx(certificate.beta, abs=0.05)


def test_decay_fit_flags_short_range(planar_domain):
    v = planar_domain.field(planar_domain.rbar() ** 0.5)
    fit = decay_fit(v, planar_domain, near_range=(0.5, 0.6))
    assert fit.warnings
    assert fit.near_points < 3
    assert np.isnan(fit.near_slope)


def edge_slope(a, mu, sigma, ns, nt, R=256.0):
    dom = TruncatedDomain.from_coefficients(a, sigma, R=R, ns=ns, nt=nt)
    field = EllipticSolver(a, dom, mu).solve(compact_source(dom), 0.0, 0.0).field
    fit = decay_fit(field, dom, near_range=(8.0 / R, 0.2))
    assert fit.near_points >= 3
    return fit.near_slope


@pytest.mark.slow
@pytest.mark.parametrize("ns,nt", [(129, 17), (257, 33), (513, 65)])
def test_certified_solution_vanishes_like_corner_power(certificate, ns, nt):
    slope = edge_slope(certificate.a0, certificate.mu, certificate.sigma, ns, nt)
    assert slope >= 1.0 + certificate.alpha - 0.1


@pytest.mark.slow
def test_strongly_tilted_oblique_vector_loses_regularity(certificate):
    T = scaling_matrix(certificate.a0)
    # scaled oblique direction past the normal: the leading corner exponent is 0.7
    phi = 0.5 * np.pi + 0.3 * certificate.omega_bar
    mu = np.zeros(3)
    mu[:2] = np.linalg.solve(T, np.array([np.cos(phi), np.sin(phi)]))
    slope = edge_slope(certificate.a0, mu, certificate.sigma, 129, 33)
    assert slope < 0.95


@given(st.floats(min_value=0.1, max_value=2.0), st.floats(min_value=0.5, max_value=4.0),
       st.floats(min_value=0.0, max_value=1.0), st.floats(min_value=0.0, max_value=1.0),
       st.floats(min_value=0.2, max_value=3.0))
def test_upwind_solution_keeps_sign_of_data(f_amp, f_center, g1_amp, g2_amp, g_scale):
    dom = TruncatedDomain(R=8.0, sigma=1.0, T=np.eye(2), ns=33, nt=17)
    solver = EllipticSolver(np.eye(3), dom, MU_ISO, tangential="upwind")
    assert solver.operator.m_matrix
    rs = np.exp(dom.s)
    f1 = f_amp * np.exp(-((dom.rbar() - f_center) ** 2))
    g1 = g1_amp * np.exp(-rs / g_scale)
    g2 = -g2_amp * np.exp(-((rs - g_scale) ** 2))
    v = spla.spsolve(solver.operator.matrix.tocsc(), solver.rhs(f1, g1, g2))
    assert np.max(v) <= 1e-10 * np.max(np.abs(v))


def test_discrete_boundary_margins_approach_continuous_ones(certificate):
    barrier = BarrierSpec.decay(certificate.beta, certificate.tau0)
    geometry = certificate.geometry
    gaps = []
    for ns, nt in ((48, 24), (95, 47)):
        dom = TruncatedDomain.from_coefficients(certificate.a0, certificate.sigma, R=16.0, ns=ns, nt=nt)
        m = dom.T @ certificate.mu[:2]
        w = dom.omega_bar
        A_s = m[0] * np.cos(w) + m[1] * np.sin(w)
        A_t = -m[0] * np.sin(w) + m[1] * np.cos(w)
        angle = barrier.t * w + barrier.theta0
        exact = {
            "wedge": -dom.T[1, 1] * barrier.t * np.cos(barrier.theta0),
            "shock": A_s * barrier.l * np.sin(angle) + A_t * barrier.t * np.cos(angle),
        }
        report = comparison_check(dom.field(np.zeros(dom.shape)), barrier, dom, geometry, certificate.mu)
        assert report.ok
        assert exact["wedge"] == pytest.approx(-barrier.wedge_derivative(1.0, geometry))
        gaps.append({k: abs(report.supersolution_margins[k] - exact[k]) for k in exact})
    for key in ("wedge", "shock"):
        assert gaps[1][key] < gaps[0][key] / 3.0


def test_domain_rejects_unknown_outer_cut():
    with pytest.raises(ConfigError):
        TruncatedDomain(R=8.0, sigma=1.0, T=np.eye(2), ns=9, nt=9, outer="robin")


def test_neumann_outer_cut_keeps_constants(planar_domain, certificate):
    dom = TruncatedDomain.from_coefficients(certificate.a0, certificate.sigma, R=16.0, ns=48, nt=24,
                                            outer="neumann")
    solver = EllipticSolver(certificate.a0, dom, certificate.mu)
    assert solver.operator.pde_rows.size == dom.size - dom.nt
    # constants satisfy the wedge, shock and outer conditions; only the inner cut carries data
    v = solver.solve(0.0, 0.0, 0.0, boundary_values=np.ones(dom.shape)).field.values
    assert np.allclose(v, 1.0, atol=1e-6)
    dirichlet = EllipticSolver(certificate.a0, planar_domain, certificate.mu)
    assert dirichlet.operator.pde_rows.size == planar_domain.size - 2 * planar_domain.nt


def test_truncation_study_rejects_radius_off_the_octaves(certificate):
    with pytest.raises(ConfigError):
        truncation_study(certificate.a0, certificate.mu, certificate.sigma, R=24.0, nt=17)


def test_truncation_study_agrees_near_the_edge(certificate):
    report = truncation_study(certificate.a0, certificate.mu, certificate.sigma, R=16.0, nt=17, per_octave=6,
                              near_radius=2.0)
    assert report.R == 16.0 and report.outer == "dirichlet"
    assert 0.0 <= report.near_difference <= report.difference
    assert report.peak_radius <= 8.0
    assert report.near_difference < 0.05


@pytest.mark.slow
def test_neumann_outer_cut_is_stable_under_doubling(certificate):
    report = truncation_study(certificate.a0, certificate.mu, certificate.sigma, R=32.0, nt=33,
                              outer="neumann")
    assert report.difference <= 0.05


def test_crossing_radius_grows_as_tau_shrinks():
    radii = [crossing_radius(tau, C2=1.0, beta=0.3, beta_prime=0.5) for tau in (0.1, 0.05, 0.01)]
    assert radii == sorted(radii)
    assert crossing_radius(0.1, 1.0, 0.3, 0.5) ** 0.2 * 0.1 == pytest.approx(1.0)
    with pytest.raises(ValueError):
        crossing_radius(0.1, 1.0, 0.5, 0.3)


def test_uniqueness_barrier_dominates_far_out(certificate):
    dom = TruncatedDomain.from_coefficients(certificate.a0, certificate.sigma, R=1e4, ns=81, nt=9)
    v5 = uniqueness_barrier(dom, beta_prime=0.6, tau=0.5)
    assert np.all(v5 > 0.0)
    radius = dominance_radius(dom, beta=0.2, beta_prime=0.6, tau=0.5, C2=1.0)
    assert np.isfinite(radius)
    assert radius < dom.r_out
