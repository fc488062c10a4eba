import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from services.errors import DetachedError, GasDomainError, NotTransonicError
from services.gas import GasModel
from services.polar import (
    ShockPolar,
    UpstreamSpec,
    planar_shock_slope,
    rh_jump,
    solve_downstream_for_state,
)

vectors = st.lists(st.floats(min_value=-0.8, max_value=0.8), min_size=3, max_size=3)


def test_critical_angles_ordered(angles):
    assert 0.0 < angles["theta_s_star"] < angles["theta_w_star"] < 0.5 * np.pi


def test_roots_ordered_with_small_residuals(polar, background):
    roots = polar.solve_downstream(background.theta_w)
    assert roots.u_strong < roots.u_weak
    assert roots.residual_strong <= 1e-10
    assert roots.residual_weak <= 1e-10


def test_roots_bracket_dense_scan(gas, polar, background):
    U = polar.spec.upstream_state(background.theta_w)
    u = np.linspace(1e-6, U.u1 - 1e-6, 4001)
    states = np.stack([u, np.zeros_like(u), np.full_like(u, U.u3)], axis=-1)
    values = rh_jump(gas, U.vector, states)
    crossings = u[:-1][np.sign(values[:-1]) != np.sign(values[1:])]
    roots = polar.solve_downstream(background.theta_w)
    assert len(crossings) == 2
    assert crossings[0] == pytest.approx(roots.u_strong, abs=1e-3)
    assert crossings[1] == pytest.approx(roots.u_weak, abs=1e-3)


def test_background_invariants(gas, background):
    assert abs(rh_jump(gas, background.upstream, background.downstream)) <= 1e-10
    rho_minus, rho_plus = background.density_jump
    assert rho_minus < rho_plus
    assert background.sigma > 0.0
    assert gas.is_supersonic(background.upstream)
    assert gas.is_subsonic(background.downstream)
    # potentials agree on the shock plane x1 = x2 / sigma
    x = np.array([[1.0, background.sigma, 0.3], [2.5, 2.5 * background.sigma, -1.0]])
    assert np.allclose(background.phi0_minus(x), background.phi0_plus(x), atol=1e-12)


def test_shock_normal_points_out_of_subsonic_region(background):
    n = background.shock_normal
    assert np.linalg.norm(n) == pytest.approx(1.0)
    # downstream points 0 < x2 < sigma x1 lie on the negative side
    assert np.dot(n, [1.0, 0.0, 0.0]) < 0.0


def test_strong_branch_is_subsonic_with_smaller_speed(gas, polar, background):
    strong = polar.background(background.theta_w, branch="strong")
    assert strong.u0 < background.u0
    assert gas.is_subsonic(strong.downstream)


def test_detached_beyond_critical_angle(polar, angles):
    with pytest.raises(DetachedError) as info:
        polar.background(angles["theta_w_star"] + 1e-3)
    assert info.value.exit_code == 3


def test_not_transonic_below_sonic_angle(polar, angles):
    with pytest.raises(NotTransonicError) as info:
        polar.background(0.5 * angles["theta_s_star"])
    assert info.value.side == "sonic"
    assert info.value.exit_code == 4


def test_invalid_upstream(gas):
    with pytest.raises(GasDomainError):
        UpstreamSpec(q0=0.5, theta_i=0.5 * np.pi, gas=gas)
    with pytest.raises(GasDomainError):
        UpstreamSpec(q0=1.1, theta_i=0.0, gas=gas)


def test_polar_curve_is_concave(polar):
    diag = polar.polar_curve(61)
    curve = diag.curve
    assert curve["v1"].iloc[0] == pytest.approx(diag.v_s)
    assert curve["v1"].iloc[-1] == pytest.approx(diag.v_w)
    assert (curve["v2"].iloc[1:-1] > 0.0).all()
    assert diag.is_concave()


def test_oblique_upstream_keeps_edge_component(gas):
    """For theta_i != pi/2 the edge component is shared by both states."""
    spec = UpstreamSpec(q0=1.3, theta_i=np.radians(75.0), gas=gas)
    polar = ShockPolar(spec)
    angles = polar.critical_angles()
    theta_w = angles["theta_s_star"] + 0.3 * (angles["theta_w_star"] - angles["theta_s_star"])
    bg = polar.background(theta_w)
    assert bg.downstream.u3 == pytest.approx(bg.upstream.u3)
    assert bg.upstream.u3 == pytest.approx(1.3 * np.cos(np.radians(75.0)))


def test_downstream_for_generic_state(gas, background):
    roots = solve_downstream_for_state(gas, background.upstream.vector)
    assert roots.u_weak == pytest.approx(background.u0, abs=1e-11)
    with pytest.raises(GasDomainError):
        solve_downstream_for_state(gas, [1.0, 0.1, 0.0])


@given(vectors, vectors)
def test_jump_is_symmetric(u, v):
    gas = GasModel(1.4)
    assert rh_jump(gas, u, v) == pytest.approx(rh_jump(gas, v, u), abs=1e-12)


@given(vectors)
def test_jump_vanishes_on_diagonal(u):
    assert rh_jump(GasModel(1.4), u, u) == pytest.approx(0.0, abs=1e-15)


def test_polar_curve_marks_unbracketed_samples(polar, monkeypatch):
    monkeypatch.setattr("services.polar.rh_jump", lambda gas, u, v: 1.0)
    diag = polar.polar_curve(11)
    v2 = diag.curve["v2"].to_numpy()
    assert np.isnan(v2[1:-1]).all()
    assert v2[0] == 0.0 and v2[-1] == 0.0
    assert not diag.is_concave()


def test_polar_curve_rises_then_falls(polar):
    v2 = polar.polar_curve(61).curve["v2"].to_numpy()
    slopes = np.diff(v2)
    assert slopes[0] > 0.0
    assert slopes[-1] < 0.0


def test_weak_root_tends_to_upstream_speed(polar):
    """As the wedge flattens the weak shock degenerates to a Mach wave."""
    a = polar.spec.normal_speed
    errors = [abs(polar.solve_downstream(np.radians(deg)).u_weak - a) for deg in (1.0, 0.1, 0.01)]
    assert errors[1] < 0.2 * errors[0]
    assert errors[2] < 0.2 * errors[1]
    assert errors[2] < 1e-3


def test_sonic_angle_is_sonic(gas, polar, angles):
    u_weak = polar.solve_downstream(angles["theta_s_star"]).u_weak
    speed = np.hypot(u_weak, polar.spec.edge_speed)
    assert speed == pytest.approx(gas.critical_speed(), abs=1e-8)


def test_detachment_matches_dense_scan(gas, polar, angles):
    """Bisection on the existence of a sign change of H along u, sampled on a dense grid."""
    def has_crossing(theta):
        U = polar.spec.upstream_state(theta)
        u = np.linspace(0.0, U.u1, 4001)[1:-1]
        states = np.stack([u, np.zeros_like(u), np.zeros_like(u)], axis=-1)
        return bool(np.any(rh_jump(gas, U.vector, states) < 0.0))

    lo, hi = 1e-3, 1.0
    assert has_crossing(lo) and not has_crossing(hi)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if has_crossing(mid):
            lo = mid
        else:
            hi = mid
    assert lo == pytest.approx(angles["theta_w_star"], abs=1e-6)


def test_planar_shock_slope_of_background(gas, background):
    assert planar_shock_slope(gas, background.upstream.vector) == pytest.approx(background.sigma, rel=1e-9)
    faster = background.upstream.vector + np.array([1e-4, 0.0, 0.0])
    assert planar_shock_slope(gas, faster) != pytest.approx(background.sigma, rel=1e-8)
