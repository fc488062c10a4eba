import numpy as np
import pytest

from services.errors import TransformSingularError
from services.geometry import (
    Bump,
    CoordinateTransform,
    ShockPerturbation,
    WedgeGeometry,
    bump_profile,
    cutoff,
    forward,
    jacobian,
    measure_extension_constant,
    mollify_extend,
)
from services.norms import WeightSpec

SIGMA = 0.8


@pytest.fixture
def wedge():
    return WedgeGeometry.from_bumps([Bump(1e-3, center1=2.0, width1=1.0)])


@pytest.fixture
def shock():
    y2 = np.linspace(0.0, 6.0, 61)
    return ShockPerturbation(SIGMA, y2, 1e-3 * y2 * np.exp(-y2))


def test_bump_profile_support_and_peak():
    assert bump_profile(0.0) == pytest.approx(1.0)
    assert np.all(bump_profile(np.array([-1.5, -1.0, 1.0, 2.0])) == 0.0)


@pytest.mark.parametrize("nu", [1, 2])
def test_bump_profile_derivatives(nu):
    s = np.linspace(-0.9, 0.9, 7)
    h = 1e-5
    fd = (bump_profile(s + h, nu - 1) - bump_profile(s - h, nu - 1)) / (2.0 * h)
    assert np.allclose(bump_profile(s, nu), fd, atol=1e-6)


def test_cutoff_plateau_and_support():
    assert np.all(cutoff(np.linspace(-1.0, 1.0, 11)) == 1.0)
    assert np.all(cutoff(np.array([-3.0, -2.0, 2.0, 2.5])) == 0.0)
    t = np.linspace(1.05, 1.95, 9)
    h = 1e-6
    assert np.allclose(cutoff(t, 1), (cutoff(t + h) - cutoff(t - h)) / (2.0 * h), atol=1e-6)
    assert np.allclose(cutoff(t, 2), (cutoff(t + h, 1) - cutoff(t - h, 1)) / (2.0 * h), atol=1e-5)


def test_edge_bumps_must_not_depend_on_x1():
    with pytest.raises(ValueError):
        WedgeGeometry.from_bumps(e1_bumps=[Bump(1e-3, width1=1.0)])


def test_wedge_geometry_queries(wedge):
    assert not wedge.is_flat
    assert wedge.is_planar
    assert wedge.amplitude == pytest.approx(1e-3)
    assert wedge.height(2.0, 0.0) == pytest.approx(1e-3)
    assert wedge.height(5.0, 0.0) == 0.0
    point = wedge.edge_point(np.array([0.0, 1.0]))
    assert point.shape == (2, 3)
    assert np.allclose(point[:, 0], 0.0)
    assert wedge.scaled(2.0).amplitude == pytest.approx(2e-3)


def test_shock_attaches_to_edge():
    edge = WedgeGeometry.from_bumps(e1_bumps=[Bump(2e-3, center3=0.0, width3=1.0)]).e1
    y2 = np.linspace(0.0, 4.0, 21)
    y3 = np.linspace(-2.0, 2.0, 17)
    values = np.full((21, 17), 5e-4)
    sp = ShockPerturbation.from_values(SIGMA, y2, values, y3, edge)
    assert np.allclose(sp(np.zeros_like(y3), y3), edge(np.zeros_like(y3), y3))
    assert np.allclose(sp.node_values()[1:], 5e-4)


def test_extension_matches_shock_on_plane(shock):
    y2 = np.array([0.5, 1.0, 3.0])
    on_plane = np.stack([y2 / SIGMA, y2, np.zeros_like(y2)], axis=-1)
    assert np.allclose(shock.extension(on_plane), shock(y2, np.zeros_like(y2)), atol=1e-15)
    far = np.stack([y2 / SIGMA + 3.0 / SIGMA, y2, np.zeros_like(y2)], axis=-1)
    assert np.allclose(shock.extension(far), 0.0)


def test_extension_gradient_and_hessian(shock):
    # sigma y1 - y2 = 1.1 sits on the slope of the cutoff
    y = np.array([2.5, 0.9, 0.0])
    _, grad, hess = shock.extension(y, order=2)
    h = 1e-5
    for i, e in enumerate(np.eye(3)):
        fd = (shock.extension(y + h * e) - shock.extension(y - h * e)) / (2.0 * h)
        assert grad[i] == pytest.approx(fd, abs=1e-9)
        _, gp = shock.extension(y + h * e, order=1)
        _, gm = shock.extension(y - h * e, order=1)
        assert np.allclose(hess[i], (gp - gm) / (2.0 * h), atol=1e-7)


def test_mollified_extension_is_the_transform_shift(wedge, shock):
    extend = mollify_extend(shock)
    y = np.array([[1.0, 0.8, 0.0], [2.2, 0.4, 0.0]])
    x = forward(CoordinateTransform(wedge, shock).inverse(y), wedge, shock)
    assert np.allclose(x, y, atol=1e-12)
    assert np.allclose(CoordinateTransform(wedge, shock).inverse(y)[:, 0] - y[:, 0], extend(y))
    J = jacobian(y, wedge, shock, second=False)
    assert J.shape == (2, 3, 3)


def test_identity_transform_for_flat_data():
    sp = ShockPerturbation.zero(SIGMA, np.linspace(0.0, 5.0, 11))
    transform = CoordinateTransform(WedgeGeometry(), sp)
    y = np.array([[0.5, 0.3, 0.0], [2.0, 1.0, 0.0]])
    J, Y2 = transform.jacobian(y)
    assert np.allclose(J, np.eye(3))
    assert np.allclose(Y2, 0.0)
    assert np.allclose(transform.inverse(y), y)


def test_forward_inverts_inverse(wedge, shock):
    transform = CoordinateTransform(wedge, shock)
    y = np.array([[1.0, 0.8, 0.0], [2.2, 0.4, 0.0], [0.3, 1.5, 0.0]])
    assert np.allclose(transform.forward(transform.inverse(y)), y, atol=1e-12)


def test_jacobian_inverts_map_derivative(wedge, shock):
    transform = CoordinateTransform(wedge, shock)
    y = np.array([1.7, 0.6, 0.0])
    h = 1e-6
    dx_dy = np.stack([(transform.inverse(y + h * e) - transform.inverse(y - h * e)) / (2.0 * h)
                      for e in np.eye(3)], axis=-1)
    J = transform.jacobian(y, second=False)
    assert np.allclose(J @ dx_dy, np.eye(3), atol=1e-6)
    assert transform.determinant(y) > 0.0


def test_large_perturbation_is_singular():
    y2 = np.linspace(0.0, 4.0, 41)
    sp = ShockPerturbation(SIGMA, y2, 2.0 * y2)
    transform = CoordinateTransform(WedgeGeometry(), sp)
    with pytest.raises(TransformSingularError):
        transform.jacobian(np.array([3.125, 1.0, 0.0]))


def test_extension_constant_is_finite(shock):
    spec = WeightSpec.planar(tau=-1.2, l=-0.2)
    report = measure_extension_constant(shock, spec, n1=31, n2=31)
    assert report["shock_norm"] > 0.0
    assert np.isfinite(report["constant"])
    assert report["constant"] > 0.0
