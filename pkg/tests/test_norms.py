import numpy as np
import pytest

from services.errors import GridTooCoarseError
from services.norms import GridField, WeightSpec, derivative_tensors, weighted_c1, weighted_norm, weights


def square_field(values_fn, n=21, lo=0.0, hi=1.0, name="f"):
    x = np.linspace(lo, hi, n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    coords = np.stack([X, Y], axis=-1)
    return GridField(values=values_fn(X, Y), axes=(x, x), coords=coords, name=name)


def polar_field(values_fn, ns=41, nt=21, r_in=0.05, r_out=20.0, omega=1.0):
    s = np.linspace(np.log(r_in), np.log(r_out), ns)
    t = np.linspace(0.0, omega, nt)
    S, T = np.meshgrid(s, t, indexing="ij")
    r = np.exp(S)
    coords = np.stack([r * np.cos(T), r * np.sin(T)], axis=-1)
    return GridField(values=values_fn(r, T), axes=(s, t), coords=coords, name="polar")


def test_weights():
    spec = WeightSpec(tau=0.0, l=0.0)
    delta, big_delta = weights(np.array([[0.3, 0.4], [3.0, 4.0]]), spec)
    assert np.allclose(delta, [0.5, 1.0])
    assert np.allclose(big_delta, [1.5, 6.0])
    delta, big_delta = weights(np.array([[2.0, 0.0, 7.0]]), WeightSpec(tau=0.0, l=0.0, edge_axes=(0, 1),
                                                                       far_axes=(0,)))
    assert delta[0] == 1.0 and big_delta[0] == 3.0


def test_constant_field_norm():
    f = square_field(lambda x, y: np.full_like(x, 2.0))
    report = weighted_norm(f, WeightSpec(tau=0.0, l=0.0, k=2))
    assert report.seminorms[0] == pytest.approx(2.0)
    assert report.seminorms[1] == pytest.approx(0.0, abs=1e-12)
    assert report.holder == pytest.approx(0.0, abs=1e-12)
    assert report.total == pytest.approx(2.0)


def test_linear_field_is_differentiated_exactly():
    f = square_field(lambda x, y: 3.0 * x - y)
    report = weighted_norm(f, WeightSpec(tau=0.0, l=0.0, k=1))
    # first-order weight min(|x|, 1) (|x| + 1) peaks at the corner (1, 1)
    assert report.seminorms == pytest.approx([3.0, 3.0 * (1.0 + np.sqrt(2.0))])
    assert report.holder == pytest.approx(0.0, abs=1e-10)


def test_derivatives_on_curvilinear_grid():
    f = polar_field(lambda r, t: (r * np.cos(t)) ** 2 - (r * np.sin(t)) ** 2, ns=121)
    _, grad, hess = derivative_tensors(f, 2)
    y = f.coords
    exact = np.stack([2.0 * y[..., 0], -2.0 * y[..., 1]], axis=-1)
    scale = np.linalg.norm(y, axis=-1)[..., None]
    assert np.max(np.abs(grad - exact) / scale) < 0.02
    assert np.allclose(hess[10:30, 5:15, 0, 1], hess[10:30, 5:15, 1, 0])


def test_decay_weight_rewards_decaying_fields():
    """r^1.5 near the edge is bounded in the tau = -1.5 norm; the weight l = -1.5 keeps the far part O(1)."""
    f = polar_field(lambda r, t: r ** 1.5)
    spec = WeightSpec(tau=-1.5, l=-1.5, k=1)
    report = weighted_norm(f, spec, include_holder=False)
    assert report.seminorms[0] <= 1.0 + 1e-12
    assert report.total < 5.0


def test_holder_part_is_positive_for_curved_field():
    f = square_field(lambda x, y: x ** 2 + y ** 2, lo=1.0, hi=2.0)
    report = weighted_norm(f, WeightSpec(tau=0.0, l=0.0, k=1))
    assert report.holder > 0.0
    assert report.holder_pair is not None
    assert report.to_dict()["holder_pair"] is not None


def test_weighted_c1_excludes_holder():
    f = square_field(lambda x, y: np.sin(x) * y)
    full = weighted_norm(f, WeightSpec(tau=0.0, l=0.0, k=1), include_holder=False)
    assert weighted_c1(f, 0.0, 0.0) == pytest.approx(full.total)


def test_mask_restricts_maximum():
    f = square_field(lambda x, y: x)
    mask = np.zeros(f.values.shape, dtype=bool)
    mask[:5, :] = True
    report = weighted_norm(f, WeightSpec(tau=0.0, l=0.0, k=1), mask=mask, include_holder=False)
    assert report.seminorms[0] == pytest.approx(f.axes[0][4])


def test_too_coarse_grid():
    f = square_field(lambda x, y: x, n=3)
    with pytest.raises(GridTooCoarseError):
        weighted_norm(f, WeightSpec(tau=0.0, l=0.0, k=2))


def test_field_validation():
    x = np.linspace(0.0, 1.0, 5)
    with pytest.raises(ValueError):
        GridField(values=np.zeros(4), axes=(x,), coords=x[:, None])
    values = np.zeros(5)
    values[2] = np.nan
    with pytest.raises(ValueError):
        GridField(values=values, axes=(x,), coords=x[:, None])


def test_field_arithmetic():
    f = square_field(lambda x, y: x, name="a")
    g = square_field(lambda x, y: y, name="b")
    h = 2.0 * (f - g)
    assert np.allclose(h.values, 2.0 * (f.values - g.values))
    assert h.name == "a"


def test_triangle_inequality_and_homogeneity():
    spec = WeightSpec(tau=-1.2, l=-0.5, k=2)
    f = polar_field(lambda r, t: np.sin(r) * np.cos(2.0 * t))
    g = polar_field(lambda r, t: r ** 1.3 * t)
    n_f, n_g = weighted_norm(f, spec).total, weighted_norm(g, spec).total
    assert weighted_norm(f + g, spec).total <= n_f + n_g + 1e-12
    assert weighted_norm(3.0 * f, spec).total == pytest.approx(3.0 * n_f, rel=1e-12)


def test_restriction_does_not_increase_norm():
    spec = WeightSpec(tau=-1.2, l=-0.5, k=2)
    f = polar_field(lambda r, t: np.exp(-r) * np.sin(3.0 * t))
    mask = np.zeros(f.values.shape, dtype=bool)
    mask[5:30, 3:18] = True
    restricted = weighted_norm(f, spec, mask=mask)
    full = weighted_norm(f, spec)
    assert all(a <= b for a, b in zip(restricted.seminorms, full.seminorms))
    assert restricted.holder <= full.holder
    assert restricted.total <= full.total


def _edge_power(r_in_exponent):
    """r^(1 + alpha) on log-polar grids that share their nodes and reach r_out * 2^-m."""
    hs = np.log(2.0) / 8.0
    ns = 8 * r_in_exponent + 1
    return polar_field(lambda r, t: r ** 1.5, ns=ns, nt=21, r_in=4.0 * np.exp(-(ns - 1) * hs), r_out=4.0)


def test_edge_power_is_bounded_in_corner_weighted_norm():
    coarse, fine = _edge_power(9), _edge_power(13)
    spec = WeightSpec(tau=-1.5, l=-1.5, k=2, alpha=0.5)
    second_coarse = weighted_norm(coarse, spec, include_holder=False).seminorms[2]
    second_fine = weighted_norm(fine, spec, include_holder=False).seminorms[2]
    assert second_fine == pytest.approx(second_coarse, rel=1e-3)


def test_edge_power_blows_up_without_corner_weight():
    coarse, fine = _edge_power(9), _edge_power(13)
    # tau = -2 leaves D^2 unweighted; |D^2 r^1.5| ~ r^-0.5 grows by 16^0.5 = 4
    spec = WeightSpec(tau=-2.0, l=-1.5, k=2, alpha=0.5)
    second_coarse = weighted_norm(coarse, spec, include_holder=False).seminorms[2]
    second_fine = weighted_norm(fine, spec, include_holder=False).seminorms[2]
    assert second_fine > 3.0 * second_coarse


def test_norm_is_cauchy_under_refinement():
    center = 4.5 * np.array([np.cos(1.0), np.sin(1.0)])

    def gaussian(r, t):
        dx, dy = r * np.cos(t) - center[0], r * np.sin(t) - center[1]
        return np.exp(-(dx * dx + dy * dy) / 4.0)

    spec = WeightSpec(tau=0.0, l=-2.5, k=2, alpha=0.5)
    coarse = weighted_norm(polar_field(gaussian, ns=129, nt=129, r_in=0.5, r_out=12.0, omega=2.0), spec)
    fine = weighted_norm(polar_field(gaussian, ns=257, nt=257, r_in=0.5, r_out=12.0, omega=2.0), spec)
    assert abs(coarse.total - fine.total) <= 0.05 * fine.total
    assert abs(coarse.holder - fine.holder) <= 0.05 * fine.holder
