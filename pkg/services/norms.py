# services/norms.py
import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from services.errors import GridTooCoarseError

NEIGHBOR_RADIUS = 2
LONG_RANGE_NODES = 256


@dataclass
class GridField:
    """Scalar field on a structured grid.

    ``axes`` are the computational coordinates (one 1-D array per array axis) and
    ``coords`` the physical coordinates of every node, shape ``values.shape + (dim,)``.
    """

    values: np.ndarray
    axes: Tuple[np.ndarray, ...]
    coords: np.ndarray
    name: str = "field"
    iteration: Optional[int] = None
    boundary: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        self.coords = np.asarray(self.coords, dtype=float)
        if self.values.shape != tuple(len(a) for a in self.axes):
            raise ValueError(f"Field shape {self.values.shape} does not match its axes")
        if self.coords.shape[:-1] != self.values.shape:
            raise ValueError("Coordinate array must have shape values.shape + (dim,)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"Field {self.name!r} contains non-finite values")

    @property
    def dim(self) -> int:
        return self.coords.shape[-1]

    def with_values(self, values: np.ndarray, name: Optional[str] = None,
                    iteration: Optional[int] = None) -> "GridField":
        return GridField(values=values, axes=self.axes, coords=self.coords,
                         name=name or self.name, iteration=iteration, boundary=self.boundary)

    def __add__(self, other: "GridField") -> "GridField":
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "GridField") -> "GridField":
        return self.with_values(self.values - other.values)

    def __mul__(self, factor: float) -> "GridField":
        return self.with_values(factor * self.values)

    __rmul__ = __mul__


@dataclass(frozen=True)
class WeightSpec:
    """Weights of the norm: corner exponent tau, decay exponent l, order k, Hoelder exponent alpha.

    ``edge_axes``: coordinate components whose Euclidean norm is the distance to the edge.
    ``far_axes``: components entering Delta_x = |x[far_axes]| + 1.
    """

    tau: float
    l: float
    k: int = 2
    alpha: float = 0.5
    edge_axes: Tuple[int, ...] = (0, 1)
    far_axes: Tuple[int, ...] = (0, 1)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.k not in (0, 1, 2, 3):
            raise ValueError(f"k must be 0..3, got {self.k}")

    @classmethod
    def planar(cls, tau: float, l: float, k: int = 2, alpha: float = 0.5) -> "WeightSpec":
        """(x1, x3)-plane variant: edge at x1 = 0, Delta_x = |x1| + 1."""
        return cls(tau=tau, l=l, k=k, alpha=alpha, edge_axes=(0,), far_axes=(0,))


@dataclass
class NormReport:
    seminorms: List[float]
    holder: float
    total: float
    argmax: List[Optional[Tuple[int, ...]]] = field(default_factory=list)
    holder_pair: Optional[Tuple[Tuple[int, ...], Tuple[int, ...]]] = None

    def to_dict(self) -> Dict:
        return {
            "seminorms": self.seminorms,
            "holder": self.holder,
            "total": self.total,
            "argmax": [list(a) if a is not None else None for a in self.argmax],
            "holder_pair": [list(p) for p in self.holder_pair] if self.holder_pair else None,
        }


def weights(x, spec: WeightSpec) -> Tuple[np.ndarray, np.ndarray]:
    """(delta_x, Delta_x) for points x of shape (..., dim)."""
    x = np.asarray(x, dtype=float)
    edge_dist = np.linalg.norm(x[..., list(spec.edge_axes)], axis=-1)
    delta = np.minimum(edge_dist, 1.0)
    big_delta = np.linalg.norm(x[..., list(spec.far_axes)], axis=-1) + 1.0
    return delta, big_delta


def pair_weights(x, xp, spec: WeightSpec) -> Tuple[np.ndarray, np.ndarray]:
    d, D = weights(x, spec)
    dp, Dp = weights(xp, spec)
    return np.minimum(d, dp), np.minimum(D, Dp)


def _metric_inverse(f: GridField) -> np.ndarray:
    """Inverse of M[a, b] = d x_b / d xi_a at every node."""
    ndim = f.values.ndim
    if f.dim != ndim:
        raise ValueError(f"Field {f.name!r}: {ndim} grid axes but {f.dim} physical coordinates")
    M = np.empty(f.values.shape + (ndim, ndim))
    for b in range(ndim):
        grads = np.gradient(f.coords[..., b], *f.axes, edge_order=2)
        if ndim == 1:
            grads = [grads]
        for a in range(ndim):
            M[..., a, b] = grads[a]
    return np.linalg.inv(M)


def physical_gradient(values: np.ndarray, f: GridField, M_inv: Optional[np.ndarray] = None) -> np.ndarray:
    """Gradient in physical coordinates, shape values.shape + (dim,)."""
    if M_inv is None:
        M_inv = _metric_inverse(f)
    grads = np.gradient(values, *f.axes, edge_order=2)
    if values.ndim == 1:
        grads = [grads]
    d_xi = np.stack(grads, axis=-1)
    return np.einsum("...ba,...a->...b", M_inv, d_xi)


def derivative_tensors(f: GridField, k: int) -> List[np.ndarray]:
    """[f, Df, D^2 f, ...] up to order k; order j has shape values.shape + (dim,) * j."""
    M_inv = _metric_inverse(f)
    out = [f.values]
    current = f.values
    for order in range(1, k + 1):
        flat = current.reshape(f.values.shape + (-1,))
        comps = [physical_gradient(flat[..., c], f, M_inv) for c in range(flat.shape[-1])]
        stacked = np.stack(comps, axis=-2).reshape(f.values.shape + (f.dim,) * order)
        # symmetrize mixed partials
        perms = list(itertools.permutations(range(order)))
        base = len(f.values.shape)
        sym = sum(np.transpose(stacked, tuple(range(base)) + tuple(base + p for p in perm)) for perm in perms)
        current = sym / len(perms)
        out.append(current)
    return out


def _components(tensor: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    return tensor.reshape(shape + (-1,))


def _neighbor_offsets(ndim: int) -> List[Tuple[int, ...]]:
    rng = range(-NEIGHBOR_RADIUS, NEIGHBOR_RADIUS + 1)
    offsets = [o for o in itertools.product(rng, repeat=ndim) if any(o)]
    # one of each +/- pair
    return [o for o in offsets if o > tuple(-c for c in o)]


def _lattice_sample(shape) -> np.ndarray:
    """Flat indices of a lattice of 2^p + 1 points per axis with about LONG_RANGE_NODES nodes in total."""
    per_axis = 2 ** int(np.ceil(np.log2(LONG_RANGE_NODES ** (1.0 / len(shape))))) + 1
    picks = [np.unique(np.round(np.linspace(0, n - 1, min(per_axis, n))).astype(int)) for n in shape]
    grids = np.meshgrid(*picks, indexing="ij")
    return np.ravel_multi_index(tuple(g.ravel() for g in grids), shape)


def _shifted_slices(shape, offset):
    a, b = [], []
    for n, o in zip(shape, offset):
        if o >= 0:
            a.append(slice(0, n - o))
            b.append(slice(o, n))
        else:
            a.append(slice(-o, n))
            b.append(slice(0, n + o))
    return tuple(a), tuple(b)


class WeightedNorm:
    """Discrete weighted Hoelder norm; the Hoelder part is a lower bound of the continuum seminorm."""

    def __init__(self, spec: WeightSpec):
        self.spec = spec
        self.logger = logging.getLogger(__name__)

    def evaluate(self, f: GridField, include_holder: bool = True,
                 mask: Optional[np.ndarray] = None) -> NormReport:
        spec = self.spec
        shape = f.values.shape
        min_nodes = max(3, spec.k + 2)
        if min(shape) < min_nodes:
            raise GridTooCoarseError(f"Grid {shape} too coarse for order-{spec.k} stencils (need {min_nodes} nodes)")
        if mask is None:
            mask = np.ones(shape, dtype=bool)

        delta, big_delta = weights(f.coords, spec)
        tensors = derivative_tensors(f, spec.k)

        seminorms, argmax = [], []
        for j, tensor in enumerate(tensors):
            magnitude = np.max(np.abs(_components(tensor, shape)), axis=-1)
            weighted = delta ** max(j + spec.tau, 0.0) * big_delta ** (spec.l + j) * magnitude
            weighted = np.where(mask, weighted, -np.inf)
            flat = int(np.argmax(weighted))
            best = float(weighted.flat[flat])
            if not np.isfinite(best):
                seminorms.append(0.0)
                argmax.append(None)
                continue
            seminorms.append(best)
            argmax.append(tuple(int(i) for i in np.unravel_index(flat, shape)))

        holder, pair = 0.0, None
        if include_holder:
            holder, pair = self._holder(f, _components(tensors[spec.k], shape), mask)
        total = float(sum(seminorms) + holder)
        self.logger.debug(f"{f.name}: seminorms {seminorms}, holder {holder:.3e}")
        return NormReport(seminorms=seminorms, holder=holder, total=total, argmax=argmax, holder_pair=pair)

    def _pair_term(self, comps_a, comps_b, xa, xb):
        spec = self.spec
        dist = np.linalg.norm(xa - xb, axis=-1)
        d, D = pair_weights(xa, xb, spec)
        diff = np.max(np.abs(comps_a - comps_b), axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            value = (d ** max(spec.k + spec.alpha + spec.tau, 0.0) * D ** (spec.l + spec.k + spec.alpha)
                     * diff / dist ** spec.alpha)
        return np.where(dist > 0.0, value, 0.0)

    def _holder(self, f: GridField, comps: np.ndarray, mask: np.ndarray):
        shape = f.values.shape
        best, pair = 0.0, None
        for offset in _neighbor_offsets(len(shape)):
            if any(abs(o) >= n for o, n in zip(offset, shape)):
                continue
            sa, sb = _shifted_slices(shape, offset)
            value = self._pair_term(comps[sa], comps[sb], f.coords[sa], f.coords[sb])
            value = np.where(mask[sa] & mask[sb], value, 0.0)
            k = int(np.argmax(value))
            if value.flat[k] > best:
                best = float(value.flat[k])
                local = np.unravel_index(k, value.shape)
                ia = tuple(int(s.start + i) for s, i in zip(sa, local))
                ib = tuple(int(s.start + i) for s, i in zip(sb, local))
                pair = (ia, ib)

        # long-range sample on a per-axis lattice; dyadic refinements share its points
        n_total = int(np.prod(shape))
        flat_idx = _lattice_sample(shape)
        flat_idx = flat_idx[mask.ravel()[flat_idx]]
        if flat_idx.size > 1:
            c = comps.reshape(n_total, -1)[flat_idx]
            x = f.coords.reshape(n_total, -1)[flat_idx]
            ia, ib = np.triu_indices(flat_idx.size, k=1)
            value = self._pair_term(c[ia], c[ib], x[ia], x[ib])
            k = int(np.argmax(value))
            if value[k] > best:
                best = float(value[k])
                pair = (tuple(int(i) for i in np.unravel_index(flat_idx[ia[k]], shape)),
                        tuple(int(i) for i in np.unravel_index(flat_idx[ib[k]], shape)))
        return best, pair


def weighted_norm(f: GridField, spec: WeightSpec, include_holder: bool = True,
                  mask: Optional[np.ndarray] = None) -> NormReport:
    return WeightedNorm(spec).evaluate(f, include_holder=include_holder, mask=mask)


def weighted_c1(f: GridField, tau: float, l: float, edge_axes: Sequence[int] = (0, 1),
                far_axes: Sequence[int] = (0, 1), mask: Optional[np.ndarray] = None) -> float:
    """Weighted C^1 part of the norm (no Hoelder pairs); used as an iteration distance."""
    spec = WeightSpec(tau=tau, l=l, k=1, alpha=0.5, edge_axes=tuple(edge_axes), far_axes=tuple(far_axes))
    return weighted_norm(f, spec, include_holder=False, mask=mask).total
