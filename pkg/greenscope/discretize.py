"""
Cell-centred structured grids with embedded Dirichlet boundaries, nodal
scalar fields, C1 tensor-cubic interpolation and the binary field dump.
"""

from dataclasses import dataclass
import enum
import functools
import itertools
import logging
import math
import typing
import numpy as np
import numpy.typing as npt
import pandas as pd
from greenscope.errors import FormatError, ParameterError, VersionError
from greenscope.geometry import Array, Domain, as_points

logger = logging.getLogger(__name__)

NODE_BUDGET = 20_000_000
MIN_FRACTION = 1e-6
DUMP_MAGIC = b"GFND"
# Version 1 stored periodic flags only and no cut fractions
DUMP_VERSION = 2
_CHUNK = 1_000_000
# Mirrored layers added below reflecting axes for interpolation stencils
_MIRROR_LAYERS = 3


class NodeTag(enum.IntEnum):
    EXTERIOR = 0
    INTERIOR = 1
    BOUNDARY = 2


class AxisKind(enum.IntEnum):
    OPEN = 0
    PERIODIC = 1
    # Lower face is a symmetry plane through which the field is continued evenly
    REFLECTING = 2


BoolArray = npt.NDArray[np.bool_]


def shifted(
    arr: npt.NDArray[typing.Any],
    axis: int,
    offset: int,
    kind: AxisKind,
    fill: typing.Any,
) -> npt.NDArray[typing.Any]:
    """result[i] = arr[i + offset] along `axis`, continued per the axis kind."""
    if offset == 0:
        return arr
    if kind == AxisKind.PERIODIC:
        return np.roll(arr, -offset, axis=axis)
    size = arr.shape[axis]
    index = np.arange(size) + offset
    if kind == AxisKind.REFLECTING:
        # node -1-i mirrors node i
        index = np.where(index < 0, -1 - index, index)
    inside = (index >= 0) & (index < size)
    taken = np.take(arr, np.clip(index, 0, size - 1), axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = size
    return np.where(inside.reshape(shape), taken, fill)


@dataclass(frozen=True, eq=False)
class Grid:
    dims: tuple[int, ...]
    # Outer faces of the cell box; nodes sit at cell centres
    bbox: tuple[tuple[float, float], ...]
    axis_kinds: tuple[AxisKind, ...]
    mask: npt.NDArray[np.uint8]
    # Flat indices of boundary-adjacent nodes, ascending
    boundary_nodes: npt.NDArray[np.int64]
    # theta per boundary node, axis and side (0: towards -e_k, 1: towards +e_k)
    fractions: Array

    @property
    def dimension(self) -> int:
        return len(self.dims)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((hi - lo) / n for (lo, hi), n in zip(self.bbox, self.dims))

    @property
    def origin(self) -> tuple[float, ...]:
        return tuple(lo + 0.5 * h for (lo, _), h in zip(self.bbox, self.spacing))

    @property
    def periodic(self) -> tuple[bool, ...]:
        return tuple(k == AxisKind.PERIODIC for k in self.axis_kinds)

    @property
    def node_count(self) -> int:
        return int(np.prod(self.dims))

    @property
    def min_spacing(self) -> float:
        return min(self.spacing)

    @functools.cached_property
    def active_nodes(self) -> npt.NDArray[np.int64]:
        return np.flatnonzero(self.mask.ravel() != NodeTag.EXTERIOR).astype(np.int64)

    @property
    def active(self) -> BoolArray:
        return np.asarray(self.mask != NodeTag.EXTERIOR)

    def coordinates(self, axis: int) -> Array:
        return self.origin[axis] + np.arange(self.dims[axis]) * self.spacing[axis]

    def node_points(self, flat: npt.ArrayLike) -> Array:
        index = np.unravel_index(np.asarray(flat, dtype=np.int64), self.dims)
        return np.stack(
            [o + i * h for o, i, h in zip(self.origin, index, self.spacing)], axis=-1
        )

    def mesh(self) -> list[Array]:
        return list(
            np.meshgrid(
                *[self.coordinates(k) for k in range(self.dimension)], indexing="ij"
            )
        )

    def wrap(self, points: Array) -> Array:
        """Reduce periodic coordinates into the cell box."""
        wrapped = np.array(points, dtype=np.float64, copy=True)
        for k, (lo, hi) in enumerate(self.bbox):
            if self.axis_kinds[k] == AxisKind.PERIODIC:
                wrapped[..., k] = lo + np.mod(wrapped[..., k] - lo, hi - lo)
        return wrapped

    def displacement(self, points: Array, centre: npt.ArrayLike) -> Array:
        """points - centre, using the minimum image on periodic axes."""
        d = np.asarray(points, dtype=np.float64) - np.asarray(centre, dtype=np.float64)
        for k, (lo, hi) in enumerate(self.bbox):
            if self.axis_kinds[k] == AxisKind.PERIODIC:
                period = hi - lo
                d[..., k] = d[..., k] - period * np.round(d[..., k] / period)
        return d

    def nearest_node(self, point: npt.ArrayLike) -> tuple[int, ...]:
        p = self.wrap(as_points(point, self.dimension))[0]
        return tuple(
            int(np.clip(round((x - o) / h), 0, n - 1))
            for x, o, h, n in zip(p, self.origin, self.spacing, self.dims)
        )

    def neighbour(
        self, arr: npt.NDArray[typing.Any], axis: int, side: int, fill: typing.Any
    ) -> npt.NDArray[typing.Any]:
        return shifted(arr, axis, side, self.axis_kinds[axis], fill)

    def is_cut(self, axis: int, side: int) -> BoolArray:
        """Active nodes whose neighbour in direction side*e_axis is exterior."""
        nb_active = self.neighbour(self.active, axis, side, False)
        return np.asarray(self.active & ~nb_active)

    def fraction(self, axis: int, side: int) -> Array:
        """Dense theta for one direction, 1 where the edge is not cut."""
        dense = np.ones(self.node_count)
        dense[self.boundary_nodes] = self.fractions[:, axis, 0 if side < 0 else 1]
        return dense.reshape(self.dims)


def _axis_layout(
    lo: float, hi: float, h: float, kind: AxisKind
) -> tuple[int, tuple[float, float]]:
    length = hi - lo
    if kind == AxisKind.PERIODIC:
        count = max(int(round(length / h)), 4)
        return count, (lo, hi)
    if kind == AxisKind.REFLECTING:
        assert lo == 0.0, f"Reflecting axes start at the symmetry plane, not {lo}"
        count = int(math.ceil(hi / h)) + 1
        return count, (0.0, count * h)
    count = int(math.ceil(length / h)) + 2
    centre = 0.5 * (lo + hi)
    return count, (centre - 0.5 * count * h, centre + 0.5 * count * h)


def build_grid(
    domain: Domain,
    h: typing.Union[float, typing.Sequence[float]],
) -> Grid:
    spacing = (
        tuple(float(x) for x in h)
        if isinstance(h, typing.Sequence)
        else (float(h),) * domain.dimension
    )
    if len(spacing) != domain.dimension or min(spacing) <= 0:
        raise ParameterError(f"Invalid grid spacing: {h}")
    kinds = tuple(
        AxisKind.PERIODIC
        if periodic
        else (AxisKind.REFLECTING if reflecting else AxisKind.OPEN)
        for periodic, reflecting in zip(domain.periodic, domain.reflecting_axes())
    )
    layout = [
        _axis_layout(lo, hi, hk, kind)
        for (lo, hi), hk, kind in zip(domain.bbox, spacing, kinds)
    ]
    dims = tuple(count for count, _ in layout)
    total = int(np.prod(dims))
    if total > NODE_BUDGET:
        raise ParameterError(f"Grid of {dims} exceeds the budget of {NODE_BUDGET} nodes")
    bbox = tuple(box for _, box in layout)
    skeleton = Grid(
        dims=dims,
        bbox=bbox,
        axis_kinds=kinds,
        mask=np.zeros(dims, dtype=np.uint8),
        boundary_nodes=np.zeros(0, dtype=np.int64),
        fractions=np.zeros((0, len(dims), 2)),
    )

    values = np.empty(total)
    for start in range(0, total, _CHUNK):
        flat = np.arange(start, min(start + _CHUNK, total))
        values[start : start + len(flat)] = domain.implicit(skeleton.node_points(flat))
    values = values.reshape(dims)
    floor = min(spacing)
    for k, kind in enumerate(kinds):
        if kind == AxisKind.PERIODIC:
            continue
        ends = [-1] if kind == AxisKind.REFLECTING else [0, -1]
        for end in ends:
            index: list[typing.Any] = [slice(None)] * len(dims)
            index[k] = end
            values[tuple(index)] = np.maximum(values[tuple(index)], floor)

    inside = values < 0.0
    if not np.any(inside):
        raise ParameterError(f"Domain {domain.label} has no interior nodes at h={h}")
    boundary = np.zeros(dims, dtype=bool)
    for k in range(len(dims)):
        for side in (-1, 1):
            nb_inside = shifted(inside, k, side, kinds[k], False)
            boundary |= inside & ~nb_inside
    mask = np.where(
        inside, np.where(boundary, NodeTag.BOUNDARY, NodeTag.INTERIOR), NodeTag.EXTERIOR
    ).astype(np.uint8)

    boundary_nodes = np.flatnonzero(boundary.ravel()).astype(np.int64)
    fractions = np.ones((len(boundary_nodes), len(dims), 2))
    own = values.ravel()[boundary_nodes]
    for k in range(len(dims)):
        for s, side in enumerate((-1, 1)):
            nb_values = shifted(values, k, side, kinds[k], floor).ravel()[boundary_nodes]
            nb_inside = shifted(inside, k, side, kinds[k], False).ravel()[boundary_nodes]
            theta = own / (own - np.where(nb_inside, -1.0, nb_values))
            fractions[:, k, s] = np.where(
                nb_inside, 1.0, np.clip(theta, MIN_FRACTION, 1.0)
            )
    grid = Grid(
        dims=dims,
        bbox=bbox,
        axis_kinds=kinds,
        mask=mask,
        boundary_nodes=boundary_nodes,
        fractions=fractions,
    )
    logger.debug(
        "Grid %s for %s: %d interior, %d boundary nodes",
        dims,
        domain.label,
        int(np.sum(mask == NodeTag.INTERIOR)),
        len(boundary_nodes),
    )
    return grid


# Derivative stencils (offsets, weights) in priority order
_STENCILS: list[tuple[tuple[int, ...], tuple[float, ...]]] = [
    ((-2, -1, 1, 2), (1 / 12, -8 / 12, 8 / 12, -1 / 12)),
    ((-1, 0, 1, 2), (-2 / 6, -3 / 6, 6 / 6, -1 / 6)),
    ((-2, -1, 0, 1), (1 / 6, -6 / 6, 3 / 6, 2 / 6)),
    ((0, 1, 2, 3), (-11 / 6, 18 / 6, -9 / 6, 2 / 6)),
    ((-3, -2, -1, 0), (-2 / 6, 9 / 6, -18 / 6, 11 / 6)),
    ((-1, 1), (-0.5, 0.5)),
]


def _difference(
    values: Array, valid: BoolArray, axis: int, kind: AxisKind, h: float
) -> tuple[Array, BoolArray]:
    """First derivative along one axis from the best available stencil."""
    result = np.full(values.shape, np.nan)
    done = np.zeros(values.shape, dtype=bool)
    for offsets, weights in _STENCILS:
        ok = valid.copy()
        total = np.zeros(values.shape)
        for offset, weight in zip(offsets, weights):
            ok &= shifted(valid, axis, offset, kind, False)
            total += weight * shifted(values, axis, offset, kind, 0.0)
        take = ok & ~done
        result[take] = total[take] / h
        done |= take
    return result, done


def _hermite_basis(t: Array) -> tuple[Array, Array, Array]:
    """
    Basis values, first and second derivatives, each shaped (m, corner, order)
    where corner 0/1 is the lower/upper node and order 0/1 is value/slope.
    """
    t2, t3 = t * t, t * t * t
    value = np.stack(
        [
            np.stack([2 * t3 - 3 * t2 + 1, t3 - 2 * t2 + t], axis=-1),
            np.stack([-2 * t3 + 3 * t2, t3 - t2], axis=-1),
        ],
        axis=1,
    )
    first = np.stack(
        [
            np.stack([6 * t2 - 6 * t, 3 * t2 - 4 * t + 1], axis=-1),
            np.stack([-6 * t2 + 6 * t, 3 * t2 - 2 * t], axis=-1),
        ],
        axis=1,
    )
    second = np.stack(
        [
            np.stack([12 * t - 6, 6 * t - 4], axis=-1),
            np.stack([-12 * t + 6, 6 * t - 2], axis=-1),
        ],
        axis=1,
    )
    return value, first, second


@dataclass(frozen=True)
class Interpolated:
    value: Array
    gradient: Array
    hessian: Array
    valid: BoolArray


class _HermiteTables:
    """Nodal derivative tables D^alpha f (alpha in {0,1}^n) scaled by h^|alpha|."""

    def __init__(self, grid: Grid, dense: Array) -> None:
        self.grid = grid
        n = grid.dimension
        active = grid.active
        kinds = list(grid.axis_kinds)
        self.origin = list(grid.origin)
        values = np.where(active, dense, 0.0)
        for k, kind in enumerate(kinds):
            if kind == AxisKind.REFLECTING:
                layers: list[typing.Any] = [slice(None)] * n
                layers[k] = slice(_MIRROR_LAYERS - 1, None, -1)
                values = np.concatenate([values[tuple(layers)], values], axis=k)
                active = np.concatenate([active[tuple(layers)], active], axis=k)
                kinds[k] = AxisKind.OPEN
                self.origin[k] -= _MIRROR_LAYERS * grid.spacing[k]
        self.kinds = kinds
        self.shape = values.shape
        self.tables: dict[tuple[int, ...], tuple[Array, BoolArray]] = {
            (0,) * n: (values, active)
        }
        for alpha in itertools.product((0, 1), repeat=n):
            if sum(alpha) == 0:
                continue
            last = max(k for k in range(n) if alpha[k])
            parent = tuple(a if k != last else 0 for k, a in enumerate(alpha))
            base, ok = self.tables[parent]
            h = grid.spacing[last]
            derived, derived_ok = _difference(base, ok, last, kinds[last], h)
            self.tables[alpha] = (derived * h, derived_ok)
        self.corner_ok = np.logical_and.reduce([ok for _, ok in self.tables.values()])

    def cell_valid(self, base: npt.NDArray[np.int64]) -> BoolArray:
        """Whether every corner of the cells with lower corners `base` is usable."""
        n = self.grid.dimension
        ok = np.ones(len(base), dtype=bool)
        for k in range(n):
            if self.kinds[k] != AxisKind.PERIODIC:
                ok &= (base[:, k] >= 0) & (base[:, k] <= self.shape[k] - 2)
        clipped = np.clip(base, 0, np.array(self.shape) - 1)
        for corner in itertools.product((0, 1), repeat=n):
            index = self._corner_index(clipped, corner)
            ok &= self.corner_ok[index]
        return ok

    def _corner_index(
        self, base: npt.NDArray[np.int64], corner: tuple[int, ...]
    ) -> tuple[npt.NDArray[np.int64], ...]:
        index = []
        for k, c in enumerate(corner):
            i = base[:, k] + c
            if self.kinds[k] == AxisKind.PERIODIC:
                i = np.mod(i, self.shape[k])
            index.append(np.clip(i, 0, self.shape[k] - 1))
        return tuple(index)

    def evaluate(self, points: Array, strict: bool) -> Interpolated:
        n = self.grid.dimension
        m = len(points)
        spacing = np.array(self.grid.spacing)
        u = (self.grid.wrap(points) - np.array(self.origin)) / spacing
        for k in range(n):
            if self.kinds[k] == AxisKind.PERIODIC:
                u[:, k] = np.mod(u[:, k], self.shape[k])
        base = np.floor(u).astype(np.int64)
        valid = self.cell_valid(base)
        if not np.all(valid):
            base, valid = self._relocate(base, valid)
        if strict and not np.all(valid):
            bad = points[~valid][0]
            raise ParameterError(f"Point {bad.tolist()} is outside the interpolation region")

        t = u - base
        basis = [_hermite_basis(t[:, k]) for k in range(n)]
        value = np.zeros(m)
        gradient = np.zeros((m, n))
        hessian = np.zeros((m, n, n))
        safe_base = np.where(valid[:, None], base, 0)
        for corner in itertools.product((0, 1), repeat=n):
            index = self._corner_index(safe_base, corner)
            for alpha, (table, _) in self.tables.items():
                coefficient = table[index]
                factors = [
                    [basis[k][order][:, corner[k], alpha[k]] for order in range(3)]
                    for k in range(n)
                ]
                value += coefficient * np.prod([f[0] for f in factors], axis=0)
                for a in range(n):
                    gradient[:, a] += coefficient * np.prod(
                        [factors[k][1 if k == a else 0] for k in range(n)], axis=0
                    )
                    for b in range(a, n):
                        orders = [0] * n
                        orders[a] += 1
                        orders[b] += 1
                        term = coefficient * np.prod(
                            [factors[k][orders[k]] for k in range(n)], axis=0
                        )
                        hessian[:, a, b] += term
                        if b != a:
                            hessian[:, b, a] += term
        gradient /= spacing
        hessian /= np.outer(spacing, spacing)
        value[~valid] = np.nan
        gradient[~valid] = np.nan
        hessian[~valid] = np.nan
        return Interpolated(value=value, gradient=gradient, hessian=hessian, valid=valid)

    def _relocate(
        self, base: npt.NDArray[np.int64], valid: BoolArray
    ) -> tuple[npt.NDArray[np.int64], BoolArray]:
        """Move unusable cells to the nearest usable cell within two steps."""
        n = self.grid.dimension
        shifts = sorted(
            itertools.product(range(-2, 3), repeat=n),
            key=lambda s: (sum(abs(x) for x in s), s),
        )[1:]
        base = base.copy()
        valid = valid.copy()
        for s in shifts:
            pending = np.flatnonzero(~valid)
            if len(pending) == 0:
                break
            candidate = base[pending] + np.array(s)
            ok = self.cell_valid(candidate)
            base[pending[ok]] = candidate[ok]
            valid[pending[ok]] = True
        return base, valid


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    # One value per non-exterior node, in node order
    values: Array

    def __post_init__(self) -> None:
        assert len(self.values) == len(
            self.grid.active_nodes
        ), f"Expected {len(self.grid.active_nodes)} values, got {len(self.values)}"
        if not np.all(np.isfinite(self.values)):
            raise ParameterError("Scalar field has non-finite values")

    @classmethod
    def from_dense(cls, grid: Grid, dense: Array) -> "ScalarField":
        return cls(grid=grid, values=np.asarray(dense, dtype=np.float64).ravel()[grid.active_nodes])

    @classmethod
    def from_function(
        cls, grid: Grid, fn: typing.Callable[[Array], Array]
    ) -> "ScalarField":
        values = fn(grid.node_points(grid.active_nodes))
        return cls(grid=grid, values=np.asarray(values, dtype=np.float64))

    def dense(self, fill: float = np.nan) -> Array:
        out = np.full(self.grid.node_count, fill)
        out[self.grid.active_nodes] = self.values
        return out.reshape(self.grid.dims)

    @functools.cached_property
    def _hermite(self) -> _HermiteTables:
        return _HermiteTables(self.grid, self.dense(0.0))

    def interpolate_many(self, points: npt.ArrayLike, strict: bool = True) -> Interpolated:
        return self._hermite.evaluate(as_points(points, self.grid.dimension), strict)

    def nodal_gradient(self) -> tuple[Array, BoolArray]:
        """Finite-difference gradient at the nodes, shape (n, *dims)."""
        n = self.grid.dimension
        dense = self.dense(0.0)
        parts = []
        ok = self.grid.active.copy()
        for k in range(n):
            d, valid = _difference(
                dense, self.grid.active, k, self.grid.axis_kinds[k], self.grid.spacing[k]
            )
            parts.append(d)
            ok &= valid
        return np.stack(parts), ok


def interpolate(field: ScalarField, point: npt.ArrayLike) -> tuple[float, Array, Array]:
    result = field.interpolate_many(point)
    return float(result.value[0]), result.gradient[0], result.hessian[0]


def interpolation_error_estimate(
    field: ScalarField, region: typing.Optional[BoolArray] = None
) -> float:
    """Max fourth difference over 384, the cubic Hermite error bound on a cell."""
    grid = field.grid
    dense = field.dense(0.0)
    usable = grid.active if region is None else grid.active & region
    worst = 0.0
    weights = (1.0, -4.0, 6.0, -4.0, 1.0)
    for k in range(grid.dimension):
        ok = usable.copy()
        total = np.zeros(grid.dims)
        for offset, weight in zip(range(-2, 3), weights):
            ok &= grid.neighbour(usable, k, offset, False) if offset else True
            total += weight * grid.neighbour(dense, k, offset, 0.0)
        if np.any(ok):
            worst = max(worst, float(np.max(np.abs(total[ok]))))
    return worst / 384.0


def dump(field: ScalarField, path: str) -> None:
    grid = field.grid
    header = [
        DUMP_MAGIC,
        np.array([DUMP_VERSION], dtype="<u4").tobytes(),
        np.array([grid.dimension], dtype="u1").tobytes(),
        np.array(grid.dims, dtype="<u4").tobytes(),
        np.array([x for box in grid.bbox for x in box], dtype="<f8").tobytes(),
        np.array([int(k) for k in grid.axis_kinds], dtype="u1").tobytes(),
    ]
    with open(path, "wb") as fh:
        for chunk in header:
            fh.write(chunk)
        fh.write(np.ascontiguousarray(grid.mask, dtype="u1").tobytes())
        fh.write(np.asarray(field.values, dtype="<f8").tobytes())
        fh.write(np.asarray(grid.fractions, dtype="<f8").tobytes())


class _Reader:
    def __init__(self, payload: bytes) -> None:
        self.payload = payload
        self.offset = 0

    def take(self, dtype: str, count: int) -> npt.NDArray[typing.Any]:
        size = np.dtype(dtype).itemsize * count
        if self.offset + size > len(self.payload):
            raise FormatError(
                f"Truncated field dump: needed {size} bytes at offset {self.offset}"
            )
        out = np.frombuffer(self.payload, dtype=dtype, count=count, offset=self.offset)
        self.offset += size
        return out


def load(path: str) -> ScalarField:
    with open(path, "rb") as fh:
        payload = fh.read()
    if payload[:4] != DUMP_MAGIC:
        raise FormatError(f"Not a field dump (bad magic {payload[:4]!r}): {path}")
    reader = _Reader(payload)
    reader.offset = 4
    version = int(reader.take("<u4", 1)[0])
    if version != DUMP_VERSION:
        raise VersionError(
            f"Unsupported field dump version {version} (expected {DUMP_VERSION}): {path}"
        )
    dimension = int(reader.take("u1", 1)[0])
    if dimension not in (2, 3):
        raise FormatError(f"Unsupported dimension {dimension}: {path}")
    dims = tuple(int(x) for x in reader.take("<u4", dimension))
    flat_box = reader.take("<f8", 2 * dimension)
    kinds = tuple(AxisKind(int(x)) for x in reader.take("u1", dimension))
    mask = reader.take("u1", int(np.prod(dims))).reshape(dims).copy()
    if np.any(mask > NodeTag.BOUNDARY):
        raise FormatError(f"Invalid node tags in {path}")
    active = int(np.sum(mask != NodeTag.EXTERIOR))
    values = reader.take("<f8", active).copy()
    boundary_nodes = np.flatnonzero(mask.ravel() == NodeTag.BOUNDARY).astype(np.int64)
    fractions = (
        reader.take("<f8", len(boundary_nodes) * dimension * 2)
        .reshape(len(boundary_nodes), dimension, 2)
        .copy()
    )
    grid = Grid(
        dims=dims,
        bbox=tuple(
            (float(flat_box[2 * k]), float(flat_box[2 * k + 1])) for k in range(dimension)
        ),
        axis_kinds=kinds,
        mask=mask,
        boundary_nodes=boundary_nodes,
        fractions=fractions,
    )
    return ScalarField(grid=grid, values=values)


def export_csv(field: ScalarField, path: str) -> None:
    points = field.grid.node_points(field.grid.active_nodes)
    columns = ["x", "y", "z"][: field.grid.dimension]
    df = pd.DataFrame(points, columns=columns)
    df["value"] = field.values
    df.to_csv(path, index=False, float_format="%.17g")
