"""
Level sets of G: polylines by marching squares in 2D, triangle meshes by
marching cubes in 3D, assembled into connected components with their
Euler characteristic and genus.
"""

from dataclasses import dataclass
import logging
import typing
import numpy as np
import numpy.typing as npt
import pandas as pd
from scipy import sparse  # type: ignore[import-untyped]
from scipy.sparse import csgraph  # type: ignore[import-untyped]
from scipy.spatial import distance  # type: ignore[import-untyped]
from skimage import measure  # type: ignore[import-untyped]
from greenscope.critpoint import CriticalPoint
from greenscope.discretize import AxisKind, interpolation_error_estimate
from greenscope.elliptic import GreenSolution
from greenscope.errors import CriticalLevelError, ParameterError
from greenscope.geometry import Array, Domain, boundary_samples

logger = logging.getLogger(__name__)

# Edges cut off each corner of a square cell; corners 00, 10, 11, 01 and
# edges bottom, right, top, left
_CORNER_EDGES = ((0, 3), (0, 1), (1, 2), (2, 3))
_PROJECTION_STEPS = 2


@dataclass(frozen=True, eq=False)
class LevelSetComponent:
    level: float
    # 1 for polylines, 2 for triangle meshes
    dimension: int
    vertices: Array
    # Vertex index pairs (polylines) or triples (meshes)
    cells: npt.NDArray[np.int64]
    closed: bool
    euler: int
    genus: typing.Optional[int]
    orientable: bool
    defects: tuple[str, ...] = ()


@dataclass(frozen=True, eq=False)
class _Lattice:
    values: Array
    origin: tuple[float, ...]
    spacing: tuple[float, ...]
    periodic: tuple[bool, ...]


def _lattice(solution: GreenSolution) -> _Lattice:
    """Dense normalized G with NaN outside, reflecting axes unfolded."""
    grid = solution.grid
    values = solution.field.dense(np.nan) - solution.normalization
    origin = list(grid.origin)
    for k, kind in enumerate(grid.axis_kinds):
        if kind == AxisKind.REFLECTING:
            values = np.concatenate([np.flip(values, axis=k), values], axis=k)
            origin[k] -= grid.dims[k] * grid.spacing[k]
    return _Lattice(
        values=values,
        origin=tuple(origin),
        spacing=grid.spacing,
        periodic=grid.periodic,
    )


def _shift_index(
    lattice: _Lattice, index: list[npt.NDArray[np.int64]], axis: int
) -> tuple[list[npt.NDArray[np.int64]], npt.NDArray[np.bool_]]:
    size = lattice.values.shape[axis]
    moved = list(index)
    step = index[axis] + 1
    if lattice.periodic[axis]:
        moved[axis] = np.mod(step, size)
        return moved, np.ones(step.shape, dtype=bool)
    moved[axis] = np.minimum(step, size - 1)
    return moved, step < size


def _edge_points(lattice: _Lattice, edges: npt.NDArray[np.int64], level: float) -> Array:
    """Linear crossing points on edges identified by flat_node * 2 + axis."""
    shape = lattice.values.shape
    node = edges // 2
    axis = edges % 2
    index = list(np.unravel_index(node, shape))
    flat = lattice.values.ravel()
    points = np.stack(
        [o + i * h for o, i, h in zip(lattice.origin, index, lattice.spacing)], axis=1
    )
    for k in range(2):
        on_axis = axis == k
        moved, _ = _shift_index(lattice, [i[on_axis] for i in index], k)
        f0 = flat[node[on_axis]]
        f1 = flat[np.ravel_multi_index(tuple(moved), shape)]
        t = (level - f0) / (f1 - f0)
        points[on_axis, k] += t * lattice.spacing[k]
    return points


def _sample(
    solution: GreenSolution, points: Array
) -> tuple[Array, Array, npt.NDArray[np.bool_]]:
    """Value and gradient of G, folding unfolded reflecting axes back."""
    grid = solution.grid
    folded = points.copy()
    sign = np.ones_like(points)
    for k, kind in enumerate(grid.axis_kinds):
        if kind == AxisKind.REFLECTING:
            lo = grid.bbox[k][0]
            sign[:, k] = np.where(points[:, k] < lo, -1.0, 1.0)
            folded[:, k] = lo + np.abs(points[:, k] - lo)
    sample = solution.evaluate_many(folded, strict=False)
    return sample.value, sample.gradient * sign, sample.valid


def _polish(solution: GreenSolution, points: Array, level: float) -> Array:
    """Newton steps along the gradient onto the interpolated level set."""
    grid = solution.grid
    for _ in range(_PROJECTION_STEPS):
        value, gradient, valid = _sample(solution, points)
        norm2 = np.sum(gradient**2, axis=1)
        ok = valid & (norm2 > 0.0)
        step = np.zeros_like(points)
        step[ok] = ((level - value[ok]) / norm2[ok])[:, None] * gradient[ok]
        cap = 0.5 * grid.min_spacing
        length = np.linalg.norm(step, axis=1)
        step[length > cap] *= (cap / length[length > cap])[:, None]
        points = points + step
    return points


def _wrap(lattice: _Lattice, points: Array) -> Array:
    wrapped = points.copy()
    for k, periodic in enumerate(lattice.periodic):
        if periodic:
            lo = lattice.origin[k] - 0.5 * lattice.spacing[k]
            period = lattice.values.shape[k] * lattice.spacing[k]
            wrapped[:, k] = lo + np.mod(wrapped[:, k] - lo, period)
    return wrapped


def _square_segments(
    solution: GreenSolution, lattice: _Lattice, level: float
) -> npt.NDArray[np.int64]:
    shape = lattice.values.shape
    flat = lattice.values.ravel()
    i, j = (a.ravel() for a in np.meshgrid(*[np.arange(s) for s in shape], indexing="ij"))
    right, ok_i = _shift_index(lattice, [i, j], 0)
    up, ok_j = _shift_index(lattice, [i, j], 1)
    corner = np.stack(
        [
            np.ravel_multi_index((i, j), shape),
            np.ravel_multi_index(tuple(right), shape),
            np.ravel_multi_index((right[0], up[1]), shape),
            np.ravel_multi_index(tuple(up), shape),
        ],
        axis=1,
    )
    values = flat[corner]
    usable = ok_i & ok_j & np.all(np.isfinite(values), axis=1)
    corner, values = corner[usable], values[usable]
    above = values > level
    edges = np.stack(
        [corner[:, 0] * 2, corner[:, 1] * 2 + 1, corner[:, 3] * 2, corner[:, 0] * 2 + 1],
        axis=1,
    )
    crossing = np.stack(
        [
            above[:, 0] != above[:, 1],
            above[:, 1] != above[:, 2],
            above[:, 3] != above[:, 2],
            above[:, 0] != above[:, 3],
        ],
        axis=1,
    )
    count = crossing.sum(axis=1)

    simple = count == 2
    order = np.argsort(~crossing[simple], axis=1, kind="stable")[:, :2]
    pairs = [np.take_along_axis(edges[simple], order, axis=1)]

    ambiguous = np.flatnonzero(count == 4)
    if len(ambiguous):
        cells = corner[ambiguous, 0]
        lower = np.stack(
            [
                o + a * h
                for o, a, h in zip(lattice.origin, np.unravel_index(cells, shape), lattice.spacing)
            ],
            axis=1,
        )
        centre_points = lower + 0.5 * np.array(lattice.spacing)
        value, _, valid = _sample(solution, _wrap(lattice, centre_points))
        centre = np.where(valid, value, values[ambiguous].mean(axis=1))
        centre_above = centre > level
        for row, cell in enumerate(ambiguous):
            for k, (a, b) in enumerate(_CORNER_EDGES):
                if above[cell, k] != centre_above[row]:
                    pairs.append(edges[cell, [a, b]][None, :])
    return np.concatenate(pairs, axis=0) if pairs else np.zeros((0, 2), dtype=np.int64)


def _chain(count: int, segments: npt.NDArray[np.int64]) -> npt.NDArray[np.int64]:
    """Vertex order along a connected polyline given its segments."""
    neighbours: list[list[int]] = [[] for _ in range(count)]
    for a, b in segments:
        neighbours[a].append(int(b))
        neighbours[b].append(int(a))
    ends = [v for v in range(count) if len(neighbours[v]) == 1]
    start = ends[0] if ends else 0
    order, previous, current = [start], -1, start
    while True:
        following = [v for v in neighbours[current] if v != previous]
        if not following or following[0] == start:
            break
        previous, current = current, following[0]
        order.append(current)
    return np.asarray(order, dtype=np.int64)


def _curves(solution: GreenSolution, level: float) -> list[LevelSetComponent]:
    lattice = _lattice(solution)
    segments = _square_segments(solution, lattice, level)
    if len(segments) == 0:
        return []
    edge_ids, local = np.unique(segments, return_inverse=True)
    local = local.reshape(-1, 2)
    points = _edge_points(lattice, edge_ids, level)
    points = _wrap(lattice, _polish(solution, _wrap(lattice, points), level))
    label_count, labels = _components(len(edge_ids), local)
    found = []
    for label in range(label_count):
        members = np.flatnonzero(labels == label)
        renumber = np.full(len(edge_ids), -1, dtype=np.int64)
        renumber[members] = np.arange(len(members))
        own = renumber[local[labels[local[:, 0]] == label]]
        degree = np.bincount(own.ravel(), minlength=len(members))
        closed = bool(np.all(degree == 2))
        defects = () if np.all(degree <= 2) else ("branching vertex",)
        vertices = points[members]
        order = _chain(len(members), own)
        if len(order) == len(members):
            position = np.empty_like(order)
            position[order] = np.arange(len(order))
            vertices, own = vertices[order], position[own]
        found.append(
            LevelSetComponent(
                level=level,
                dimension=1,
                vertices=vertices,
                cells=own,
                closed=closed,
                euler=int(len(members) - len(own)),
                genus=None,
                orientable=True,
                defects=defects,
            )
        )
    return found


def _components(
    count: int, cells: npt.NDArray[np.int64]
) -> tuple[int, npt.NDArray[np.int64]]:
    rows = np.repeat(cells[:, 0], cells.shape[1] - 1)
    cols = cells[:, 1:].ravel()
    graph = sparse.coo_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(count, count)
    ).tocsr()
    label_count, labels = csgraph.connected_components(graph, directed=False)
    return int(label_count), np.asarray(labels, dtype=np.int64)


def _mesh_component(
    level: float, vertices: Array, faces: npt.NDArray[np.int64]
) -> LevelSetComponent:
    directed = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    undirected = np.sort(directed, axis=1)
    edges, uses = np.unique(undirected, axis=0, return_counts=True)
    defects = []
    if np.any(uses > 2):
        defects.append("non-manifold edge")
    closed = bool(np.all(uses == 2))
    _, directed_uses = np.unique(directed, axis=0, return_counts=True)
    orientable = bool(np.all(directed_uses == 1))
    if not orientable:
        defects.append("inconsistent orientation")
    euler = int(len(vertices) - len(edges) + len(faces))
    genus = (2 - euler) // 2 if closed and orientable and not defects else None
    return LevelSetComponent(
        level=level,
        dimension=2,
        vertices=vertices,
        cells=faces,
        closed=closed,
        euler=euler,
        genus=genus,
        orientable=orientable,
        defects=tuple(defects),
    )


def _surfaces(solution: GreenSolution, level: float) -> list[LevelSetComponent]:
    lattice = _lattice(solution)
    if any(lattice.periodic):
        raise ParameterError("Level surfaces on periodic 3D grids are not supported")
    finite = np.isfinite(lattice.values)
    if not np.any(finite & (lattice.values > level)) or not np.any(
        finite & (lattice.values < level)
    ):
        return []
    volume = np.where(finite, lattice.values, level - 1.0)
    vertices, faces, _, _ = measure.marching_cubes(
        volume,
        level=level,
        spacing=lattice.spacing,
        mask=finite,
        allow_degenerate=False,
        method="lewiner",
    )
    faces = np.asarray(faces, dtype=np.int64)
    if len(faces) == 0:
        return []
    vertices = np.asarray(vertices) + np.array(lattice.origin)
    label_count, labels = _components(len(vertices), faces)
    found = []
    for label in range(label_count):
        members = np.flatnonzero(labels == label)
        own = faces[labels[faces[:, 0]] == label]
        if len(own) == 0:
            continue
        renumber = np.full(len(vertices), -1, dtype=np.int64)
        renumber[members] = np.arange(len(members))
        found.append(_mesh_component(level, vertices[members], renumber[own]))
    return found


def critical_tolerance(solution: GreenSolution) -> float:
    """Ten times the interpolation error of the smooth part of G."""
    return 10.0 * interpolation_error_estimate(solution.corrector) + 1e-12


def extract(
    solution: GreenSolution,
    level: float,
    census: typing.Sequence[CriticalPoint] = (),
    acknowledge_critical: bool = False,
) -> list[LevelSetComponent]:
    tolerance = critical_tolerance(solution)
    near = [p for p in census if abs(p.value - level) <= tolerance]
    if near and not acknowledge_critical:
        raise CriticalLevelError(
            f"Level {level:g} is within {tolerance:.3g} of the critical value "
            f"{near[0].value:g} at {near[0].position}"
        )
    if solution.grid.dimension == 2:
        found = _curves(solution, level)
    elif solution.grid.dimension == 3:
        found = _surfaces(solution, level)
    else:
        raise ParameterError(f"Unsupported dimension {solution.grid.dimension}")
    for component in found:
        if component.defects:
            logger.warning(
                "Level %g component with %d vertices: %s",
                level,
                len(component.vertices),
                ", ".join(component.defects),
            )
    return found


def component_topology(
    component: LevelSetComponent,
) -> tuple[int, typing.Optional[int], bool]:
    return component.euler, component.genus, component.closed


def _nudged(level: float, census: typing.Sequence[CriticalPoint], tolerance: float) -> float:
    for p in census:
        if abs(p.value - level) <= tolerance:
            return p.value + (10.0 * tolerance if level >= p.value else -10.0 * tolerance)
    return level


def level_scan(
    solution: GreenSolution,
    levels: typing.Iterable[float],
    census: typing.Sequence[CriticalPoint] = (),
) -> pd.DataFrame:
    """Component count and topology per level, moving critical levels off by 10x tolerance."""
    tolerance = critical_tolerance(solution)
    rows = []
    for requested in levels:
        level = _nudged(requested, census, tolerance)
        if level != requested:
            logger.info("Nudged level %g to %g", requested, level)
        found = extract(solution, level, census)
        rows.append(
            {
                "requested": requested,
                "level": level,
                "components": len(found),
                "closed": sum(c.closed for c in found),
                "euler": ";".join(str(c.euler) for c in found),
                "genus": ";".join("" if c.genus is None else str(c.genus) for c in found),
            }
        )
    return pd.DataFrame(
        rows, columns=["requested", "level", "components", "closed", "euler", "genus"]
    )


def boundary_hausdorff(
    components: typing.Sequence[LevelSetComponent], domain: Domain, spacing: float
) -> float:
    """Symmetric Hausdorff distance between the level set vertices and the domain boundary."""
    if not components:
        return float("inf")
    vertices = np.concatenate([c.vertices for c in components], axis=0)
    boundary = boundary_samples(domain, spacing)
    return float(
        max(
            distance.directed_hausdorff(vertices, boundary)[0],
            distance.directed_hausdorff(boundary, vertices)[0],
        )
    )


def write_off(component: LevelSetComponent, path: str) -> None:
    if component.dimension != 2:
        raise ParameterError("OFF export needs a triangle mesh")
    with open(path, "w") as f:
        f.write("OFF\n")
        f.write(f"{len(component.vertices)} {len(component.cells)} 0\n")
        for v in component.vertices:
            f.write(" ".join(f"{x:.9g}" for x in v) + "\n")
        for face in component.cells:
            f.write("3 " + " ".join(str(int(i)) for i in face) + "\n")
