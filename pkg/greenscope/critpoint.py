"""
Critical points of a computed Green's function: the census, Hessian and
blow-up classification, local sign components and the Hopf index count.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
import enum
import itertools
import logging
import math
import typing
import numpy as np
import numpy.typing as npt
import pandas as pd
from scipy import sparse, spatial  # type: ignore[import-untyped]
from scipy.sparse import csgraph  # type: ignore[import-untyped]
from greenscope.config import worker_count
from greenscope.discretize import BoolArray
from greenscope.elliptic import GreenSolution, fibonacci_sphere
from greenscope.errors import ClassificationError, ParameterError
from greenscope.geometry import Array

logger = logging.getLogger(__name__)

DEGENERACY_RATIO = 1e-4
GRADIENT_TOLERANCE = 1e-9
NEWTON_ITERATIONS = 100
# Newton iterates stay within this many cells of their seed
TRUST_RADIUS = 3.0
# A seed is plausible when its Newton step is at most this many cells times sqrt(n)
SEED_REACH = 1.5
FLAG_PERCENTILE = 0.5
FIT_THRESHOLD = 0.05
FIT_ORDERS = tuple(range(2, 9))
_BOUNDARY_LAYERS = 3
_FIT_SAMPLES = 64


class Classification(enum.Enum):
    NONDEGENERATE = "nondegenerate"
    DEGENERATE = "degenerate"
    UNCLASSIFIED = "unclassified"


@dataclass(frozen=True)
class BlowupFit:
    order: int
    # G - c ~ amplitude r^m cos(m theta - phase)
    phase: float
    amplitude: float
    residual: float
    # Every probe radius prefers the same order
    consistent: bool

    @property
    def separatrix_angles(self) -> tuple[float, ...]:
        """Directions (phase + k pi)/m; even k ascend from the point, odd k descend."""
        return tuple(
            math.fmod(self.phase + k * math.pi, 2.0 * math.pi * self.order) / self.order
            for k in range(2 * self.order)
        )


@dataclass(frozen=True)
class CriticalPoint:
    position: tuple[float, ...]
    value: float
    grad_residual: float
    hessian_eigenvalues: tuple[float, ...]
    classification: Classification
    morse_index: typing.Optional[int] = None
    order: typing.Optional[int] = None
    phase: typing.Optional[float] = None
    separatrix_angles: tuple[float, ...] = ()
    # Newton stayed in its trust region without reaching the tolerance
    suspect: bool = False

    @property
    def index(self) -> typing.Optional[int]:
        """Index of grad G at the point."""
        if self.classification == Classification.NONDEGENERATE:
            assert self.morse_index is not None
            return (-1) ** self.morse_index
        if self.order is not None:
            return 1 - self.order
        return None


@dataclass(frozen=True)
class CensusReport:
    points: list[CriticalPoint]
    seeds: int
    discarded: int


@dataclass(frozen=True)
class HopfReport:
    genus: int
    ends: int
    euler: int
    indices: list[typing.Optional[int]]
    identity_residual: typing.Optional[int]
    betti: int
    census_size: int

    @property
    def within_bound(self) -> bool:
        return self.census_size <= self.betti


def working_region(solution: GreenSolution, exclusion_radius: float) -> BoolArray:
    """Active nodes at least 3 cells from the boundary and outside the pole ball."""
    grid = solution.grid
    region = grid.active.copy()
    for _ in range(_BOUNDARY_LAYERS):
        eroded = region.copy()
        for k in range(grid.dimension):
            for side in (-1, 1):
                eroded &= grid.neighbour(region, k, side, False)
        region = eroded
    if solution.pole is not None:
        points = grid.node_points(np.arange(grid.node_count))
        distance = np.linalg.norm(grid.displacement(points, solution.pole), axis=1)
        region &= (distance > exclusion_radius).reshape(grid.dims)
    return region


def _flag_seeds(solution: GreenSolution, region: BoolArray) -> Array:
    """Nodes where |grad G| is a local minimum and plausibly near a zero."""
    grid = solution.grid
    h = grid.min_spacing
    flat = np.flatnonzero(region.ravel())
    if len(flat) == 0:
        return np.zeros((0, grid.dimension))
    points = grid.node_points(flat)
    sample = solution.evaluate_many(points, strict=False)
    magnitude = np.full(grid.node_count, np.inf)
    valid = sample.valid
    magnitude[flat[valid]] = np.linalg.norm(sample.gradient[valid], axis=1)
    magnitude = magnitude.reshape(grid.dims)

    neighbourhood = np.full(grid.dims, np.inf)
    for offset in itertools.product((-1, 0, 1), repeat=grid.dimension):
        if not any(offset):
            continue
        moved = magnitude
        for k, o in enumerate(offset):
            if o:
                moved = grid.neighbour(moved, k, o, np.inf)
        neighbourhood = np.minimum(neighbourhood, moved)
    # Ties are kept: symmetric grids straddle a critical point with equal values
    minima = np.isfinite(magnitude) & (magnitude <= neighbourhood)
    finite = magnitude[np.isfinite(magnitude)]
    threshold = float(np.percentile(finite, FLAG_PERCENTILE))

    local = np.flatnonzero(minima.ravel()[flat])
    if len(local) == 0:
        return np.zeros((0, grid.dimension))
    gradients = sample.gradient[local]
    steps = np.einsum("nij,nj->ni", np.linalg.pinv(sample.hessian[local]), gradients)
    near = np.linalg.norm(steps, axis=1) <= SEED_REACH * h * math.sqrt(grid.dimension)
    small = magnitude.ravel()[flat[local]] <= threshold
    return points[local[near | small]]


def _refine(
    solution: GreenSolution, seed: Array, exclusion_radius: float
) -> typing.Optional[tuple[Array, float, bool]]:
    """
    Newton on the interpolated gradient with steps clamped to h. When the
    iterates leave the trust region or the interior, the best iterate so far is
    kept as a suspect point if the first Newton step put a zero within reach of
    the seed; otherwise the seed is discarded.
    """
    grid = solution.grid
    h = grid.min_spacing
    reach = SEED_REACH * h * math.sqrt(grid.dimension)
    x = seed.copy()
    best, residual = x, math.inf
    plausible = False
    for iteration in range(NEWTON_ITERATIONS):
        sample = solution.evaluate_many(x[None, :], strict=False)
        if not sample.valid[0]:
            if not plausible:
                return None
            break
        gradient = sample.gradient[0]
        norm = float(np.linalg.norm(gradient))
        if norm < residual:
            best, residual = x, norm
        if norm < GRADIENT_TOLERANCE:
            break
        step = np.linalg.lstsq(sample.hessian[0], gradient, rcond=None)[0]
        size = float(np.linalg.norm(step))
        if iteration == 0:
            plausible = size <= reach
        if size > h:
            step = step * (h / size)
        x = grid.wrap(x - step)
        if np.linalg.norm(grid.displacement(x, seed)) > TRUST_RADIUS * h:
            if not plausible:
                return None
            break
    if not grid.active[grid.nearest_node(best)]:
        return None
    if solution.pole is not None:
        if np.linalg.norm(grid.displacement(best, solution.pole)) <= exclusion_radius:
            return None
    return best, residual, residual >= GRADIENT_TOLERANCE


def _merge(
    found: list[tuple[Array, float, bool]], solution: GreenSolution
) -> list[tuple[Array, float, bool]]:
    grid = solution.grid
    radius = 2.0 * grid.min_spacing
    kept: list[tuple[Array, float, bool]] = []
    for candidate in sorted(found, key=lambda f: f[1]):
        if all(
            np.linalg.norm(grid.displacement(candidate[0], other[0])) > radius
            for other in kept
        ):
            kept.append(candidate)
    return kept


def run_census(
    solution: GreenSolution, exclusion_radius: typing.Optional[float] = None
) -> CensusReport:
    grid = solution.grid
    h = grid.min_spacing
    radius = 5.0 * h if exclusion_radius is None else exclusion_radius
    if solution.pole is not None and radius < 5.0 * h * (1.0 - 1e-12):
        raise ParameterError(
            f"Exclusion radius {radius:g} is below 5h = {5.0 * h:g} around the pole"
        )
    seeds = _flag_seeds(solution, working_region(solution, radius))
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        refined = list(pool.map(lambda s: _refine(solution, s, radius), seeds))
    found = [r for r in refined if r is not None]
    discarded = len(seeds) - len(found)
    if discarded:
        logger.info("Census discarded %d of %d Newton seeds", discarded, len(seeds))
    points = []
    for x, residual, suspect in _merge(found, solution):
        point = classify(solution, x)
        if suspect:
            logger.warning(
                "Suspect critical point at %s (residual %.3e)", x.tolist(), residual
            )
            point = replace(point, suspect=True)
        points.append(point)
    points.sort(key=lambda p: p.position)
    return CensusReport(points=points, seeds=len(seeds), discarded=discarded)


def census(
    solution: GreenSolution, exclusion_radius: typing.Optional[float] = None
) -> list[CriticalPoint]:
    return run_census(solution, exclusion_radius).points


def _directions(dimension: int, count: int) -> Array:
    if dimension == 3:
        return fibonacci_sphere(count)
    t = np.arange(count) * 2.0 * math.pi / count
    return np.stack([np.cos(t), np.sin(t)], axis=1)


def _curvature_scale(solution: GreenSolution, x: Array, value: float) -> float:
    """max |G - c| over a 5h probe, divided by the probe radius squared."""
    rho = 5.0 * solution.grid.min_spacing
    count = 256 if solution.grid.dimension == 3 else _FIT_SAMPLES
    sample = solution.evaluate_many(
        x + rho * _directions(solution.grid.dimension, count), strict=False
    )
    if not np.any(sample.valid):
        return 0.0
    return float(np.max(np.abs(sample.value[sample.valid] - value))) / rho**2


def classify(solution: GreenSolution, position: npt.ArrayLike) -> CriticalPoint:
    x = np.asarray(position, dtype=np.float64)
    sample = solution.evaluate_many(x[None, :], strict=False)
    hessian = 0.5 * (sample.hessian[0] + sample.hessian[0].T)
    eigenvalues = np.linalg.eigvalsh(hessian)
    value = float(sample.value[0])
    threshold = max(
        DEGENERACY_RATIO * float(np.max(np.abs(eigenvalues))),
        0.1 * _curvature_scale(solution, x, value),
    )
    point = CriticalPoint(
        position=tuple(float(c) for c in x),
        value=value,
        grad_residual=float(np.linalg.norm(sample.gradient[0])),
        hessian_eigenvalues=tuple(float(e) for e in eigenvalues),
        classification=Classification.NONDEGENERATE,
    )
    if float(np.min(np.abs(eigenvalues))) > threshold:
        return replace(point, morse_index=int(np.sum(eigenvalues < 0.0)))
    if solution.grid.dimension != 2:
        return replace(point, classification=Classification.DEGENERATE)
    try:
        fit = blowup_fit(solution, x)
    except ClassificationError as e:
        logger.warning("Unclassified critical point at %s: %s", x.tolist(), e)
        return replace(point, classification=Classification.UNCLASSIFIED)
    if not fit.consistent:
        logger.warning("Blow-up order at %s differs between radii", x.tolist())
        return replace(point, classification=Classification.UNCLASSIFIED)
    return replace(
        point,
        classification=Classification.DEGENERATE,
        order=fit.order,
        phase=fit.phase,
        separatrix_angles=fit.separatrix_angles,
    )


def _fit_order(
    radii: Array, theta: Array, values: Array, order: int
) -> tuple[float, float, float]:
    scale = radii**order
    design = np.stack(
        [scale * np.cos(order * theta), scale * np.sin(order * theta)], axis=1
    )
    coefficients = np.linalg.lstsq(design, values, rcond=None)[0]
    norm = float(np.linalg.norm(values))
    misfit = float(np.linalg.norm(values - design @ coefficients))
    relative = misfit / norm if norm else math.inf
    return float(coefficients[0]), float(coefficients[1]), relative


def blowup_fit(
    solution: GreenSolution, position: npt.ArrayLike, radius: typing.Optional[float] = None
) -> BlowupFit:
    """Least-squares fit of G - c by r^m (A cos m theta + B sin m theta), m = 2..8."""
    if solution.grid.dimension != 2:
        raise ParameterError("Blow-up fits are two-dimensional")
    x = np.asarray(position, dtype=np.float64)
    rho = 5.0 * solution.grid.min_spacing if radius is None else radius
    c = float(solution.evaluate_many(x[None, :], strict=False).value[0])
    theta = np.arange(_FIT_SAMPLES) * 2.0 * math.pi / _FIT_SAMPLES
    circles = []
    for r in (rho, 0.5 * rho, 0.25 * rho):
        points = x + r * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        sample = solution.evaluate_many(points, strict=False)
        if not np.all(sample.valid):
            raise ParameterError(f"Blow-up probe of radius {r:g} leaves the grid")
        circles.append((np.full(_FIT_SAMPLES, r), theta, sample.value - c))

    radii = np.concatenate([r for r, _, _ in circles])
    angles = np.concatenate([t for _, t, _ in circles])
    values = np.concatenate([v for _, _, v in circles])
    fits = {m: _fit_order(radii, angles, values, m) for m in FIT_ORDERS}
    order = min(FIT_ORDERS, key=lambda m: fits[m][2])
    a, b, residual = fits[order]
    if residual > FIT_THRESHOLD:
        raise ClassificationError(
            f"No order in {FIT_ORDERS[0]}..{FIT_ORDERS[-1]} fits (best m={order}, "
            f"residual {residual:.3g})"
        )
    per_radius = [
        min(FIT_ORDERS, key=lambda m: _fit_order(r, t, v, m)[2]) for r, t, v in circles
    ]
    return BlowupFit(
        order=order,
        phase=math.atan2(b, a) % (2.0 * math.pi),
        amplitude=math.hypot(a, b),
        residual=residual,
        consistent=all(m == order for m in per_radius),
    )


def _cyclic_runs(signs: npt.NDArray[np.int64]) -> int:
    if np.all(signs == signs[0]):
        return 1
    previous = np.roll(signs, 1)
    return int(np.sum((signs != 0) & (signs != previous)))


def local_component_count(
    solution: GreenSolution,
    position: npt.ArrayLike,
    radius: typing.Optional[float] = None,
    delta: typing.Optional[float] = None,
    samples: typing.Optional[int] = None,
) -> int:
    """Components of {|G - c| > delta} on the circle or sphere of the given radius."""
    grid = solution.grid
    x = np.asarray(position, dtype=np.float64)
    rho = 10.0 * grid.min_spacing if radius is None else radius
    count = samples if samples is not None else (4096 if grid.dimension == 3 else 256)
    if count < 32:
        raise ParameterError(f"Need at least 32 samples per circle, got {count}")
    c = float(solution.evaluate_many(x[None, :], strict=False).value[0])
    directions = _directions(grid.dimension, count)
    values = solution.evaluate_many(x + rho * directions).value - c
    threshold = 0.1 * float(np.max(np.abs(values))) if delta is None else delta
    keep = np.abs(values) > threshold
    if not np.any(keep):
        raise ParameterError(f"No samples exceed delta = {threshold:g} at radius {rho:g}")
    signs = np.where(keep, np.sign(values), 0.0).astype(np.int64)
    if grid.dimension == 2:
        return _cyclic_runs(signs)

    reach = 1.8 * math.sqrt(4.0 * math.pi / count)
    pairs = spatial.cKDTree(directions).query_pairs(reach, output_type="ndarray")
    a, b = pairs[:, 0], pairs[:, 1]
    linked = keep[a] & keep[b] & (signs[a] == signs[b])
    graph = sparse.coo_matrix(
        (np.ones(int(np.sum(linked))), (a[linked], b[linked])), shape=(count, count)
    )
    _, labels = csgraph.connected_components(graph, directed=False)
    return len(np.unique(labels[keep]))


def hopf_check(
    points: typing.Sequence[CriticalPoint], genus: int, ends: int
) -> HopfReport:
    """Compare chi = 2 - 2 genus - ends with 1 + the sum of the indices."""
    euler = 2 - 2 * genus - ends
    indices = [p.index for p in points]
    known = [i for i in indices if i is not None]
    residual = euler - 1 - sum(known) if len(known) == len(indices) else None
    report = HopfReport(
        genus=genus,
        ends=ends,
        euler=euler,
        indices=indices,
        identity_residual=residual,
        betti=2 * genus + ends - 1,
        census_size=len(points),
    )
    if residual is None:
        logger.warning(
            "Hopf identity undecided: %d unclassified points", len(indices) - len(known)
        )
    elif residual != 0:
        logger.warning("Hopf identity off by %d (chi=%d)", residual, euler)
    return report


def census_frame(
    points: typing.Sequence[CriticalPoint], dimension: int
) -> pd.DataFrame:
    axes = ["x", "y", "z"][:dimension]
    rows = []
    for p in points:
        row: dict[str, typing.Any] = dict(zip(axes, p.position))
        row.update(
            {
                "value": p.value,
                "residual": p.grad_residual,
                "class": p.classification.value,
                "morse_index": p.morse_index,
                "m": p.order,
                "index": p.index,
                "suspect": p.suspect,
            }
        )
        rows.append(row)
    columns = axes + ["value", "residual", "class", "morse_index", "m", "index", "suspect"]
    return pd.DataFrame(rows, columns=columns)
