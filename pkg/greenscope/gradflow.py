"""
The complete vector field X = phi grad G / sqrt(1 + phi^2 |grad G|^2), its
trajectories, basins of attraction of the pole and the separatrices of
critical points.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import enum
import logging
import math
import typing
import numpy as np
import numpy.typing as npt
import pandas as pd
from greenscope.config import worker_count
from greenscope.critpoint import Classification, CriticalPoint
from greenscope.discretize import Grid, ScalarField
from greenscope.elliptic import GreenSolution
from greenscope.errors import ParameterError
from greenscope.geometry import Array, as_points, smoothstep

logger = logging.getLogger(__name__)

STEP_BUDGET = 10_000
GROWTH = 1.5
# Step floor relative to h below which a trajectory is considered stalled
_STALL = 1e-3
_CHUNK = 4096

TAG_BASIN = -1
TAG_UNDECIDED = -2


class Direction(enum.Enum):
    FORWARD = 1
    BACKWARD = -1


class Termination(enum.Enum):
    POLE = "pole"
    CRITICAL = "critical"
    LEFT_REGION = "left_region"
    BUDGET = "budget"


@dataclass(frozen=True, eq=False)
class RegularizedField:
    solution: GreenSolution
    # Cutoff radius around the pole
    epsilon: float

    @property
    def pole(self) -> typing.Optional[tuple[float, ...]]:
        return self.solution.pole

    def cutoff(self, points: Array) -> Array:
        """(1 - S(t)) t^n + S(t), t = dist/epsilon: vanishes like dist^n at the pole."""
        if self.pole is None:
            return np.ones(len(points))
        d = self.solution.grid.displacement(points, self.pole)
        t = np.linalg.norm(d, axis=1) / self.epsilon
        s = smoothstep(t)
        return np.asarray((1.0 - s) * t**self.solution.dimension + s)

    def evaluate(self, points: npt.ArrayLike) -> Array:
        p = as_points(points, self.solution.grid.dimension)
        sample = self.solution.evaluate_many(p, strict=False)
        phi = self.cutoff(p)
        gradient = sample.gradient
        norm2 = np.sum(gradient * gradient, axis=1)
        return np.asarray(phi[:, None] * gradient / np.sqrt(1.0 + phi * phi * norm2)[:, None])

    def __call__(self, points: npt.ArrayLike) -> Array:
        return self.evaluate(points)


def regularized_field(
    solution: GreenSolution, epsilon: typing.Optional[float] = None
) -> RegularizedField:
    h = solution.grid.min_spacing
    eps = 5.0 * h if epsilon is None else epsilon
    if eps < 5.0 * h * (1.0 - 1e-12):
        raise ParameterError(f"Cutoff radius {eps:g} is below 5h = {5.0 * h:g}")
    return RegularizedField(solution=solution, epsilon=eps)


@dataclass(frozen=True)
class FlowControls:
    # Defaults are h/2, h, and 3h with h the grid spacing
    initial_step: typing.Optional[float] = None
    max_step: typing.Optional[float] = None
    capture_radius: typing.Optional[float] = None
    step_budget: int = STEP_BUDGET
    record: bool = True


@dataclass(frozen=True, eq=False)
class Trajectory:
    points: Array
    values: Array
    direction: Direction
    termination: Termination
    # Census index of the critical point reached
    critical: typing.Optional[int]
    arclength: float
    steps: int


def _step_sizes(
    grid: Grid, controls: FlowControls
) -> tuple[float, float, float]:
    h = grid.min_spacing
    return (
        0.5 * h if controls.initial_step is None else controls.initial_step,
        h if controls.max_step is None else controls.max_step,
        3.0 * h if controls.capture_radius is None else controls.capture_radius,
    )


def _integrate_chunk(
    flow: RegularizedField,
    seeds: Array,
    direction: Direction,
    controls: FlowControls,
    critical: Array,
) -> list[Trajectory]:
    solution = flow.solution
    grid = solution.grid
    sign = float(direction.value)
    first, largest, capture = _step_sizes(grid, controls)
    floor = _STALL * grid.min_spacing
    m = len(seeds)

    def heading(x: Array) -> Array:
        v = flow.evaluate(x)
        norm = np.linalg.norm(v, axis=1)
        return sign * v / norm[:, None]

    position = grid.wrap(seeds)
    start = solution.evaluate_many(position, strict=False)
    value = start.value.copy()
    step = np.full(m, first)
    steps = np.zeros(m, dtype=np.int64)
    arclength = np.zeros(m)
    outcome: list[typing.Optional[Termination]] = [None] * m
    reached = np.full(m, -1, dtype=np.int64)
    paths: list[list[Array]] = [[p.copy()] for p in position] if controls.record else []
    values: list[list[float]] = [[v] for v in value] if controls.record else []

    def distances(x: Array) -> Array:
        if len(critical) == 0:
            return np.zeros((len(x), 0))
        return np.stack(
            [np.linalg.norm(grid.displacement(x, z), axis=1) for z in critical], axis=1
        )

    def finish(index: npt.NDArray[np.int64], kind: Termination) -> None:
        for i in index:
            outcome[i] = kind

    finish(np.flatnonzero(~start.valid), Termination.LEFT_REGION)
    if flow.pole is not None:
        near_pole = np.linalg.norm(grid.displacement(position, flow.pole), axis=1)
        finish(
            np.flatnonzero(start.valid & (near_pole < 0.5 * flow.epsilon)),
            Termination.POLE,
        )
    alive = np.array([i for i in range(m) if outcome[i] is None], dtype=np.int64)

    while len(alive):
        x = position[alive]
        s = step[alive][:, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            k1 = heading(x)
            k2 = heading(grid.wrap(x + 0.5 * s * k1))
            k3 = heading(grid.wrap(x + 0.5 * s * k2))
            k4 = heading(grid.wrap(x + s * k3))
            candidate = grid.wrap(x + s / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        finite = np.all(np.isfinite(candidate), axis=1)
        sample = solution.evaluate_many(np.where(finite[:, None], candidate, x), strict=False)
        inside = finite & sample.valid
        if np.any(inside):
            nodes = [grid.nearest_node(p) for p in candidate[inside]]
            inside[inside] = [bool(grid.active[n]) for n in nodes]
        accept = inside & (sign * (sample.value - value[alive]) > 0.0)

        rejected = alive[~accept]
        step[rejected] *= 0.5
        stalled = rejected[step[rejected] < floor]
        if len(stalled):
            near = distances(position[stalled])
            for i, row in zip(stalled, near):
                hit = np.flatnonzero(row < capture)
                if len(hit):
                    outcome[i] = Termination.CRITICAL
                    reached[i] = hit[np.argmin(row[hit])]
                else:
                    j = int(np.flatnonzero(alive == i)[0])
                    outcome[i] = (
                        Termination.LEFT_REGION if not inside[j] else Termination.BUDGET
                    )

        moved = alive[accept]
        position[moved] = candidate[accept]
        value[moved] = sample.value[accept]
        arclength[moved] += step[moved]
        steps[moved] += 1
        step[moved] = np.minimum(GROWTH * step[moved], largest)
        if controls.record:
            for i in moved:
                paths[i].append(position[i].copy())
                values[i].append(float(value[i]))

        if flow.pole is not None and len(moved):
            gap = np.linalg.norm(grid.displacement(position[moved], flow.pole), axis=1)
            finish(moved[gap < 0.5 * flow.epsilon], Termination.POLE)
        if len(critical) and len(moved):
            near = distances(position[moved])
            closest = np.argmin(near, axis=1)
            captured = near[np.arange(len(moved)), closest] < capture
            for i, k in zip(moved[captured], closest[captured]):
                if outcome[i] is None:
                    outcome[i] = Termination.CRITICAL
                    reached[i] = k
        over = moved[steps[moved] >= controls.step_budget]
        for i in over:
            if outcome[i] is None:
                outcome[i] = Termination.BUDGET
        alive = np.array([i for i in alive if outcome[i] is None], dtype=np.int64)

    trajectories = []
    for i in range(m):
        kind = outcome[i]
        assert kind is not None
        trajectories.append(
            Trajectory(
                points=np.asarray(paths[i]) if controls.record else position[i][None, :],
                values=np.asarray(values[i]) if controls.record else value[i : i + 1],
                direction=direction,
                termination=kind,
                critical=int(reached[i]) if reached[i] >= 0 else None,
                arclength=float(arclength[i]),
                steps=int(steps[i]),
            )
        )
    return trajectories


def integrate_many(
    flow: RegularizedField,
    seeds: npt.ArrayLike,
    direction: Direction = Direction.FORWARD,
    controls: FlowControls = FlowControls(),
    critical_points: typing.Sequence[CriticalPoint] = (),
) -> list[Trajectory]:
    """
    RK4 along X/|X| with steps that grow by 1.5 up to h and halve whenever G
    fails to move monotonically in the flow direction.
    """
    points = as_points(seeds, flow.solution.grid.dimension)
    critical = np.array(
        [p.position for p in critical_points], dtype=np.float64
    ).reshape(-1, points.shape[1])
    chunks = [points[i : i + _CHUNK] for i in range(0, len(points), _CHUNK)]
    if len(chunks) <= 1:
        return _integrate_chunk(flow, points, direction, controls, critical)
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        parts = pool.map(
            lambda c: _integrate_chunk(flow, c, direction, controls, critical), chunks
        )
        return [t for part in parts for t in part]


def integrate(
    flow: RegularizedField,
    seed: npt.ArrayLike,
    direction: Direction = Direction.FORWARD,
    controls: FlowControls = FlowControls(),
    critical_points: typing.Sequence[CriticalPoint] = (),
) -> Trajectory:
    return integrate_many(flow, [seed], direction, controls, critical_points)[0]


@dataclass(frozen=True, eq=False)
class BasinMap:
    grid: Grid
    # Per active node of the seed grid: TAG_BASIN, TAG_UNDECIDED or a census index
    tags: npt.NDArray[np.int64]
    terminations: dict[str, int] = field(default_factory=dict)

    @property
    def basin_fraction(self) -> float:
        return float(np.mean(self.tags == TAG_BASIN))

    @property
    def undecided_fraction(self) -> float:
        return float(np.mean(self.tags == TAG_UNDECIDED))

    def stable_set_counts(self) -> dict[int, int]:
        found = self.tags[self.tags >= 0]
        return {int(k): int(np.sum(found == k)) for k in np.unique(found)}

    def statistics(self) -> dict[str, typing.Any]:
        return {
            "seeds": int(len(self.tags)),
            "basin_fraction": self.basin_fraction,
            "undecided_fraction": self.undecided_fraction,
            "stable_sets": {str(k): v for k, v in self.stable_set_counts().items()},
            "terminations": dict(self.terminations),
        }

    def as_field(self) -> ScalarField:
        return ScalarField(grid=self.grid, values=self.tags.astype(np.float64))


def basin_map(
    solution: GreenSolution,
    census: typing.Sequence[CriticalPoint],
    seed_grid: typing.Optional[Grid] = None,
    epsilon: typing.Optional[float] = None,
    controls: FlowControls = FlowControls(record=False),
) -> BasinMap:
    """Tag each seed by the forward limit of its trajectory: the pole or some W^s(z)."""
    grid = seed_grid if seed_grid is not None else solution.grid
    flow = regularized_field(solution, epsilon)
    seeds = grid.node_points(grid.active_nodes)
    trajectories = integrate_many(flow, seeds, Direction.FORWARD, controls, census)
    tags = np.full(len(seeds), TAG_UNDECIDED, dtype=np.int64)
    counts: dict[str, int] = {t.value: 0 for t in Termination}
    for i, t in enumerate(trajectories):
        counts[t.termination.value] += 1
        if t.termination == Termination.POLE:
            tags[i] = TAG_BASIN
        elif t.termination == Termination.CRITICAL:
            assert t.critical is not None
            tags[i] = t.critical
    result = BasinMap(grid=grid, tags=tags, terminations=counts)
    if result.undecided_fraction >= 0.01:
        logger.warning(
            "%.2f%% of basin seeds undecided (%s)", 100 * result.undecided_fraction, counts
        )
    return result


@dataclass(frozen=True, eq=False)
class Separatrix:
    trajectory: Trajectory
    # Seed direction angle (2D) or unit seed direction
    seed_direction: tuple[float, ...]
    stable: bool
    # Stayed within pi/(2m) of the seed direction while inside 10h of the point
    in_sector: bool


def _seed_directions(
    solution: GreenSolution, saddle: CriticalPoint
) -> tuple[list[Array], list[bool], int]:
    """Unit seed directions, whether each is stable, and the order m."""
    n = solution.grid.dimension
    if saddle.classification == Classification.DEGENERATE and saddle.order is not None:
        angles = saddle.separatrix_angles
        directions = [np.array([math.cos(a), math.sin(a)]) for a in angles]
        return directions, [k % 2 == 1 for k in range(len(angles))], saddle.order
    if saddle.classification != Classification.NONDEGENERATE:
        raise ParameterError(f"Saddle at {saddle.position} has no usable classification")
    sample = solution.evaluate_many(np.asarray(saddle.position)[None, :], strict=False)
    hessian = 0.5 * (sample.hessian[0] + sample.hessian[0].T)
    eigenvalues, vectors = np.linalg.eigh(hessian)
    directions, stable = [], []
    for k in range(n):
        for s in (1.0, -1.0):
            directions.append(s * vectors[:, k])
            stable.append(bool(eigenvalues[k] < 0.0))
    return directions, stable, 2


def separatrices(
    solution: GreenSolution,
    saddle: CriticalPoint,
    census: typing.Sequence[CriticalPoint] = (),
    epsilon: typing.Optional[float] = None,
    controls: FlowControls = FlowControls(),
) -> list[Separatrix]:
    """
    Integrate from seeds 5h away along the sector bisectors: unstable ones
    forward, stable ones backward.
    """
    grid = solution.grid
    h = grid.min_spacing
    flow = regularized_field(solution, epsilon)
    directions, stable, order = _seed_directions(solution, saddle)
    z = np.asarray(saddle.position)
    others = [p for p in census if p.position != saddle.position]
    tolerance = math.pi / (2 * order)
    found = []
    for d, is_stable in zip(directions, stable):
        path = integrate(
            flow,
            z + 5.0 * h * d,
            Direction.BACKWARD if is_stable else Direction.FORWARD,
            controls,
            others,
        )
        offsets = grid.displacement(path.points, z)
        radius = np.linalg.norm(offsets, axis=1)
        close = offsets[(radius <= 10.0 * h) & (radius > 0)]
        cosine = close @ d / np.linalg.norm(close, axis=1)
        in_sector = bool(np.all(cosine >= math.cos(tolerance) - 1e-12))
        if not in_sector:
            logger.warning(
                "Separatrix seeded along %s leaves its sector at %s", d.tolist(), z.tolist()
            )
        seed_direction = (
            (math.atan2(d[1], d[0]) % (2.0 * math.pi),) if len(d) == 2 else tuple(d.tolist())
        )
        found.append(
            Separatrix(
                trajectory=path,
                seed_direction=tuple(float(a) for a in seed_direction),
                stable=is_stable,
                in_sector=in_sector,
            )
        )
    return found


def trajectory_frame(trajectories: typing.Sequence[Trajectory]) -> pd.DataFrame:
    frames = []
    for k, t in enumerate(trajectories):
        n = t.points.shape[1]
        frame = pd.DataFrame(t.points, columns=["x", "y", "z"][:n])
        frame.insert(0, "step", np.arange(len(t.points)))
        frame.insert(0, "trajectory", k)
        frame["value"] = t.values
        frame["termination"] = t.termination.value
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=["trajectory", "step", "x", "y", "value", "termination"])
    return pd.concat(frames, ignore_index=True)
