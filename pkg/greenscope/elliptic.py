"""
Divergence-form Dirichlet solver div(a grad u) = -f with a = factor^((n-2)/2),
point-source singularity splitting, the annulus problems, the Li-Tam
exhaustion limit and the discrete energy.
"""

from dataclasses import dataclass, field
import json
import logging
import math
import typing
import numpy as np
import numpy.typing as npt
from scipy import sparse  # type: ignore[import-untyped]
from scipy.sparse import linalg as splinalg  # type: ignore[import-untyped]
from greenscope.discretize import (
    AxisKind,
    Grid,
    Interpolated,
    ScalarField,
    build_grid,
    dump,
    load,
    shifted,
)
from greenscope.errors import ConvergenceError, FormatError, ParameterError
from greenscope.geometry import (
    Array,
    ConformalMetric,
    Domain,
    ScalarMap,
    as_points,
    make_domain,
    smoothstep,
    smoothstep_derivative,
    smoothstep_second_derivative,
    sphere_area,
)

logger = logging.getLogger(__name__)

RELATIVE_TOLERANCE = 1e-10
ITERATION_BUDGET = 100_000
# Relative jump of the coefficient along an edge above which it is sub-sampled
_SUBSAMPLE_JUMP = 1e-2
_SUBSAMPLES = 4
_CHUNK = 500_000

Weight = typing.Callable[[Array], Array]


def fundamental_solution(dimension: int, r: Array) -> tuple[Array, Array, Array]:
    """Euclidean fundamental solution of -Laplace and its first two radial derivatives."""
    if dimension == 2:
        return (
            -np.log(r) / (2.0 * math.pi),
            -1.0 / (2.0 * math.pi * r),
            1.0 / (2.0 * math.pi * r * r),
        )
    c = 1.0 / ((dimension - 2) * sphere_area(dimension))
    return (
        c * r ** (2 - dimension),
        -(dimension - 2) * c * r ** (1 - dimension),
        (dimension - 2) * (dimension - 1) * c * r ** (-dimension),
    )


@dataclass(frozen=True)
class SingularSplit:
    """
    s = Phi(|x - pole|) chi(|x - pole|) / a(pole), with chi = 1 inside radius/2
    and 0 beyond radius.
    """

    pole: tuple[float, ...]
    radius: float
    kernel_dimension: int
    pole_coefficient: float
    periods: tuple[typing.Optional[float], ...]
    # Distances below the floor are evaluated at the floor (pole on a node)
    floor: float

    def displacement(self, points: Array) -> Array:
        d = points - np.asarray(self.pole)
        for k, period in enumerate(self.periods):
            if period is not None:
                d[:, k] = d[:, k] - period * np.round(d[:, k] / period)
        return d

    def cutoff(self, r: Array) -> tuple[Array, Array, Array]:
        half = 0.5 * self.radius
        t = (r - half) / half
        return (
            1.0 - smoothstep(t),
            -smoothstep_derivative(t) / half,
            -smoothstep_second_derivative(t) / (half * half),
        )

    def profile(self, r: Array) -> tuple[Array, Array, Array]:
        """Psi = Phi chi and its radial derivatives."""
        phi, dphi, ddphi = fundamental_solution(self.kernel_dimension, r)
        chi, dchi, ddchi = self.cutoff(r)
        return (
            phi * chi,
            dphi * chi + phi * dchi,
            ddphi * chi + 2.0 * dphi * dchi + phi * ddchi,
        )

    def _polar(self, points: npt.ArrayLike) -> tuple[Array, Array, Array]:
        p = as_points(points, len(self.pole))
        d = self.displacement(p)
        r = np.maximum(np.linalg.norm(d, axis=1), self.floor)
        return p, d, r

    def value(self, points: npt.ArrayLike) -> Array:
        _, _, r = self._polar(points)
        near = r < self.radius
        out = np.zeros(len(r))
        out[near] = self.profile(r[near])[0] / self.pole_coefficient
        return out

    def derivatives(self, points: npt.ArrayLike) -> tuple[Array, Array, Array]:
        p, d, r = self._polar(points)
        n = p.shape[1]
        value = np.zeros(len(r))
        gradient = np.zeros_like(p)
        hessian = np.zeros((len(r), n, n))
        near = r < self.radius
        if not np.any(near):
            return value, gradient, hessian
        psi, dpsi, ddpsi = self.profile(r[near])
        unit = d[near] / r[near, None]
        outer = unit[:, :, None] * unit[:, None, :]
        value[near] = psi
        gradient[near] = dpsi[:, None] * unit
        hessian[near] = ddpsi[:, None, None] * outer + (dpsi / r[near])[
            :, None, None
        ] * (np.eye(n) - outer)
        scale = 1.0 / self.pole_coefficient
        return value * scale, gradient * scale, hessian * scale

    def source(
        self,
        points: Array,
        coefficient: Array,
        coefficient_gradient: Array,
    ) -> Array:
        """
        g with div(a grad s) = -delta + g away from the pole:
        g = (a (2 Phi' chi' + Phi lap chi) + (grad a . e_r) Psi') / a(pole).
        The cutoff terms live on the shell; the grad a term on the whole ball.
        """
        _, d, r = self._polar(points)
        out = np.zeros(len(r))
        near = r < self.radius
        if not np.any(near):
            return out
        rn = r[near]
        phi, dphi, _ = fundamental_solution(self.kernel_dimension, rn)
        chi, dchi, ddchi = self.cutoff(rn)
        laplace_chi = ddchi + (self.kernel_dimension - 1) * dchi / rn
        radial_a = np.sum(coefficient_gradient[near] * d[near], axis=1) / rn
        out[near] = (
            coefficient[near] * (2.0 * dphi * dchi + phi * laplace_chi)
            + radial_a * (dphi * chi + phi * dchi)
        ) / self.pole_coefficient
        return out


@dataclass(frozen=True)
class DirichletData:
    label: str
    value: ScalarMap


ZERO_DATA = DirichletData(label="zero", value=lambda p: np.zeros(len(p)))


def annulus_data(dimension: int, outer: float) -> DirichletData:
    """1/(|S^(n-1)| R^(n-2)) on the inner sphere |x| = 1/R, 0 on |x| = R."""
    inner_value = 1.0 / (sphere_area(dimension) * outer ** (dimension - 2))
    split = 0.5 * (1.0 / outer + outer)
    return DirichletData(
        label=f"annulus(R={outer:g})",
        value=lambda p: np.where(np.linalg.norm(p, axis=1) < split, inner_value, 0.0),
    )


@dataclass(frozen=True, eq=False)
class CutEdges:
    node: npt.NDArray[np.int64]
    axis: npt.NDArray[np.int64]
    side: npt.NDArray[np.int64]
    theta: Array
    points: Array


def cut_edges(grid: Grid) -> CutEdges:
    """Edges from active nodes to exterior neighbours with their boundary points."""
    nodes, axes, sides, thetas = [], [], [], []
    for k in range(grid.dimension):
        for side in (-1, 1):
            flat = np.flatnonzero(grid.is_cut(k, side).ravel())
            nodes.append(flat)
            axes.append(np.full(len(flat), k))
            sides.append(np.full(len(flat), side))
            thetas.append(grid.fraction(k, side).ravel()[flat])
    node = np.concatenate(nodes).astype(np.int64)
    axis = np.concatenate(axes).astype(np.int64)
    side = np.concatenate(sides).astype(np.int64)
    theta = np.concatenate(thetas)
    points = grid.node_points(node)
    spacing = np.array(grid.spacing)
    points[np.arange(len(node)), axis] += side * theta * spacing[axis]
    return CutEdges(node=node, axis=axis, side=side, theta=theta, points=points)


def _edge_conductance(
    coefficient: ScalarMap,
    start: Array,
    axis: int,
    length: Array,
    a_start: Array,
    a_end: Array,
) -> Array:
    """Harmonic mean of the coefficient along edges; sub-sampled across jumps."""
    result = 2.0 * a_start * a_end / (a_start + a_end)
    jump = np.abs(a_start - a_end) > _SUBSAMPLE_JUMP * np.minimum(a_start, a_end)
    if not np.any(jump):
        return result
    idx = np.flatnonzero(jump)
    inverse = np.zeros(len(idx))
    for j in range(_SUBSAMPLES):
        sample = start[idx].copy()
        sample[:, axis] += (j + 0.5) / _SUBSAMPLES * length[idx]
        inverse += 1.0 / coefficient(sample)
    result[idx] = _SUBSAMPLES / inverse
    return result


@dataclass(frozen=True, eq=False)
class Stencil:
    """
    Symmetric Shortley-Weller discretization of -div(weight a grad u) on the
    active nodes of a grid, applied matrix-free.
    """

    grid: Grid
    # Conductance of the edge from each node to its +e_k neighbour, zero if absent
    forward: tuple[Array, ...]
    diagonal: Array
    cuts: CutEdges
    # weight a / (theta h^2) per cut edge
    cut_coefficient: Array

    def _axis_kind(self, k: int) -> AxisKind:
        kind = self.grid.axis_kinds[k]
        return AxisKind.OPEN if kind == AxisKind.REFLECTING else kind

    def apply_dense(self, u: Array) -> Array:
        out = self.diagonal * u
        for k, c in enumerate(self.forward):
            h2 = self.grid.spacing[k] ** 2
            kind = self._axis_kind(k)
            out -= c * shifted(u, k, 1, kind, 0.0) / h2
            out -= shifted(c * u, k, -1, kind, 0.0) / h2
        return out

    def apply(self, x: Array) -> Array:
        u = np.zeros(self.grid.node_count)
        u[self.grid.active_nodes] = x
        return self.apply_dense(u.reshape(self.grid.dims)).ravel()[
            self.grid.active_nodes
        ]

    def boundary_rhs(self, data: DirichletData) -> Array:
        values = data.value(self.cuts.points)
        dense = np.zeros(self.grid.node_count)
        np.add.at(dense, self.cuts.node, self.cut_coefficient * values)
        return dense[self.grid.active_nodes]

    def operator(self) -> typing.Any:
        size = len(self.grid.active_nodes)
        return splinalg.LinearOperator((size, size), matvec=self.apply, dtype=np.float64)

    def jacobi(self) -> typing.Any:
        inverse = 1.0 / self.diagonal.ravel()[self.grid.active_nodes]
        return sparse.diags(inverse)

    def energy(self, values: Array, data: DirichletData) -> float:
        """Edge energy minimized exactly by the scheme, scaled by the cell volume."""
        grid = self.grid
        u = np.zeros(grid.node_count)
        u[grid.active_nodes] = values
        u = u.reshape(grid.dims)
        total = 0.0
        for k, c in enumerate(self.forward):
            delta = shifted(u, k, 1, self._axis_kind(k), 0.0) - u
            total += float(np.sum(c * delta * delta)) / grid.spacing[k] ** 2
        trace = data.value(self.cuts.points)
        delta_b = trace - u.ravel()[self.cuts.node]
        total += float(np.sum(self.cut_coefficient * delta_b * delta_b))
        return total * float(np.prod(grid.spacing))


def _in_chunks(fn: ScalarMap, points: Array) -> Array:
    if len(points) <= _CHUNK:
        return fn(points)
    return np.concatenate(
        [fn(points[i : i + _CHUNK]) for i in range(0, len(points), _CHUNK)]
    )


def assemble(
    coefficient: ScalarMap, grid: Grid, weight: typing.Optional[Weight] = None
) -> Stencil:
    n = grid.dimension
    spacing = np.array(grid.spacing)
    active = grid.active
    nodes = grid.active_nodes
    node_a = np.full(grid.node_count, np.nan)
    node_a[nodes] = _in_chunks(coefficient, grid.node_points(nodes))
    node_a = node_a.reshape(grid.dims)

    forward = []
    diagonal = np.zeros(grid.dims)
    for k in range(n):
        kind = AxisKind.OPEN if grid.axis_kinds[k] == AxisKind.REFLECTING else grid.axis_kinds[k]
        nb_active = shifted(active, k, 1, kind, False)
        linked = np.flatnonzero((active & nb_active).ravel())
        a_end = shifted(node_a, k, 1, kind, np.nan).ravel()[linked]
        start = grid.node_points(linked)
        c = _edge_conductance(
            coefficient,
            start,
            k,
            np.full(len(linked), spacing[k]),
            node_a.ravel()[linked],
            a_end,
        )
        if weight is not None:
            mid = start.copy()
            mid[:, k] += 0.5 * spacing[k]
            c = c * weight(mid)
        conductance = np.zeros(grid.node_count)
        conductance[linked] = c
        conductance = conductance.reshape(grid.dims)
        forward.append(conductance)
        diagonal += (conductance + shifted(conductance, k, -1, kind, 0.0)) / spacing[k] ** 2

    cuts = cut_edges(grid)
    start = grid.node_points(cuts.node)
    length = cuts.side * cuts.theta * spacing[cuts.axis]
    cut_c = np.zeros(len(cuts.node))
    a_start = node_a.ravel()[cuts.node]
    a_end = coefficient(cuts.points) if len(cuts.node) else np.zeros(0)
    for k in range(n):
        on_axis = np.flatnonzero(cuts.axis == k)
        if len(on_axis) == 0:
            continue
        # Sub-sampling walks from the node towards the boundary point
        cut_c[on_axis] = _edge_conductance(
            coefficient, start[on_axis], k, length[on_axis], a_start[on_axis], a_end[on_axis]
        )
    if weight is not None and len(cuts.node):
        cut_c = cut_c * weight(0.5 * (start + cuts.points))
    cut_coefficient = cut_c / (cuts.theta * spacing[cuts.axis] ** 2)
    flat_diagonal = diagonal.ravel()
    np.add.at(flat_diagonal, cuts.node, cut_coefficient)
    return Stencil(
        grid=grid,
        forward=tuple(forward),
        diagonal=flat_diagonal.reshape(grid.dims),
        cuts=cuts,
        cut_coefficient=cut_coefficient,
    )


@dataclass(frozen=True)
class SolveReport:
    residual: float
    iterations: int
    converged: bool


def solve_system(
    stencil: Stencil,
    rhs: Array,
    rtol: float = RELATIVE_TOLERANCE,
    maxiter: int = ITERATION_BUDGET,
) -> tuple[Array, SolveReport]:
    norm = float(np.linalg.norm(rhs))
    if norm == 0.0:
        return np.zeros_like(rhs), SolveReport(0.0, 0, True)
    iterations = 0

    def count(_: Array) -> None:
        nonlocal iterations
        iterations += 1

    x, info = splinalg.cg(
        stencil.operator(),
        rhs,
        rtol=rtol,
        atol=0.0,
        maxiter=maxiter,
        M=stencil.jacobi(),
        callback=count,
    )
    residual = float(np.linalg.norm(rhs - stencil.apply(x))) / norm
    if info > 0:
        raise ConvergenceError(
            f"CG did not converge in {maxiter} iterations (residual {residual:.3e})"
        )
    if info < 0:
        raise ConvergenceError(f"CG breakdown (info={info})")
    logger.info("CG converged in %d iterations, residual %.3e", iterations, residual)
    return np.asarray(x), SolveReport(residual, iterations, True)


@dataclass(frozen=True, eq=False)
class GreenSolution:
    # Nodal values of G (before normalization)
    field: ScalarField
    # Smooth part w, G = s + w
    corrector: ScalarField
    pole: typing.Optional[tuple[float, ...]]
    dimension: int
    metric_label: str
    normalization: float
    stage: str
    singular_split: typing.Optional[SingularSplit]
    residual: float
    iterations: int
    converged: bool = True
    metadata: dict[str, typing.Any] = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.field.grid

    def evaluate_many(self, points: npt.ArrayLike, strict: bool = True) -> Interpolated:
        p = as_points(points, self.grid.dimension)
        smooth = self.corrector.interpolate_many(p, strict=strict)
        if self.singular_split is None:
            value = smooth.value - self.normalization
            return Interpolated(value, smooth.gradient, smooth.hessian, smooth.valid)
        s, ds, dds = self.singular_split.derivatives(p)
        return Interpolated(
            value=s + smooth.value - self.normalization,
            gradient=ds + smooth.gradient,
            hessian=dds + smooth.hessian,
            valid=smooth.valid,
        )

    def evaluate(self, points: npt.ArrayLike) -> Array:
        return self.evaluate_many(points).value

    def nodal_values(self) -> Array:
        """Normalized G at the active nodes."""
        return self.field.values - self.normalization

    def normalized(
        self, normalization: float, stage: typing.Optional[str] = None
    ) -> "GreenSolution":
        return GreenSolution(
            field=self.field,
            corrector=self.corrector,
            pole=self.pole,
            dimension=self.dimension,
            metric_label=self.metric_label,
            normalization=normalization,
            stage=self.stage if stage is None else stage,
            singular_split=self.singular_split,
            residual=self.residual,
            iterations=self.iterations,
            converged=self.converged,
            metadata=dict(self.metadata),
        )


def sampled_solution(field: ScalarField, label: str = "sampled") -> GreenSolution:
    """Wrap a smooth sampled field (no pole) so it can be analysed like G."""
    return GreenSolution(
        field=field,
        corrector=field,
        pole=None,
        dimension=field.grid.dimension,
        metric_label=label,
        normalization=0.0,
        stage="sampled",
        singular_split=None,
        residual=0.0,
        iterations=0,
    )


def boundary_distance(grid: Grid, point: npt.ArrayLike) -> float:
    cuts = cut_edges(grid)
    if len(cuts.node) == 0:
        return math.inf
    d = grid.displacement(cuts.points, np.asarray(point, dtype=np.float64))
    return float(np.min(np.linalg.norm(d, axis=1)))


def solve_green(
    coefficient: ScalarMap,
    coefficient_gradient: ScalarMap,
    grid: Grid,
    pole: npt.ArrayLike,
    kernel_dimension: typing.Optional[int] = None,
    weight: typing.Optional[Weight] = None,
    label: str = "",
    stage: str = "dirichlet",
) -> GreenSolution:
    """Solve div(a grad G) = -delta_pole with G = 0 on the embedded boundary."""
    y = np.asarray(pole, dtype=np.float64)
    h = grid.min_spacing
    n = grid.dimension
    kernel = n if kernel_dimension is None else kernel_dimension
    distance = boundary_distance(grid, y)
    if distance <= 4.0 * h:
        raise ParameterError(
            f"Pole {y.tolist()} is within 4h of the boundary (distance {distance:.4g})"
        )
    periods = tuple(
        (hi - lo) if kind == AxisKind.PERIODIC else None
        for (lo, hi), kind in zip(grid.bbox, grid.axis_kinds)
    )
    radius = min(0.5 * distance, 1.0)
    for period in periods:
        if period is not None:
            radius = min(radius, 0.45 * period)
    split = SingularSplit(
        pole=tuple(float(x) for x in y),
        radius=radius,
        kernel_dimension=kernel,
        pole_coefficient=float(coefficient(y[None, :])[0]),
        periods=periods,
        floor=0.5 * h,
    )

    points = grid.node_points(grid.active_nodes)
    s = split.value(points)
    near = np.flatnonzero(np.linalg.norm(split.displacement(points), axis=1) < radius)
    g = np.zeros(len(points))
    if len(near):
        g[near] = split.source(
            points[near], coefficient(points[near]), coefficient_gradient(points[near])
        )
        if weight is not None:
            g[near] = g[near] * weight(points[near])
    stencil = assemble(coefficient, grid, weight)
    w, report = solve_system(stencil, g)
    return GreenSolution(
        field=ScalarField(grid=grid, values=s + w),
        corrector=ScalarField(grid=grid, values=w),
        pole=split.pole,
        dimension=kernel,
        metric_label=label,
        normalization=0.0,
        stage=stage,
        singular_split=split,
        residual=report.residual,
        iterations=report.iterations,
        converged=report.converged,
    )


def solve_dirichlet_green(
    metric: ConformalMetric, domain: Domain, pole: npt.ArrayLike, grid: Grid
) -> GreenSolution:
    if not bool(domain.contains(pole)[0]):
        raise ParameterError(
            f"Pole {np.asarray(pole).tolist()} is not inside {domain.label}"
        )
    solution = solve_green(
        metric.coefficient,
        metric.coefficient_gradient,
        grid,
        pole,
        label=metric.label,
    )
    solution.metadata["domain"] = domain.label
    return solution


def solve_annulus_problem(
    metric: ConformalMetric, outer: float, grid: Grid
) -> GreenSolution:
    """Homogeneous problem on 1/R < |x| < R with the annulus Dirichlet data."""
    if outer <= 1.0:
        raise ParameterError(f"Annulus outer radius must exceed 1: {outer}")
    if 1.0 / outer < 4.0 * grid.min_spacing:
        raise ParameterError(f"Inner radius {1.0 / outer:g} is not resolved by 4 cells")
    data = annulus_data(metric.dimension, outer)
    stencil = assemble(metric.coefficient, grid)
    values, report = solve_system(stencil, stencil.boundary_rhs(data))
    field_ = ScalarField(grid=grid, values=values)
    return GreenSolution(
        field=field_,
        corrector=field_,
        pole=None,
        dimension=metric.dimension,
        metric_label=metric.label,
        normalization=0.0,
        stage=f"R={outer:g}",
        singular_split=None,
        residual=report.residual,
        iterations=report.iterations,
        converged=report.converged,
        metadata={"data": data.label},
    )


def annulus_grid(dimension: int, outer: float, h: float) -> Grid:
    domain = make_domain(
        "annulus", {"inner": 1.0 / outer, "outer": outer, "dimension": dimension}
    )
    return build_grid(domain, h)


@dataclass(frozen=True)
class EnergyReport:
    value: float
    admissible: bool


def energy(
    metric: ConformalMetric,
    field: ScalarField,
    data: DirichletData = ZERO_DATA,
    stencil: typing.Optional[Stencil] = None,
) -> EnergyReport:
    """Discrete E(F) = int a |grad F|^2 with F fixed to `data` on the boundary."""
    used = stencil if stencil is not None else assemble(metric.coefficient, field.grid)
    trace = data.value(used.cuts.points)
    admissible = bool(np.all(np.isfinite(trace)) and np.all(np.isfinite(field.values)))
    return EnergyReport(value=used.energy(field.values, data), admissible=admissible)


def exhaustion_domain(kind: str, pole: Array, radius: float) -> Domain:
    n = len(pole)
    if kind == "ball":
        return make_domain("ball", {"radius": radius, "center": tuple(pole)})
    if kind == "disk":
        return make_domain("disk", {"radius": radius, "center": tuple(pole)})
    if kind == "box":
        return make_domain("box", {"lo": tuple(pole - radius), "hi": tuple(pole + radius)})
    if kind == "truncated_cylinder":
        assert n == 2, "Cylinder exhaustions are two-dimensional"
        return make_domain("truncated_cylinder", {"half_length": radius})
    raise ParameterError(f"Unknown exhaustion kind: {kind}")


def _aitken(values: typing.Sequence[float]) -> float:
    v0, v1, v2 = values[-3:]
    denominator = (v2 - v1) - (v1 - v0)
    if abs(denominator) < 1e-14 * max(abs(v2), 1.0):
        return v2
    return v2 - (v2 - v1) ** 2 / denominator


def core_samples(pole: Array, half_width: float, hole: float, spacing: float) -> Array:
    axes = [np.arange(c - half_width, c + half_width + 0.5 * spacing, spacing) for c in pole]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    return points[np.linalg.norm(points - pole, axis=1) > hole]


def cylinder_core_samples(
    pole: Array, half_width: float, hole: float, spacing: float
) -> Array:
    """[x - w, x + w] x S^1 around the pole, minus a disk."""
    xs = np.arange(pole[0] - half_width, pole[0] + half_width + 0.5 * spacing, spacing)
    thetas = np.arange(0.0, 2.0 * math.pi, spacing)
    mesh = np.meshgrid(xs, thetas, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    d = points - pole
    d[:, 1] = d[:, 1] - 2.0 * math.pi * np.round(d[:, 1] / (2.0 * math.pi))
    return points[np.linalg.norm(d, axis=1) > hole]


def litam_limit(
    metric: ConformalMetric,
    pole: npt.ArrayLike,
    schedule: typing.Sequence[float],
    tol: float,
    h: float,
    kind: str = "ball",
    core: float = 2.0,
    extrapolate: bool = True,
) -> GreenSolution:
    """
    Normalized Dirichlet Green's functions over an exhaustion by `kind`
    domains of the given radii; a_k = G_k(x_ref) - G_1(x_ref) with x_ref at
    distance 1 from the pole along the first axis.
    """
    if len(schedule) < 3:
        raise ParameterError(f"Exhaustion schedule needs at least 3 stages: {schedule}")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ParameterError(f"Exhaustion schedule must increase: {schedule}")
    y = np.asarray(pole, dtype=np.float64)
    reference = y.copy()
    reference[0] += 1.0
    samples: typing.Optional[Array] = None
    references: list[float] = []
    previous: typing.Optional[Array] = None
    differences: list[float] = []
    solution: typing.Optional[GreenSolution] = None
    converged = False
    for radius in schedule:
        domain = exhaustion_domain(kind, y, radius)
        grid = build_grid(domain, h)
        stage = solve_green(
            metric.coefficient,
            metric.coefficient_gradient,
            grid,
            y,
            label=metric.label,
            stage=f"R={radius:g}",
        )
        references.append(float(stage.evaluate(reference[None, :])[0]))
        normalization = references[-1] - references[0]
        solution = stage.normalized(normalization)
        if samples is None:
            width = min(core, 0.5 * radius)
            step = max(h, 2.0 * width / 64)
            if kind == "truncated_cylinder":
                samples = cylinder_core_samples(y, width, 0.2, step)
            else:
                samples = core_samples(y, width, 0.2, step)
        current = solution.evaluate(samples)
        if previous is not None:
            differences.append(float(np.max(np.abs(current - previous))))
            logger.info("Stage R=%g: core change %.3e", radius, differences[-1])
            if differences[-1] < tol:
                converged = True
                break
        previous = current
    assert solution is not None
    metadata: dict[str, typing.Any] = {
        "schedule": list(schedule),
        "reference_point": reference.tolist(),
        "reference_values": references,
        "core_differences": differences,
        "exhaustion": kind,
    }
    normalization = solution.normalization
    if extrapolate and metric.dimension >= 3 and len(references) >= 3:
        limit = _aitken(references)
        metadata["reference_limit"] = limit
        normalization = references[-1] - limit
    if not converged:
        logger.warning(
            "Li-Tam exhaustion did not converge to %g over %s (changes %s)",
            tol,
            list(schedule),
            differences,
        )
    result = solution.normalized(normalization)
    return GreenSolution(
        field=result.field,
        corrector=result.corrector,
        pole=result.pole,
        dimension=result.dimension,
        metric_label=result.metric_label,
        normalization=result.normalization,
        stage=result.stage,
        singular_split=result.singular_split,
        residual=result.residual,
        iterations=result.iterations,
        converged=converged,
        metadata=metadata,
    )


def fibonacci_sphere(count: int) -> Array:
    i = np.arange(count) + 0.5
    z = 1.0 - 2.0 * i / count
    angle = math.pi * (1.0 + math.sqrt(5.0)) * i
    rho = np.sqrt(1.0 - z * z)
    return np.stack([rho * np.cos(angle), rho * np.sin(angle), z], axis=1)


def _probe(
    solution: GreenSolution, radius: float, samples: int
) -> tuple[Array, Array, Array]:
    """Points, unit normals and surface weights of the probe sphere around the pole."""
    assert solution.pole is not None, "Probe spheres need a pole"
    y = np.asarray(solution.pole)
    n = solution.grid.dimension
    reduced = solution.dimension != n
    if n == 3:
        normals = fibonacci_sphere(samples)
        weights = np.full(samples, 4.0 * math.pi * radius**2 / samples)
    elif reduced:
        # Half circle in the (x, r) plane, swept around the axis
        t = (np.arange(samples) + 0.5) * math.pi / samples
        normals = np.stack([np.cos(t), np.sin(t)], axis=1)
        weights = 2.0 * math.pi * radius * np.sin(t) * math.pi * radius / samples
    else:
        t = np.arange(samples) * 2.0 * math.pi / samples
        normals = np.stack([np.cos(t), np.sin(t)], axis=1)
        weights = np.full(samples, 2.0 * math.pi * radius / samples)
    return y + radius * normals, normals, weights


def pole_flux(
    solution: GreenSolution, coefficient: ScalarMap, radius: float, samples: int = 2048
) -> float:
    """Flux of a grad G out of the probe sphere; -1 for a unit source."""
    points, normals, weights = _probe(solution, radius, samples)
    gradient = solution.evaluate_many(points).gradient
    flux = coefficient(points) * np.sum(gradient * normals, axis=1)
    return float(np.sum(flux * weights))


def asymptotic_ratio(
    solution: GreenSolution, coefficient: ScalarMap, radius: float, samples: int = 256
) -> float:
    """Mean of a(y) dG/dr over the model derivative of the fundamental solution."""
    assert solution.pole is not None, "Asymptotics need a pole"
    points, normals, _ = _probe(solution, radius, samples)
    gradient = solution.evaluate_many(points).gradient
    radial = np.sum(gradient * normals, axis=1)
    pole_a = float(coefficient(np.asarray(solution.pole)[None, :])[0])
    _, model, _ = fundamental_solution(solution.dimension, np.array([radius]))
    return float(np.mean(pole_a * radial / model[0]))


def save_solution(solution: GreenSolution, prefix: str) -> None:
    dump(solution.field, prefix + ".gfnd")
    dump(solution.corrector, prefix + ".corrector.gfnd")
    split = solution.singular_split
    sidecar = {
        "pole": list(solution.pole) if solution.pole is not None else None,
        "dimension": solution.dimension,
        "metric": solution.metric_label,
        "normalization": solution.normalization,
        "stage": solution.stage,
        "residual": solution.residual,
        "iterations": solution.iterations,
        "converged": solution.converged,
        "singular_split": None
        if split is None
        else {
            "radius": split.radius,
            "kernel_dimension": split.kernel_dimension,
            "pole_coefficient": split.pole_coefficient,
            "floor": split.floor,
        },
        "metadata": solution.metadata,
    }
    with open(prefix + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)


def load_solution(prefix: str) -> GreenSolution:
    with open(prefix + ".json") as fh:
        content = json.load(fh)
    if type(content) != dict:
        raise FormatError(f"Solution sidecar is not an object: {prefix}.json")
    field_ = load(prefix + ".gfnd")
    corrector = load(prefix + ".corrector.gfnd")
    split_content = content["singular_split"]
    split = None
    if split_content is not None:
        grid = field_.grid
        split = SingularSplit(
            pole=tuple(content["pole"]),
            radius=float(split_content["radius"]),
            kernel_dimension=int(split_content["kernel_dimension"]),
            pole_coefficient=float(split_content["pole_coefficient"]),
            periods=tuple(
                (hi - lo) if kind == AxisKind.PERIODIC else None
                for (lo, hi), kind in zip(grid.bbox, grid.axis_kinds)
            ),
            floor=float(split_content["floor"]),
        )
    return GreenSolution(
        field=field_,
        corrector=corrector,
        pole=tuple(content["pole"]) if content["pole"] is not None else None,
        dimension=int(content["dimension"]),
        metric_label=str(content["metric"]),
        normalization=float(content["normalization"]),
        stage=str(content["stage"]),
        singular_split=split,
        residual=float(content["residual"]),
        iterations=int(content["iterations"]),
        converged=bool(content["converged"]),
        metadata=dict(content["metadata"]),
    )
