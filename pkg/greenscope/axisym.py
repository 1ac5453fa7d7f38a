"""
Reduction of a 3D problem that is rotationally symmetric about the x1-axis
to the meridian half-plane (x, r), r = sqrt(x2^2 + x3^2) >= 0. The orbit of
a point is a circle of length 2 pi r, so the reduced operator is
div(2 pi r a grad F) and the axis r = 0 is a reflecting face.
"""

from dataclasses import dataclass
import logging
import math
import typing
import numpy as np
import numpy.typing as npt
from greenscope import critpoint
from greenscope.critpoint import CriticalPoint
from greenscope.discretize import Grid, build_grid, interpolation_error_estimate
from greenscope.elliptic import GreenSolution, solve_green
from greenscope.errors import ParameterError
from greenscope.geometry import (
    Array,
    ConformalMetric,
    Domain,
    Symmetry,
    axis_rotation,
    as_points,
)

logger = logging.getLogger(__name__)

AXIS = axis_rotation(0)
# Minimum gradient away from the pole must exceed this multiple of the noise floor
NOISE_MARGIN = 100.0


def _require_axis(symmetries: typing.Sequence[Symmetry], what: str) -> None:
    if AXIS not in symmetries:
        raise ParameterError(f"{what} does not declare rotational symmetry about x1")


def _lift(points: Array) -> Array:
    """Meridian points (x, r) as 3D points (x, r, 0)."""
    return np.stack([points[:, 0], points[:, 1], np.zeros(len(points))], axis=1)


def meridian_domain(domain: Domain) -> Domain:
    """The section {(x, r): (x, r, 0) in the domain} with a reflecting axis."""
    if domain.dimension != 3:
        raise ParameterError(f"Meridian sections need a 3D domain, got {domain.dimension}D")
    _require_axis(domain.symmetries, domain.label)
    radial = max(abs(x) for x in domain.bbox[1] + domain.bbox[2])
    distance_fn = domain.distance_fn
    w = domain.witness
    return Domain(
        dimension=2,
        implicit_fn=lambda p: domain.implicit(_lift(p)),
        bbox=(domain.bbox[0], (0.0, radial)),
        periodic=(False, False),
        boundary_components=domain.boundary_components,
        label=f"meridian of {domain.label}",
        witness=(w[0], math.hypot(w[1], w[2])),
        reflecting=(False, True),
        distance_fn=None if distance_fn is None else (lambda p: distance_fn(_lift(p))),
    )


@dataclass(frozen=True, eq=False)
class ReducedProblem:
    metric: ConformalMetric
    domain: Domain
    grid: Grid
    # Pole image on the axis
    pole: tuple[float, float]

    def weight(self, points: Array) -> Array:
        """Orbit length 2 pi r, the density of the reduced volume form."""
        return np.asarray(2.0 * math.pi * points[:, 1])

    def coefficient(self, points: Array) -> Array:
        return self.metric.coefficient(_lift(points))

    def coefficient_gradient(self, points: Array) -> Array:
        return self.metric.coefficient_gradient(_lift(points))[:, :2]


def reduce(
    metric: ConformalMetric,
    domain: Domain,
    h: typing.Union[float, typing.Sequence[float]],
    pole: float = 0.0,
) -> ReducedProblem:
    """Reduce (metric, domain) with the pole at (pole, 0, 0) to the meridian half-plane."""
    if metric.dimension != 3:
        raise ParameterError(f"Axisymmetric reduction needs a 3D metric, got {metric.dimension}D")
    _require_axis(metric.symmetries, metric.label)
    section = meridian_domain(domain)
    image = (float(pole), 0.0)
    if not bool(section.contains([image])[0]):
        raise ParameterError(f"Pole {image} is not inside {section.label}")
    return ReducedProblem(
        metric=metric, domain=section, grid=build_grid(section, h), pole=image
    )


def solve_reduced(problem: ReducedProblem) -> GreenSolution:
    """G on the half-plane, with the 3D singular part sqrt((x - x0)^2 + r^2)^-1 / 4 pi."""
    solution = solve_green(
        problem.coefficient,
        problem.coefficient_gradient,
        problem.grid,
        problem.pole,
        kernel_dimension=3,
        weight=problem.weight,
        label=problem.metric.label,
        stage="axisymmetric",
    )
    solution.metadata["domain"] = problem.domain.label
    return solution


def evaluate_3d(solution: GreenSolution, points: npt.ArrayLike) -> Array:
    """Reduced solution at 3D points, through (x, |(x2, x3)|)."""
    p = as_points(points, 3)
    meridian = np.stack([p[:, 0], np.hypot(p[:, 1], p[:, 2])], axis=1)
    return solution.evaluate(meridian)


def section_difference(
    reduced: GreenSolution, full: GreenSolution, points: npt.ArrayLike
) -> float:
    """Largest |F(x, r) - G(x, r, 0)| over meridian points."""
    p = as_points(points, 2)
    return float(np.max(np.abs(reduced.evaluate(p) - full.evaluate(_lift(p)))))


@dataclass(frozen=True)
class AbsenceReport:
    census: list[CriticalPoint]
    min_gradient: float
    min_location: tuple[float, ...]
    noise_floor: float

    @property
    def passed(self) -> bool:
        return not self.census and self.min_gradient > NOISE_MARGIN * self.noise_floor


def verify_no_critical(
    solution: GreenSolution, coarse: typing.Optional[GreenSolution] = None
) -> AbsenceReport:
    """
    Census of the reduced field with the axis included, and the smallest
    |grad F| away from the pole. The noise floor is measured where that
    minimum sits: the gradient change against a coarser solve when one is
    given, otherwise the local interpolation error of the smooth part over h.
    """
    grid = solution.grid
    h = grid.min_spacing
    found = critpoint.census(solution)
    region = critpoint.working_region(solution, 5.0 * h)
    points = grid.node_points(np.flatnonzero(region.ravel()))
    gradient = solution.evaluate_many(points, strict=False).gradient
    norm = np.linalg.norm(gradient, axis=1)
    worst = int(np.nanargmin(norm))
    at = points[worst]
    if coarse is not None:
        other = coarse.evaluate_many(at[None, :], strict=False).gradient[0]
        noise = float(np.linalg.norm(gradient[worst] - other))
    else:
        nodes = grid.node_points(np.arange(grid.node_count))
        near = np.linalg.norm(grid.displacement(nodes, at), axis=1) <= 3.0 * h
        noise = interpolation_error_estimate(
            solution.corrector, near.reshape(grid.dims)
        ) / h
    report = AbsenceReport(
        census=found,
        min_gradient=float(norm[worst]),
        min_location=tuple(float(x) for x in points[worst]),
        noise_floor=noise,
    )
    logger.info(
        "Reduced census: %d points, min |grad F| %.3e at %s, noise %.3e",
        len(found),
        report.min_gradient,
        report.min_location,
        noise,
    )
    return report
