"""
Headline experiments. Each runner turns an ExperimentConfig into a
ReportBundle whose checks carry the thresholds taken from the config, so a
bundle can be audited without re-running anything.
"""

from concurrent.futures import ThreadPoolExecutor
import logging
import math
import time
import typing
import numpy as np
import pandas as pd
from scipy.spatial import cKDTree  # type: ignore[import-untyped]
from greenscope import axisym, critpoint, elliptic, geometry, gradflow, levelset, plots
from greenscope.config import ExperimentConfig, ShapeSpec, worker_count
from greenscope.critpoint import Classification, CriticalPoint
from greenscope.discretize import Grid, ScalarField, build_grid
from greenscope.elliptic import DirichletData, GreenSolution
from greenscope.errors import ParameterError
from greenscope.geometry import Array, ConformalMetric, Domain, SymmetryKind
from greenscope.report import Relation, ReportBundle, check, write_bundle

logger = logging.getLogger(__name__)

Runner = typing.Callable[[ExperimentConfig, np.random.Generator], ReportBundle]

_REGISTRY: dict[str, Runner] = {}

# Probe radii for the flux checks, in units of h
FLUX_RADII = (5.0, 10.0, 20.0)
# -(1/4pi) log 2: value at the saddle of the flat cylinder's Green's function
CYLINDER_SADDLE_VALUE = -math.log(2.0) / (4.0 * math.pi)


def experiment(kind: str) -> typing.Callable[[Runner], Runner]:
    def register(fn: Runner) -> Runner:
        assert kind not in _REGISTRY, f"Duplicate experiment kind: {kind}"
        _REGISTRY[kind] = fn
        return fn

    return register


def experiment_kinds() -> list[str]:
    return sorted(_REGISTRY)


def run_experiment(config: ExperimentConfig) -> ReportBundle:
    if config.experiment not in _REGISTRY:
        raise ParameterError(
            f"Unknown experiment kind {config.experiment!r}; known: {experiment_kinds()}"
        )
    rng = np.random.default_rng(config.seed)
    started = time.perf_counter()
    bundle = _REGISTRY[config.experiment](config, rng)
    logger.info(
        "Experiment %s finished in %.1f s: %d/%d checks passed",
        config.name,
        time.perf_counter() - started,
        len(bundle.checks) - len(bundle.failures()),
        len(bundle.checks),
    )
    if config.output:
        write_bundle(bundle, config.output)
    plots.close(bundle.figures.values())
    return bundle


def build_domain(spec: typing.Optional[ShapeSpec]) -> Domain:
    if spec is None:
        raise ParameterError("Experiment needs a domain")
    return geometry.make_domain(spec.kind, spec.params)


def build_metric(
    spec: typing.Optional[ShapeSpec], dimension: int, rng: np.random.Generator
) -> ConformalMetric:
    if spec is None:
        return geometry.euclidean_metric(dimension)
    params = spec.params
    if spec.kind == "euclidean":
        return geometry.euclidean_metric(int(params.get("dimension", dimension)))
    if spec.kind == "conformal":
        omega = params["domain"]
        return geometry.conformal_factor_build(
            geometry.make_domain(omega["kind"], omega.get("params", {})), float(params["j"])
        )
    if spec.kind == "bump":
        return geometry.axisymmetric_bump_metric(
            float(params["amplitude"]),
            float(params["center"]),
            float(params["ring_radius"]),
            float(params["width"]),
        )
    if spec.kind == "random_bump":
        return geometry.random_axisymmetric_bump(rng, float(params.get("clearance", 1.0)))
    raise ParameterError(f"Unknown metric kind: {spec.kind}")


def _pole(config: ExperimentConfig, dimension: int) -> tuple[float, ...]:
    if not config.pole:
        return (0.0,) * dimension
    if len(config.pole) != dimension:
        raise ParameterError(f"Pole {config.pole} is not {dimension}D")
    return config.pole


def _bundle(config: ExperimentConfig, dimension: int) -> ReportBundle:
    return ReportBundle(name=config.name, config=config.as_dict(), dimension=dimension)


def _flux_checks(
    bundle: ReportBundle,
    solution: GreenSolution,
    metric: ConformalMetric,
    config: ExperimentConfig,
) -> None:
    h = solution.grid.min_spacing
    assert solution.pole is not None
    # Probe spheres stay within half the distance to the boundary
    reach = 0.5 * elliptic.boundary_distance(solution.grid, solution.pole)
    scale = min(h, reach / FLUX_RADII[-1])
    fluxes = {}
    for factor in FLUX_RADII:
        flux = elliptic.pole_flux(solution, metric.coefficient, factor * scale)
        fluxes[f"{factor * scale:.4g}"] = flux
        bundle.add(
            check(
                f"flux_error_r={factor * scale:.4g}",
                abs(flux + 1.0),
                config.tolerance("flux"),
            )
        )
    ratio = elliptic.asymptotic_ratio(solution, metric.coefficient, FLUX_RADII[0] * scale)
    bundle.add(check("near_pole_ratio_error", abs(ratio - 1.0), config.tolerance("ratio")))
    bundle.results["flux"] = fluxes
    bundle.results["near_pole_ratio"] = ratio


def _census_checks(
    bundle: ReportBundle, report: critpoint.CensusReport, config: ExperimentConfig
) -> None:
    bundle.census = report.points
    bundle.results["census_seeds"] = report.seeds
    bundle.results["census_discarded"] = report.discarded
    worst = max((p.grad_residual for p in report.points), default=0.0)
    bundle.add(
        check("census_suspect", sum(p.suspect for p in report.points), 0),
        check("census_max_residual", worst, config.tolerance("gradient")),
    )


def _hopf(
    bundle: ReportBundle, points: typing.Sequence[CriticalPoint], genus: int, ends: int
) -> None:
    report = critpoint.hopf_check(points, genus, ends)
    bundle.hopf = report
    residual = report.identity_residual
    bundle.add(
        check("hopf_residual", math.nan if residual is None else abs(residual), 0),
        check("census_size_minus_betti", report.census_size - report.betti, 0),
    )


def _expected_count(
    bundle: ReportBundle, points: typing.Sequence[CriticalPoint], config: ExperimentConfig
) -> None:
    expected = config.option("expect_census", None)
    if expected is not None:
        bundle.add(check("census_size", len(points), int(expected), Relation.EQUAL))


def _component_checks(
    bundle: ReportBundle, solution: GreenSolution, points: typing.Sequence[CriticalPoint]
) -> None:
    """Every isolated critical point of G splits a small sphere into at least 3 regions."""
    counts = []
    for i, p in enumerate(points):
        count = critpoint.local_component_count(solution, p.position)
        counts.append(count)
        bundle.add(check(f"local_components_{i}", count, 3, Relation.AT_LEAST))
    bundle.results["local_components"] = counts


def _symmetry_check(
    bundle: ReportBundle,
    domain: Domain,
    pole: typing.Sequence[float],
    points: typing.Sequence[CriticalPoint],
    tolerance: float,
) -> None:
    """The census is mapped to itself by every declared reflection fixing the pole."""
    n = domain.dimension
    y = np.asarray(pole)
    positions = np.array([p.position for p in points]).reshape(-1, n)
    worst = 0.0
    for s in domain.symmetries:
        if s.kind != SymmetryKind.REFLECTION:
            continue
        m = s.matrix(n)
        if not np.allclose(m @ y, y):
            continue
        for x in positions:
            image = m @ x
            gaps = np.linalg.norm(positions - image, axis=1)
            worst = max(worst, float(np.min(gaps)))
    bundle.add(check("census_symmetry_gap", worst, tolerance))


def _level_components(table: pd.DataFrame) -> list[int]:
    return [int(c) for c in table["components"]]


def _genera(table: pd.DataFrame, row: int) -> list[int]:
    text = str(table["genus"][row])
    return [int(g) for g in text.split(";") if g not in ("", "None")]


def _periodic_copies(points: Array, grid: Grid) -> Array:
    copies = [points]
    for k, (lo, hi) in enumerate(grid.bbox):
        if grid.periodic[k]:
            for shift in (-(hi - lo), hi - lo):
                moved = points.copy()
                moved[:, k] += shift
                copies.append(moved)
    return np.concatenate(copies)


def _complement_cells(seed_grid: Grid, basin: gradflow.BasinMap, stable: Array) -> int:
    """Seed cells meeting the basin complement: tagged seeds and cells on stable separatrices."""
    seeds = seed_grid.node_points(seed_grid.active_nodes)
    near = np.zeros(len(seeds), dtype=bool)
    if len(stable):
        tree = cKDTree(_periodic_copies(stable, seed_grid))
        distance, _ = tree.query(seeds)
        near = distance <= 0.5 * math.hypot(*seed_grid.spacing)
    return int(np.sum(near | (basin.tags >= 0)))


def _basin_analysis(
    bundle: ReportBundle,
    solution: GreenSolution,
    points: typing.Sequence[CriticalPoint],
    seed_domain: Domain,
    config: ExperimentConfig,
) -> list[gradflow.Separatrix]:
    seed_h = float(config.option("basin_h", 0.04))
    seed_grid = build_grid(seed_domain, seed_h)
    basin = gradflow.basin_map(solution, points, seed_grid)
    bundle.basin = basin.statistics()

    found: list[gradflow.Separatrix] = []
    for p in points:
        found.extend(gradflow.separatrices(solution, p, points))
    stable = [s.trajectory.points for s in found if s.stable]
    stable_points = np.concatenate(stable) if stable else np.zeros((0, seed_grid.dimension))

    tagged = seed_grid.node_points(seed_grid.active_nodes[basin.tags >= 0])
    gap = 0.0
    if len(tagged) and len(stable_points):
        distance, _ = cKDTree(_periodic_copies(stable_points, seed_grid)).query(tagged)
        gap = float(np.max(distance))
    cell = math.hypot(*seed_grid.spacing)
    bundle.add(
        check("basin_seeds", len(basin.tags), 10_000, Relation.AT_LEAST),
        check("basin_undecided_fraction", basin.undecided_fraction, config.tolerance("undecided")),
        check("stable_set_distance_to_separatrix", gap, cell),
        check("separatrices_out_of_sector", sum(not s.in_sector for s in found), 0),
    )

    cells = _complement_cells(seed_grid, basin, stable_points)
    bundle.basin["complement_cells"] = cells
    if config.option("refine", True):
        fine_grid = build_grid(seed_domain, 0.5 * seed_h)
        fine = gradflow.basin_map(solution, points, fine_grid)
        fine_cells = _complement_cells(fine_grid, fine, stable_points)
        bundle.basin["complement_cells_refined"] = fine_cells
        bundle.add(
            check("complement_refinement_ratio", fine_cells / max(cells, 1), 2.5),
            check(
                "basin_undecided_fraction_refined",
                fine.undecided_fraction,
                config.tolerance("undecided"),
            ),
        )
    bundle.figures["basin"] = plots.basin_figure(basin)
    bundle.figures["contours"] = plots.contour_figure(solution, points, found, basin)
    bundle.trajectories = [s.trajectory for s in found]
    return found


def _shifted_oracle_error(
    solution: GreenSolution, samples: Array
) -> tuple[float, float]:
    """Sup error against the cylinder oracle after the best additive constant, and that constant."""
    exact, _ = geometry.oracle_cylinder(samples)
    difference = solution.evaluate(samples) - exact
    shift = 0.5 * (float(np.max(difference)) + float(np.min(difference)))
    return float(np.max(np.abs(difference - shift))), shift


@experiment("cylinder")
def cylinder(config: ExperimentConfig, rng: np.random.Generator) -> ReportBundle:
    """Li-Tam Green's function of the flat cylinder R x S^1 against its closed form."""
    metric = build_metric(config.metric, 2, rng)
    pole = _pole(config, 2)
    schedule = config.schedule or (4.0, 6.0, 8.0)
    solution = elliptic.litam_limit(
        metric,
        pole,
        schedule,
        config.tolerance("litam"),
        config.h,
        kind=str(config.option("exhaustion", "truncated_cylinder")),
    )
    bundle = _bundle(config, 2)
    bundle.solutions["green"] = solution
    bundle.add(check("litam_converged", float(solution.converged), 1.0, Relation.EQUAL))

    core = float(config.option("core", 2.0))
    samples = elliptic.cylinder_core_samples(np.asarray(pole), core, 0.2, config.h)
    error, shift = _shifted_oracle_error(solution, samples)
    bundle.results["oracle_shift"] = shift
    bundle.add(check("oracle_sup_error", error, config.tolerance("oracle")))

    report = critpoint.run_census(solution)
    _census_checks(bundle, report, config)
    points = report.points
    bundle.add(check("census_size", len(points), 1, Relation.EQUAL))
    if points:
        saddle = points[0]
        offset = solution.grid.displacement(np.asarray(saddle.position), (0.0, math.pi))
        bundle.add(
            check(
                "saddle_position_error",
                float(np.linalg.norm(offset)),
                config.tolerance("position"),
            ),
            check(
                "saddle_value_error",
                abs(saddle.value - shift - CYLINDER_SADDLE_VALUE),
                config.tolerance("value"),
            ),
            check("saddle_morse_index", saddle.morse_index or 0, 1, Relation.EQUAL),
            check(
                "saddle_order",
                critpoint.blowup_fit(solution, saddle.position).order,
                2,
                Relation.EQUAL,
            ),
        )
    _hopf(bundle, points, genus=0, ends=2)
    _flux_checks(bundle, solution, metric, config)
    _component_checks(bundle, solution, points)

    seed_domain = geometry.make_domain("truncated_cylinder", {"half_length": core})
    found = _basin_analysis(bundle, solution, points, seed_domain, config)
    at_pole = sum(
        not s.stable and s.trajectory.termination == gradflow.Termination.POLE for s in found
    )
    bundle.add(check("unstable_separatrices_at_pole", at_pole, 2 * len(points), Relation.EQUAL))

    if points:
        delta = float(config.option("level_offset", 0.01))
        table = levelset.level_scan(
            solution, [points[0].value + delta, points[0].value - delta], points
        )
        bundle.levels = table
        bundle.add(
            check("components_above_saddle", _level_components(table)[0], 1, Relation.EQUAL),
            check("components_below_saddle", _level_components(table)[1], 2, Relation.EQUAL),
        )
        bundle.figures["levels"] = plots.level_scan_figure(table, "Components across the saddle")
    return bundle


@experiment("exhaustion")
def exhaustion(config: ExperimentConfig, rng: np.random.Generator) -> ReportBundle:
    """Li-Tam exhaustion of a complete manifold by balls or disks."""
    dimension = int(config.option("dimension", 2))
    metric = build_metric(config.metric, dimension, rng)
    pole = _pole(config, metric.dimension)
    kind = str(config.option("exhaustion", "disk" if metric.dimension == 2 else "ball"))
    solution = elliptic.litam_limit(
        metric, pole, config.schedule or (4.0, 8.0, 16.0), config.tolerance("litam"), config.h, kind
    )
    bundle = _bundle(config, metric.dimension)
    bundle.solutions["green"] = solution
    bundle.add(check("litam_converged", float(solution.converged), 1.0, Relation.EQUAL))

    report = critpoint.run_census(solution)
    _census_checks(bundle, report, config)
    _expected_count(bundle, report.points, config)
    if metric.dimension == 2:
        _hopf(bundle, report.points, int(config.option("genus", 0)), int(config.option("ends", 1)))
    _flux_checks(bundle, solution, metric, config)

    distances = config.option("level_distances", [0.5, 1.0, 2.0])
    probes = np.asarray(pole) + np.outer(distances, np.eye(metric.dimension)[0])
    table = levelset.level_scan(solution, solution.evaluate(probes), report.points)
    bundle.levels = table
    for i, count in enumerate(_level_components(table)):
        bundle.add(check(f"level_{i}_components", count, 1, Relation.EQUAL))
    if metric.dimension == 2:
        bundle.figures["contours"] = plots.contour_figure(solution, report.points)
    return bundle


@experiment("dirichlet")
def dirichlet(config: ExperimentConfig, rng: np.random.Generator) -> ReportBundle:
    """Dirichlet Green's function of a bounded planar domain with Hopf accounting."""
    domain = build_domain(config.domain)
    metric = build_metric(config.metric, domain.dimension, rng)
    pole = _pole(config, domain.dimension)
    solution = elliptic.solve_dirichlet_green(metric, domain, pole, build_grid(domain, config.h))
    bundle = _bundle(config, domain.dimension)
    bundle.solutions["green"] = solution

    report = critpoint.run_census(solution)
    points = report.points
    _census_checks(bundle, report, config)
    _expected_count(bundle, points, config)
    bundle.add(
        check(
            "nondegenerate_points",
            sum(p.classification == Classification.NONDEGENERATE for p in points),
            len(points),
            Relation.EQUAL,
        )
    )
    # A bounded planar domain with k boundary curves behaves like a sphere with k ends
    _hopf(bundle, points, 0, domain.boundary_components)
    _flux_checks(bundle, solution, metric, config)
    _component_checks(bundle, solution, points)
    _symmetry_check(bundle, domain, pole, points, config.tolerance("position"))
    side = config.option("expect_side", None)
    if side is not None:
        axis, sign = int(side[0]), float(side[1])
        wrong = sum(sign * p.position[axis] <= 0 for p in points)
        bundle.add(check("census_on_expected_side", wrong, 0, Relation.EQUAL))

    seed_spec = config.option("basin_domain", None)
    if seed_spec is not None:
        seed_domain = geometry.make_domain(seed_spec["kind"], seed_spec.get("params", {}))
        _basin_analysis(bundle, solution, points, seed_domain, config)
    else:
        found = [s for p in points for s in gradflow.separatrices(solution, p, points)]
        bundle.trajectories = [s.trajectory for s in found]
        bundle.figures["contours"] = plots.contour_figure(solution, points, found)

    if points:
        c = max(p.value for p in points)
        delta = float(config.option("level_offset", 0.01))
        table = levelset.level_scan(solution, [c + delta, c - delta], points)
        bundle.levels = table
        bundle.figures["levels"] = plots.level_scan_figure(table)

    # Small levels hug the boundary
    near_zero = float(config.option("boundary_level", 1e-3))
    hugging = levelset.extract(solution, near_zero, points)
    gap = levelset.boundary_hausdorff(hugging, domain, config.h)
    bundle.results["boundary_hausdorff"] = gap
    bundle.add(check("boundary_hausdorff", gap, float(config.option("hausdorff", 5.0 * config.h))))
    return bundle


@experiment("radial_annulus")
def radial_annulus(config: ExperimentConfig, rng: np.random.Generator) -> ReportBundle:
    """Annulus problem 1/R < |x| < R against the radial closed form and its energy."""
    dimension = int(config.option("dimension", 3))
    outer = float(config.option("R", 2.0))
    metric = build_metric(config.metric, dimension, rng)
    grid = elliptic.annulus_grid(dimension, outer, config.h)
    solution = elliptic.solve_annulus_problem(metric, outer, grid)
    bundle = _bundle(config, dimension)
    bundle.solutions["annulus"] = solution
    slack = 3.0 * config.h**2

    if dimension == 3:
        directions = elliptic.fibonacci_sphere(200)
    else:
        t = np.linspace(0.0, 2.0 * math.pi, 200, endpoint=False)
        directions = np.stack([np.cos(t), np.sin(t)], axis=1)
    params = {"R": outer, "dimension": dimension}
    expected = float(geometry.oracle_radial("spherical_annulus", params, 1.0))
    value_error = float(np.max(np.abs(solution.evaluate(directions) - expected)))
    bundle.results["value_at_1"] = expected
    bundle.add(check("value_at_unit_radius_error", value_error, slack))

    a, b = geometry.radial_annulus_coefficients(dimension, outer)
    if dimension == 3:
        exact_energy = 4.0 * math.pi * b * b * (outer - 1.0 / outer)
    else:
        exact_energy = 2.0 * math.pi * b * b * 2.0 * math.log(outer)
    data = elliptic.annulus_data(dimension, outer)
    stencil = elliptic.assemble(metric.coefficient, grid)
    report = elliptic.energy(metric, solution.field, data, stencil)
    bundle.results["energy"] = report.value
    bundle.results["energy_exact"] = exact_energy
    bundle.add(
        check("energy_error", abs(report.value - exact_energy), slack),
        check("energy_admissible", float(report.admissible), 1.0, Relation.EQUAL),
    )

    trials = int(config.option("perturbations", 100))
    scale = 1e-3 * float(np.max(np.abs(solution.field.values)))
    violations = 0
    for _ in range(trials):
        v = scale * rng.standard_normal(len(solution.field.values))
        perturbed = ScalarField(grid=grid, values=solution.field.values + v)
        if elliptic.energy(metric, perturbed, data, stencil).value < report.value:
            violations += 1
    bundle.add(check("energy_minimizer_violations", violations, 0, Relation.EQUAL))

    r = np.linspace(1.0 / outer + config.h, outer - config.h, 60)
    profile = pd.DataFrame(
        {
            "r": r,
            "computed": solution.evaluate(np.outer(r, np.eye(dimension)[0])),
            "exact": geometry.oracle_radial("spherical_annulus", params, r),
        }
    )
    bundle.figures["profile"] = plots.series_figure(profile, "r", ["computed", "exact"], "F(r)")
    return bundle


def _shell_data(dimension: int, outer: float, omega_radius: float) -> DirichletData:
    """Annulus inner value on |x| = 1/R, zero on the sphere of radius omega_radius."""
    inner_value = 1.0 / (geometry.sphere_area(dimension) * outer ** (dimension - 2))
    split = 0.5 * (1.0 / outer + omega_radius)
    return DirichletData(
        label=f"shell(R={outer:g}, rho={omega_radius:g})",
        value=lambda p: np.where(np.linalg.norm(p, axis=1) < split, inner_value, 0.0),
    )


@experiment("energy_chain")
def energy_chain(config: ExperimentConfig, rng: np.random.Generator) -> ReportBundle:
    """
    Infimal energies E_j of the annulus problem for factors that equal 1 on a
    ball and j away from it, against the energy on the ball itself.
    """
    dimension = 3
    outer = float(config.option("R", 2.0))
    rho = float(config.option("omega_radius", 1.0))
    schedule = [float(j) for j in config.option("j", [2, 4, 8, 16])]
    flat = geometry.euclidean_metric(dimension)

    omega_shell = geometry.make_domain(
        "annulus", {"inner": 1.0 / outer, "outer": rho, "dimension": dimension}
    )
    shell_grid = build_grid(omega_shell, config.h)
    data = _shell_data(dimension, outer, rho)
    stencil = elliptic.assemble(flat.coefficient, shell_grid)
    values, _ = elliptic.solve_system(stencil, stencil.boundary_rhs(data))
    e_omega = stencil.energy(values, data)
    inner_value = 1.0 / (geometry.sphere_area(dimension) * outer ** (dimension - 2))
    e_omega_exact = 4.0 * math.pi * inner_value**2 / (outer - 1.0 / rho)

    omega = geometry.make_domain("ball", {"radius": rho})
    grid = elliptic.annulus_grid(dimension, outer, config.h)
    annulus = elliptic.annulus_data(dimension, outer)
    rows = []
    for j in schedule:
        metric = geometry.conformal_factor_build(omega, j)
        solution = elliptic.solve_annulus_problem(metric, outer, grid)
        e_j = elliptic.energy(metric, solution.field, annulus).value
        bound = (1.0 + 1.0 / j) ** (dimension / 2.0 - 1.0) * e_omega
        rows.append({"j": j, "energy": e_j, "bound": bound, "gap": e_omega - e_j})
        logger.info("E_%g = %.6g (bound %.6g)", j, e_j, bound)
    table = pd.DataFrame(rows)

    bundle = _bundle(config, dimension)
    slack = config.tolerance("energy")
    for row in rows:
        bundle.add(check(f"energy_bound_j={row['j']:g}", row["energy"] - row["bound"], slack))
    gaps = list(table["gap"])
    growth = max((b - a for a, b in zip(gaps, gaps[1:])), default=0.0)
    bundle.add(
        check("gap_increase", growth, slack),
        check("omega_energy_error", abs(e_omega - e_omega_exact), slack),
    )
    bundle.results["omega_energy"] = e_omega
    bundle.results["omega_energy_exact"] = e_omega_exact
    bundle.results["chain"] = rows
    table["omega"] = e_omega
    bundle.figures["energies"] = plots.series_figure(
        table, "j", ["energy", "bound", "omega"], "Energy"
    )
    return bundle


@experiment("torus_tube")
def torus_tube(config: ExperimentConfig, rng: np.random.Generator) -> ReportBundle:
    """
    Factor 1 on a tube around N unit circles and j outside: the Green's
    function picks up at least N critical points of Morse index 2.
    """
    domain = build_domain(config.domain)
    rings = int(config.domain.params["rings"]) if config.domain else 1
    j = float(config.option("j", 100.0))
    margin = float(config.option("margin", 0.3))
    metric = geometry.conformal_factor_build(domain, j)
    lo = tuple(a - margin for a, _ in domain.bbox)
    hi = tuple(b + margin for _, b in domain.bbox)
    box = geometry.make_domain("box", {"lo": lo, "hi": hi})
    pole = _pole(config, 3)
    solution = elliptic.solve_dirichlet_green(metric, box, pole, build_grid(box, config.h))
    h = solution.grid.min_spacing
    bundle = _bundle(config, 3)
    bundle.solutions["green"] = solution

    report = critpoint.run_census(solution)
    points = report.points
    _census_checks(bundle, report, config)
    morse2 = [
        p
        for p in points
        if p.classification == Classification.NONDEGENERATE and p.morse_index == 2
    ]
    bundle.add(check("morse_index_2_points", len(morse2), rings, Relation.AT_LEAST))
    _symmetry_check(bundle, domain, pole, points, float(config.option("pair_radius", 2.0 * h)))
    _flux_checks(bundle, solution, metric, config)
    _component_checks(bundle, solution, points)

    near = solution.evaluate(np.asarray(pole)[None, :] + 3.0 * h * np.eye(3)[1])[0]
    levels = [float(near)]
    if points:
        levels.append(float(config.option("shell_fraction", 0.5)) * min(p.value for p in points))
    table = levelset.level_scan(solution, levels, points)
    bundle.levels = table
    pole_genera = _genera(table, 0)
    bundle.add(check("pole_level_max_genus", max(pole_genera, default=-1), 0, Relation.EQUAL))
    if points:
        shell_genera = _genera(table, 1)
        bundle.results["shell_genera"] = shell_genera
        bundle.add(
            check(
                "shell_level_max_genus", max(shell_genera, default=-1), 1, Relation.AT_LEAST
            )
        )
        shell = levelset.extract(solution, float(table["level"][1]), points)
        if shell:
            bundle.meshes["shell"] = max(shell, key=lambda c: len(c.vertices))
    around = levelset.extract(solution, float(table["level"][0]), points)
    if around:
        bundle.meshes["pole"] = around[0]
    bundle.figures["slice"] = plots.contour_figure(solution, points, title=domain.label)
    return bundle


@experiment("axisym")
def axisymmetric_absence(config: ExperimentConfig, rng: np.random.Generator) -> ReportBundle:
    """Axisymmetric metrics with the pole on the axis have critical-point-free Green's functions."""
    domain = build_domain(config.domain)
    trials = int(config.option("trials", 3))
    metrics = [geometry.euclidean_metric(3)]
    metrics += [build_metric(config.metric, 3, rng) for _ in range(trials)]
    bundle = _bundle(config, 2)
    rows = []
    for k, metric in enumerate(metrics):
        solution = axisym.solve_reduced(axisym.reduce(metric, domain, config.h))
        coarse = None
        if config.option("refinement_noise", True):
            coarse = axisym.solve_reduced(axisym.reduce(metric, domain, 2.0 * config.h))
        absence = axisym.verify_no_critical(solution, coarse)
        margin = absence.min_gradient / max(absence.noise_floor, 1e-300)
        rows.append(
            {
                "metric": metric.label,
                "census": len(absence.census),
                "min_gradient": absence.min_gradient,
                "noise_floor": absence.noise_floor,
            }
        )
        bundle.add(
            check(f"census_size_{k}", len(absence.census), 0, Relation.EQUAL),
            check(f"gradient_margin_{k}", margin, axisym.NOISE_MARGIN, Relation.AT_LEAST),
        )
        bundle.solutions[f"reduced_{k}"] = solution
        if k == 0:
            r = np.linspace(0.2, 0.9, 8) * domain.bbox[0][1]
            points = np.stack([r * 0.6, r * 0.8], axis=1)
            expected = geometry.oracle_radial(
                "ball_center", {"radius": domain.bbox[0][1]}, np.linalg.norm(points, axis=1)
            )
            error = float(np.max(np.abs(solution.evaluate(points) - expected)))
            bundle.add(check("euclidean_oracle_error", error, config.tolerance("oracle")))
        else:
            bundle.figures[f"reduced_{k}"] = plots.contour_figure(solution, title=metric.label)
    bundle.results["trials"] = rows
    return bundle


def _genericity_trial(
    config: ExperimentConfig, index: int, amplitude: float
) -> dict[str, typing.Any]:
    """One perturbed annulus: census, Morse verdict, and the re-test under a 10x smaller kick."""
    base = dict(config.domain.params) if config.domain else {}
    modes = int(config.option("modes", 3))
    rng = np.random.default_rng([config.seed, index])
    kick = rng.uniform(-1.0, 1.0, size=(4, modes, 2))
    pole = _pole(config, 2)
    metric = geometry.euclidean_metric(2)

    def solve(scale: float, extra: float) -> typing.Optional[list[CriticalPoint]]:
        params = dict(base)
        if scale > 0:
            params["inner_modes"] = (scale * kick[0] + extra * kick[2]).tolist()
            params["outer_modes"] = (scale * kick[1] + extra * kick[3]).tolist()
        try:
            domain = geometry.make_domain("annulus", params)
        except ParameterError as e:
            logger.warning("Genericity trial %d skipped: %s", index, e)
            return None
        grid = build_grid(domain, config.h)
        solution = elliptic.solve_dirichlet_green(metric, domain, pole, grid)
        return critpoint.census(solution)

    record: dict[str, typing.Any] = {"trial": index, "skipped": False}
    points = solve(amplitude, 0.0)
    if points is None:
        record["skipped"] = True
        return record
    morse = all(
        p.classification == Classification.NONDEGENERATE and not p.suspect for p in points
    )
    record.update(
        {
            "census": len(points),
            "indices": [p.index for p in points],
            "morse": morse,
        }
    )
    if morse:
        again = solve(amplitude, 0.1 * amplitude)
        record["stable"] = again is not None and sorted(
            p.index or 0 for p in again
        ) == sorted(p.index or 0 for p in points)
    return record


@experiment("morse_genericity")
def morse_genericity(config: ExperimentConfig, rng: np.random.Generator) -> ReportBundle:
    trials = int(config.option("trials", 20))
    amplitude = float(config.option("amplitude", 0.03))
    if trials < 10:
        raise ParameterError(f"Genericity needs at least 10 trials: {trials}")
    if amplitude < 0:
        raise ParameterError(f"Negative perturbation amplitude: {amplitude}")
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        records = list(
            pool.map(lambda k: _genericity_trial(config, k, amplitude), range(trials))
        )
    used = [r for r in records if not r["skipped"]]
    morse = [r for r in used if r["morse"]]
    unstable = [r for r in morse if not r["stable"]]
    fraction = len(morse) / max(len(used), 1)
    logger.info(
        "Genericity: %d/%d trials Morse, %d skipped", len(morse), len(used), trials - len(used)
    )
    bundle = _bundle(config, 2)
    bundle.results["trials"] = records
    bundle.results["morse_fraction"] = fraction
    bundle.add(
        check("trials_run", len(used), 10, Relation.AT_LEAST),
        check("morse_fraction", fraction, config.tolerance("morse_fraction"), Relation.AT_LEAST),
        check("openness_violations", len(unstable), 0, Relation.EQUAL),
    )
    table = pd.DataFrame(used)
    if not table.empty:
        bundle.figures["census_sizes"] = plots.series_figure(
            table, "trial", ["census"], "Critical points", marker="o"
        )
    return bundle


def _harmonic(order: int) -> typing.Callable[[Array], Array]:
    def fn(p: Array) -> Array:
        return np.asarray(np.real((p[:, 0] + 1j * p[:, 1]) ** order))

    return fn


def _split_cubic(p: Array) -> Array:
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    return np.asarray(x * x - y * y + (x * x + y * y) * z - (2.0 / 3.0) * z**3)


@experiment("blowup")
def blowup(config: ExperimentConfig, rng: np.random.Generator) -> ReportBundle:
    """Polar blow-up classifier on Re z^m, a harmonic cubic in 3D, and a computed saddle."""
    bundle = _bundle(config, 2)
    square = geometry.make_domain("box", {"lo": (-1.0, -1.0), "hi": (1.0, 1.0)})
    grid = build_grid(square, config.h)
    origin = (0.0, 0.0)
    rows = []
    for m in config.option("orders", [2, 3, 4, 5]):
        solution = elliptic.sampled_solution(
            ScalarField.from_function(grid, _harmonic(int(m))), label=f"Re z^{m}"
        )
        point = critpoint.classify(solution, origin)
        fit = critpoint.blowup_fit(solution, origin)
        found = gradflow.separatrices(solution, point)
        count = critpoint.local_component_count(solution, origin)
        rows.append(
            {
                "m": m,
                "order": fit.order,
                "separatrices": len(found),
                "index": point.index,
                "components": count,
            }
        )
        bundle.add(
            check(f"order_m={m}", fit.order, m, Relation.EQUAL),
            check(f"separatrices_m={m}", len(found), 2 * m, Relation.EQUAL),
            check(
                f"index_m={m}",
                point.index if point.index is not None else math.nan,
                1 - m,
                Relation.EQUAL,
            ),
            check(f"components_m={m}", count, 2 * m, Relation.EQUAL),
        )
        if m == 3:
            bundle.figures["monkey_saddle"] = plots.blowup_figure(solution, point, 10.0 * config.h)
            bundle.figures["monkey_separatrices"] = plots.contour_figure(
                solution, [point], found, title="Re z^3"
            )
    bundle.results["harmonic"] = rows

    spacing = 2.5 * config.h
    half = max(1.0, 12.0 * spacing)
    cube = geometry.make_domain("box", {"lo": (-half,) * 3, "hi": (half,) * 3})
    cubic = elliptic.sampled_solution(
        ScalarField.from_function(build_grid(cube, spacing), _split_cubic),
        label="cubic",
    )
    cubic_count = critpoint.local_component_count(cubic, (0.0, 0.0, 0.0))
    bundle.results["cubic_components"] = cubic_count
    bundle.add(check("cubic_components", cubic_count, 2, Relation.EQUAL))

    annulus = geometry.make_domain("annulus", {"inner": 0.5, "outer": 2.0})
    green = elliptic.solve_dirichlet_green(
        geometry.euclidean_metric(2), annulus, (1.2, 0.0), build_grid(annulus, 2.0 * config.h)
    )
    points = critpoint.census(green)
    bundle.add(check("annulus_census", len(points), 1, Relation.AT_LEAST))
    _component_checks(bundle, green, points)
    bundle.census = points
    return bundle


@experiment("oracle")
def oracle(config: ExperimentConfig, rng: np.random.Generator) -> ReportBundle:
    """Dirichlet solves against the image-charge disk and the centred ball."""
    bundle = _bundle(config, 2)
    constant = float(config.option("error_constant", 5.0))
    flat2 = geometry.euclidean_metric(2)
    disk = geometry.make_domain("disk", {"radius": 1.0})
    disk_grid = build_grid(disk, config.h)
    t = np.linspace(0.0, 2.0 * math.pi, 64, endpoint=False)
    for pole in [(0.0, 0.0), (0.3, 0.2)]:
        solution = elliptic.solve_dirichlet_green(flat2, disk, pole, disk_grid)
        circle = np.stack([np.cos(t), np.sin(t)], axis=1)
        rings = [np.asarray(pole) + r * circle for r in (0.2, 0.35)]
        samples = np.concatenate(rings)
        exact, _ = geometry.oracle_disk(samples, pole)
        error = float(np.max(np.abs(solution.evaluate(samples) - exact)))
        bundle.add(check(f"disk_error_pole={pole}", error, constant * config.h**2))
    centred = elliptic.solve_dirichlet_green(flat2, disk, (0.0, 0.0), disk_grid)
    half = 0.5 * np.stack([np.cos(t), np.sin(t)], axis=1)
    bundle.results["disk_value_at_half"] = float(np.mean(centred.evaluate(half)))
    bundle.add(
        check(
            "disk_value_at_half_error",
            abs(bundle.results["disk_value_at_half"] - math.log(2.0) / (2.0 * math.pi)),
            constant * config.h**2,
        )
    )

    ball = geometry.make_domain("ball", {"radius": 1.0})
    coarse = 2.0 * config.h
    solution = elliptic.solve_dirichlet_green(
        geometry.euclidean_metric(3), ball, (0.0, 0.0, 0.0), build_grid(ball, coarse)
    )
    samples = 0.5 * elliptic.fibonacci_sphere(100)
    exact, _ = geometry.oracle_ball(samples)
    error = float(np.max(np.abs(solution.evaluate(samples) - exact)))
    bundle.add(check("ball_error", error, constant * coarse**2))
    return bundle


def summary(bundle: ReportBundle) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "check": c.name,
                "value": c.value,
                "relation": c.relation,
                "threshold": c.threshold,
                "passed": c.passed,
            }
            for c in bundle.checks
        ],
        columns=["check", "value", "relation", "threshold", "passed"],
    )
