import json
import logging
import math
import os
import sys
import typing
import click
import numpy as np
from greenscope import (
    axisym,
    critpoint,
    discretize,
    elliptic,
    experiments,
    gradflow,
    levelset,
    parse,
    plots,
)
from greenscope.config import ExperimentConfig, load_catalog, load_experiment_config
from greenscope.discretize import build_grid
from greenscope.errors import GreenscopeError
from greenscope.geometry import ConformalMetric, Domain
from greenscope.report import ReportBundle, census_records

logger = logging.getLogger(__name__)

# Exit statuses
EXIT_CHECKS_FAILED = 1
EXIT_ERROR = 2


class _Group(click.Group):
    """Turns library errors into a one-line JSON diagnostic on stderr."""

    def invoke(self, ctx: click.Context) -> typing.Any:
        try:
            return super().invoke(ctx)
        except GreenscopeError as e:
            diagnostic = {"error": type(e).__name__, "message": str(e)}
            click.echo(json.dumps(diagnostic, sort_keys=True), err=True)
            ctx.exit(EXIT_ERROR)


def _config(
    name: typing.Optional[str],
    config_path: typing.Optional[str],
    h: typing.Optional[float] = None,
    seed: typing.Optional[int] = None,
    out: typing.Optional[str] = None,
) -> ExperimentConfig:
    if config_path is not None:
        base = load_experiment_config(config_path)
    elif name is not None:
        base = load_catalog().experiment(name)
    else:
        raise click.UsageError("Give an experiment name or --config")
    return base.with_overrides(h=h, seed=seed, output=out)


def _domain_setup(
    config: ExperimentConfig,
) -> tuple[Domain, ConformalMetric, tuple[float, ...]]:
    domain = experiments.build_domain(config.domain)
    metric = experiments.build_metric(
        config.metric, domain.dimension, np.random.default_rng(config.seed)
    )
    pole = config.pole or (0.0,) * domain.dimension
    return domain, metric, pole


def _save(solution: elliptic.GreenSolution, out: typing.Optional[str], name: str) -> None:
    if out is None:
        return
    os.makedirs(out, exist_ok=True)
    prefix = os.path.join(out, name)
    elliptic.save_solution(solution, prefix)
    click.echo(f"Saved {prefix}.gfnd")


def _echo_json(content: typing.Any) -> None:
    click.echo(json.dumps(content, indent=2, sort_keys=True, default=float))


def _finish(bundle: ReportBundle, ci: bool) -> None:
    click.echo(experiments.summary(bundle).to_string(index=False))
    if ci and not bundle.passed:
        names = ", ".join(c.name for c in bundle.failures())
        click.echo(f"Failed checks: {names}", err=True)
        sys.exit(EXIT_CHECKS_FAILED)


_CONFIG = click.option(
    "--config", "config_path", type=click.Path(exists=True), help="Experiment JSON"
)
_OUT = click.option("--out", type=click.Path(), help="Output directory")
_SEED = click.option("--seed", type=click.IntRange(min=0, max=2**64 - 1))
_H = click.option("--h", "h", type=float, help="Grid spacing")
_CI = click.option("--ci", is_flag=True, help="Exit 1 when an acceptance check fails")


@click.group(cls=_Group)
@click.option("--verbose", "-v", is_flag=True)
def main(verbose: bool) -> None:
    """Green's functions of conformally flat metrics and their critical points."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


@main.command("list")
def list_experiments() -> None:
    """Shipped experiments and runner kinds."""
    catalog = load_catalog()
    for name, config in sorted(catalog.experiments.items()):
        click.echo(f"{name:<20} {config.experiment:<18} {config.description}")


@main.command()
@click.argument("name", required=False)
@_CONFIG
@_OUT
@_SEED
@_H
@click.option("--csv", "csv_path", type=click.Path(), help="Write node values as CSV")
def solve(
    name: typing.Optional[str],
    config_path: typing.Optional[str],
    out: typing.Optional[str],
    seed: typing.Optional[int],
    h: typing.Optional[float],
    csv_path: typing.Optional[str],
) -> None:
    """Dirichlet Green's function of an experiment's domain, metric and pole."""
    config = _config(name, config_path, h, seed)
    domain, metric, pole = _domain_setup(config)
    solution = elliptic.solve_dirichlet_green(
        metric, domain, pole, build_grid(domain, config.h)
    )
    click.echo(
        f"residual={solution.residual:.3e} iterations={solution.iterations} "
        f"converged={solution.converged}"
    )
    _save(solution, out, "green")
    if csv_path is not None:
        discretize.export_csv(solution.field, csv_path)


@main.command()
@click.argument("name", required=False)
@_CONFIG
@_OUT
@_SEED
@_H
@click.option("--schedule", help="Exhaustion radii, e.g. 4,8,16")
@click.option("--kind", help="Exhaustion domain kind (default: the config's, else ball)")
def litam(
    name: typing.Optional[str],
    config_path: typing.Optional[str],
    out: typing.Optional[str],
    seed: typing.Optional[int],
    h: typing.Optional[float],
    schedule: typing.Optional[str],
    kind: typing.Optional[str],
) -> None:
    """Normalized limit over an exhaustion."""
    config = _config(name, config_path, h, seed)
    stages = parse.parse_schedule(schedule) if schedule else config.schedule
    dimension = len(config.pole) if config.pole else 2
    metric = experiments.build_metric(
        config.metric, dimension, np.random.default_rng(config.seed)
    )
    solution = elliptic.litam_limit(
        metric,
        config.pole or (0.0,) * dimension,
        stages,
        config.tolerance("litam"),
        config.h,
        kind=kind or config.option("exhaustion", "ball"),
        core=float(config.option("core", 2.0)),
    )
    click.echo(f"stage={solution.stage} normalization={solution.normalization:.12g}")
    _save(solution, out, "litam")


@main.command()
@click.argument("field", type=click.Path())
@click.option("--exclusion", type=float, help="Exclusion radius around the pole")
@click.option("--csv", "csv_path", type=click.Path(), help="Write the census CSV here")
def critical(
    field: str, exclusion: typing.Optional[float], csv_path: typing.Optional[str]
) -> None:
    """Critical point census of a saved solution (path without extension)."""
    solution = elliptic.load_solution(field)
    report = critpoint.run_census(solution, exclusion)
    frame = critpoint.census_frame(report.points, solution.grid.dimension)
    click.echo(frame.to_string(index=False))
    click.echo(f"seeds={report.seeds} discarded={report.discarded}")
    if csv_path is not None:
        frame.to_csv(csv_path, index=False)


@main.command()
@click.argument("field", type=click.Path())
@click.argument("start")
@click.option("--backward", is_flag=True)
@click.option("--csv", "csv_path", type=click.Path())
@click.option("--svg", "svg_path", type=click.Path())
def flow(
    field: str,
    start: str,
    backward: bool,
    csv_path: typing.Optional[str],
    svg_path: typing.Optional[str],
) -> None:
    """Integrate the regularized gradient flow from START, e.g. 0.5,1.0."""
    solution = elliptic.load_solution(field)
    seed = parse.parse_point(start, solution.grid.dimension)
    points = critpoint.census(solution)
    direction = gradflow.Direction.BACKWARD if backward else gradflow.Direction.FORWARD
    trajectory = gradflow.integrate(
        gradflow.regularized_field(solution), seed, direction, critical_points=points
    )
    click.echo(
        f"termination={trajectory.termination.value} critical={trajectory.critical} "
        f"steps={trajectory.steps} arclength={trajectory.arclength:.6g}"
    )
    if csv_path is not None:
        gradflow.trajectory_frame([trajectory]).to_csv(csv_path, index=False)
    if svg_path is not None and solution.grid.dimension == 2:
        figure = plots.trajectory_figure(solution, [trajectory])
        figure.savefig(svg_path, format="svg", metadata={"Date": None})
        plots.close([figure])


@main.command()
@click.argument("field", type=click.Path())
@click.option("--svg", "svg_path", type=click.Path())
def basin(field: str, svg_path: typing.Optional[str]) -> None:
    """Basin of attraction of the pole."""
    solution = elliptic.load_solution(field)
    points = critpoint.census(solution)
    result = gradflow.basin_map(solution, points)
    _echo_json(result.statistics())
    if svg_path is not None and result.grid.dimension == 2:
        figure = plots.basin_figure(result)
        figure.savefig(svg_path, format="svg", metadata={"Date": None})
        plots.close([figure])


@main.command()
@click.argument("field", type=click.Path())
@click.option("--levels", required=True, help="0.1,0.2 or lo:hi:count")
@click.option("--csv", "csv_path", type=click.Path())
@click.option("--meshes", type=click.Path(), help="Directory for OFF meshes")
def levelset_command(
    field: str,
    levels: str,
    csv_path: typing.Optional[str],
    meshes: typing.Optional[str],
) -> None:
    """Component count and genus per level."""
    solution = elliptic.load_solution(field)
    points = critpoint.census(solution)
    table = levelset.level_scan(solution, parse.parse_levels(levels), points)
    click.echo(table.to_string(index=False))
    if csv_path is not None:
        table.to_csv(csv_path, index=False)
    if meshes is not None:
        os.makedirs(meshes, exist_ok=True)
        for row, level in enumerate(table["level"]):
            for k, component in enumerate(levelset.extract(solution, level, points)):
                levelset.write_off(component, os.path.join(meshes, f"level{row}_{k}.off"))


main.add_command(levelset_command, name="levelset")


@main.command()
@click.argument("field", type=click.Path())
@click.option("--genus", type=click.IntRange(min=0), required=True)
@click.option("--ends", type=click.IntRange(min=1), required=True)
def hopf(field: str, genus: int, ends: int) -> None:
    """Census against the Betti bound and the Hopf index identity."""
    solution = elliptic.load_solution(field)
    points = critpoint.census(solution)
    report = critpoint.hopf_check(points, genus, ends)
    _echo_json(
        {
            "betti": report.betti,
            "census": census_records(points),
            "census_size": report.census_size,
            "euler": report.euler,
            "identity_residual": report.identity_residual,
            "within_bound": report.within_bound,
        }
    )


@main.command("axisym")
@click.argument("name", required=False)
@_CONFIG
@_OUT
@_SEED
@_H
def axisym_command(
    name: typing.Optional[str],
    config_path: typing.Optional[str],
    out: typing.Optional[str],
    seed: typing.Optional[int],
    h: typing.Optional[float],
) -> None:
    """Reduced solve of an axisymmetric metric and the no-critical-point check."""
    config = _config(name, config_path, h, seed)
    domain, metric, pole = _domain_setup(config)
    fine = axisym.solve_reduced(axisym.reduce(metric, domain, config.h, pole[0]))
    coarse = axisym.solve_reduced(axisym.reduce(metric, domain, 2.0 * config.h, pole[0]))
    report = axisym.verify_no_critical(fine, coarse)
    margin = report.min_gradient / report.noise_floor if report.noise_floor else math.inf
    _echo_json(
        {
            "census": len(report.census),
            "margin": margin,
            "min_gradient": report.min_gradient,
            "min_location": list(report.min_location),
            "noise_floor": report.noise_floor,
            "passed": report.passed,
        }
    )
    _save(fine, out, "reduced")


@main.command("experiment")
@click.argument("name", required=False)
@_CONFIG
@_OUT
@_SEED
@_H
@_CI
def experiment_command(
    name: typing.Optional[str],
    config_path: typing.Optional[str],
    out: typing.Optional[str],
    seed: typing.Optional[int],
    h: typing.Optional[float],
    ci: bool,
) -> None:
    """Run a shipped or configured experiment and write its report bundle."""
    config = _config(name, config_path, h, seed, out)
    _finish(experiments.run_experiment(config), ci)


@main.command("oracle-check")
@_OUT
@_H
@_CI
def oracle_check(out: typing.Optional[str], h: typing.Optional[float], ci: bool) -> None:
    """Disk and ball solves against their closed forms."""
    config = load_catalog().experiment("oracle_check").with_overrides(h=h, output=out)
    _finish(experiments.run_experiment(config), ci)
