import math
import typing
import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from matplotlib.figure import Figure
from greenscope import labels
from greenscope.critpoint import CriticalPoint
from greenscope.elliptic import GreenSolution
from greenscope.geometry import Array
from greenscope.gradflow import TAG_BASIN, BasinMap, Separatrix, Trajectory

# Fixed ids in the SVG output
plt.rcParams["svg.hashsalt"] = "greenscope"
CONTOURS = 30


def _section(solution: GreenSolution) -> tuple[Array, Array, Array]:
    """Node coordinates and normalized values in the plane (3D: the x3 slice nearest 0)."""
    grid = solution.grid
    dense = solution.field.dense() - solution.normalization
    mesh = grid.mesh()
    if grid.dimension == 3:
        k = int(np.argmin(np.abs(grid.coordinates(2))))
        return mesh[0][:, :, k], mesh[1][:, :, k], dense[:, :, k]
    return mesh[0], mesh[1], dense


def _breaks(points: Array, periods: typing.Sequence[typing.Optional[float]]) -> Array:
    """Polyline with NaN rows where it jumps across a periodic seam."""
    out = [points[0]]
    for a, b in zip(points[:-1], points[1:]):
        jump = any(
            p is not None and abs(b[k] - a[k]) > 0.5 * p for k, p in enumerate(periods)
        )
        if jump:
            out.append(np.full(points.shape[1], np.nan))
        out.append(b)
    return np.asarray(out)


def _periods(solution: GreenSolution) -> list[typing.Optional[float]]:
    grid = solution.grid
    return [
        (hi - lo) if p else None for (lo, hi), p in zip(grid.bbox, grid.periodic)
    ]


def contour_figure(
    solution: GreenSolution,
    census: typing.Sequence[CriticalPoint] = (),
    separatrices: typing.Sequence[Separatrix] = (),
    basin: typing.Optional[BasinMap] = None,
    title: str = "",
) -> Figure:
    """
    Level curves of G with critical points as crosses and dashed separatrices;
    the basin complement is shaded.
    """
    x, y, values = _section(solution)
    finite = values[np.isfinite(values)]
    lo, hi = np.percentile(finite, [1.0, 97.0])
    if hi <= lo:
        hi = lo + 1.0
    fig, ax = plt.subplots(figsize=(8, 6))
    ax.contour(x, y, values, levels=np.linspace(lo, hi, CONTOURS), linewidths=0.6)

    if basin is not None and basin.grid.dimension == 2:
        tags = basin.as_field().dense(fill=float(TAG_BASIN))
        bx, by = basin.grid.mesh()
        ax.contourf(bx, by, (tags != TAG_BASIN).astype(float), levels=[0.5, 1.5], alpha=0.3)

    periods = _periods(solution)
    for s in separatrices:
        path = _breaks(s.trajectory.points, periods)
        ax.plot(path[:, 0], path[:, 1], "--", linewidth=1.0, color="k" if s.stable else "C3")

    for p in census:
        ax.plot(p.position[0], p.position[1], "x", color="k", markersize=8)
        ax.annotate(
            labels.critical_label(p),
            (p.position[0], p.position[1]),
            xytext=(8, 8),
            textcoords="offset pixels",
        )
    if solution.pole is not None and solution.grid.dimension == 2:
        ax.plot(solution.pole[0], solution.pole[1], "o", color="C1")

    ax.set_aspect("equal")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_title(title or solution.metric_label)
    ax.format_coord = lambda u, v: f"x1={u:.4f}, x2={v:.4f}"  # type: ignore[method-assign]
    return fig


def trajectory_figure(
    solution: GreenSolution, trajectories: typing.Sequence[Trajectory], title: str = ""
) -> Figure:
    fig = contour_figure(solution, title=title)
    ax = fig.axes[0]
    periods = _periods(solution)
    for t in trajectories:
        path = _breaks(t.points, periods)
        ax.plot(path[:, 0], path[:, 1], linewidth=0.8)
    return fig


def basin_figure(basin: BasinMap, title: str = "") -> Figure:
    tags = basin.as_field().dense()
    x, y = basin.grid.mesh()
    fig, ax = plt.subplots(figsize=(8, 6))
    mesh = ax.pcolormesh(x, y, tags, shading="nearest", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="tag (-1 basin, -2 undecided, k: W^s(z_k))")
    ax.set_aspect("equal")
    ax.set_title(title or f"basin fraction {basin.basin_fraction:.4f}")
    return fig


def bar_lookup(names: typing.Sequence[str]) -> typing.Callable[[float], str]:
    """Name of the bar nearest a data x coordinate; bars sit at 0, 1, ..."""
    if not names:
        raise ValueError("No bars to look up")
    last = len(names) - 1
    return lambda x: names[int(np.clip(np.rint(x), 0, last))]


def level_scan_figure(table: pd.DataFrame, title: str = "") -> Figure:
    df = table.copy()
    df["label"] = [labels.level_label(v) for v in df["level"]]
    bar_level = bar_lookup(list(df["label"]))

    fig, ax = plt.subplots()
    df.plot(
        x="label",
        y="components",
        kind="bar",
        ax=ax,
        figsize=(10, 5),
        ylabel="Level set components",
        legend=False,
    )
    plt.xticks(rotation=40)
    ax.set_title(title)
    ax.format_coord = (  # type: ignore[method-assign]
        lambda x, y: f"level={bar_level(x)}, components={y:.0f}"
    )
    return fig


def series_figure(
    df: pd.DataFrame,
    x: str,
    y: list[str],
    ylabel: str,
    title: str = "",
    marker: typing.Optional[str] = "o",
) -> Figure:
    fig, ax = plt.subplots()
    df.plot(x=x, y=y, ax=ax, figsize=(8, 5), ylabel=ylabel, marker=marker)
    ax.set_title(title)
    return fig


def blowup_figure(solution: GreenSolution, point: CriticalPoint, radius: float) -> Figure:
    """G - c on a circle around a critical point against the polar angle."""
    theta = np.linspace(0.0, 2.0 * math.pi, 361)
    z = np.asarray(point.position)
    ring = z + radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    values = solution.evaluate_many(ring, strict=False).value - point.value
    df = pd.DataFrame({"theta": theta, "G - c": values})
    fig = series_figure(
        df, "theta", ["G - c"], "G - c", title=labels.critical_label(point), marker=None
    )
    ax = fig.axes[0]
    for angle in point.separatrix_angles:
        ax.axvline(angle, linestyle="--", linewidth=0.6, color="k")
    ax.format_coord = (  # type: ignore[method-assign]
        lambda x, y: f"theta={labels.angle_label(x)}, {y:.4g}"
    )
    return fig


def close(figures: typing.Iterable[Figure]) -> None:
    for f in figures:
        plt.close(f)
