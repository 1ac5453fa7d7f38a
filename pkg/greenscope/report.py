"""
Report bundles: the deterministic record of an experiment run. Numeric
files are written with sorted keys and fixed float formatting so that the
same config and seed reproduce them byte for byte; wall-clock timings are
logged only.
"""

from dataclasses import asdict, dataclass, field
import enum
import json
import logging
import os
import platform
import typing
import matplotlib
import numpy as np
import pandas as pd
import scipy  # type: ignore[import-untyped]
import skimage  # type: ignore[import-untyped]
from matplotlib.figure import Figure
from greenscope.critpoint import CriticalPoint, HopfReport, census_frame
from greenscope.elliptic import GreenSolution, save_solution
from greenscope.gradflow import Trajectory, trajectory_frame
from greenscope.levelset import LevelSetComponent, write_off

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"


class Relation(enum.Enum):
    AT_MOST = "<="
    AT_LEAST = ">="
    EQUAL = "=="


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    threshold: float
    relation: str
    passed: bool


def check(
    name: str, value: float, threshold: float, relation: Relation = Relation.AT_MOST
) -> Check:
    if relation == Relation.AT_MOST:
        passed = value <= threshold
    elif relation == Relation.AT_LEAST:
        passed = value >= threshold
    else:
        passed = value == threshold
    result = Check(
        name=name,
        value=float(value),
        threshold=float(threshold),
        relation=relation.value,
        passed=bool(passed),
    )
    log = logger.info if result.passed else logger.warning
    log(
        "Check %s: %.6g %s %.6g %s",
        name,
        value,
        relation.value,
        threshold,
        "ok" if passed else "FAILED",
    )
    return result


@dataclass
class ReportBundle:
    name: str
    config: dict[str, typing.Any]
    dimension: int = 2
    census: list[CriticalPoint] = field(default_factory=list)
    hopf: typing.Optional[HopfReport] = None
    basin: typing.Optional[dict[str, typing.Any]] = None
    levels: typing.Optional[pd.DataFrame] = None
    checks: list[Check] = field(default_factory=list)
    results: dict[str, typing.Any] = field(default_factory=dict)
    solutions: dict[str, GreenSolution] = field(default_factory=dict)
    meshes: dict[str, LevelSetComponent] = field(default_factory=dict)
    trajectories: list[Trajectory] = field(default_factory=list)
    figures: dict[str, Figure] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def add(self, *checks: Check) -> None:
        self.checks.extend(checks)


def _plain(value: typing.Any) -> typing.Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Not JSON serializable: {type(value).__name__}")


def _write_json(path: str, content: typing.Any) -> None:
    with open(path, "w") as fh:
        json.dump(content, fh, indent=2, sort_keys=True, default=_plain)
        fh.write("\n")


def versions() -> dict[str, str]:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "matplotlib": matplotlib.__version__,
        "scikit-image": skimage.__version__,
    }


def census_records(points: typing.Sequence[CriticalPoint]) -> list[dict[str, typing.Any]]:
    records = []
    for p in points:
        record = asdict(p)
        record["classification"] = p.classification.value
        record["index"] = p.index
        records.append(record)
    return records


def write_bundle(bundle: ReportBundle, out: str) -> None:
    os.makedirs(out, exist_ok=True)
    census_frame(bundle.census, bundle.dimension).to_csv(
        os.path.join(out, "census.csv"), index=False, float_format=FLOAT_FORMAT
    )
    _write_json(os.path.join(out, "census.json"), census_records(bundle.census))
    if bundle.hopf is not None:
        hopf = asdict(bundle.hopf)
        hopf["within_bound"] = bundle.hopf.within_bound
        _write_json(os.path.join(out, "hopf.json"), hopf)
    if bundle.basin is not None:
        _write_json(os.path.join(out, "basin.json"), bundle.basin)
    if bundle.levels is not None:
        bundle.levels.to_csv(
            os.path.join(out, "levels.csv"), index=False, float_format=FLOAT_FORMAT
        )
    _write_json(os.path.join(out, "checks.json"), [asdict(c) for c in bundle.checks])
    _write_json(os.path.join(out, "results.json"), bundle.results)
    _write_json(
        os.path.join(out, "metadata.json"),
        {
            "experiment": bundle.name,
            "config": bundle.config,
            "versions": versions(),
            "passed": bundle.passed,
            "residuals": {
                name: {
                    "residual": s.residual,
                    "iterations": s.iterations,
                    "converged": s.converged,
                }
                for name, s in bundle.solutions.items()
            },
        },
    )
    if bundle.trajectories:
        trajectory_frame(bundle.trajectories).to_csv(
            os.path.join(out, "trajectories.csv"), index=False, float_format=FLOAT_FORMAT
        )
    if bundle.figures:
        os.makedirs(os.path.join(out, "plots"), exist_ok=True)
        for name, figure in bundle.figures.items():
            figure.savefig(
                os.path.join(out, "plots", f"{name}.svg"),
                format="svg",
                metadata={"Date": None},
            )
    if bundle.meshes:
        os.makedirs(os.path.join(out, "meshes"), exist_ok=True)
        for name, mesh in bundle.meshes.items():
            write_off(mesh, os.path.join(out, "meshes", f"{name}.off"))
    if bundle.solutions:
        os.makedirs(os.path.join(out, "fields"), exist_ok=True)
        for name, solution in bundle.solutions.items():
            save_solution(solution, os.path.join(out, "fields", name))
    logger.info(
        "Wrote bundle %s to %s (%d checks, %d failed)",
        bundle.name,
        out,
        len(bundle.checks),
        len(bundle.failures()),
    )
