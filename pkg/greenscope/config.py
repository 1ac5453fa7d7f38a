from dataclasses import dataclass, field, replace
import json
import os
import typing
from greenscope.errors import ParameterError

CATALOG_PATH = "data/experiments.json"

DEFAULT_TOLERANCES: dict[str, float] = {
    # Li-Tam exhaustion: change of the normalized core values between stages
    "litam": 1e-3,
    # Newton residual accepted as a critical point
    "gradient": 1e-9,
    # Pole flux relative error and near-pole ratio band
    "flux": 0.02,
    "ratio": 0.1,
    # Oracle and expected-value comparisons
    "oracle": 1e-3,
    "position": 1e-3,
    "value": 1e-3,
    # Fraction of basin seeds allowed to end undecided
    "undecided": 0.0,
    # Slack added to discrete energy bounds
    "energy": 1e-3,
    # Fraction of genericity trials that must be all-nondegenerate
    "morse_fraction": 0.95,
}

_EXPERIMENT_KEYS = {
    "experiment",
    "description",
    "domain",
    "metric",
    "pole",
    "h",
    "schedule",
    "seed",
    "tolerances",
    "options",
    "output",
}


@dataclass(frozen=True)
class ShapeSpec:
    """A domain or metric selection: a builder kind and its parameters."""

    kind: str
    params: dict[str, typing.Any] = field(default_factory=dict)

    def as_dict(self) -> dict[str, typing.Any]:
        return {"kind": self.kind, "params": self.params}


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    # Key into the experiment registry
    experiment: str
    description: str = ""
    domain: typing.Optional[ShapeSpec] = None
    metric: typing.Optional[ShapeSpec] = None
    pole: tuple[float, ...] = ()
    h: float = 0.05
    schedule: tuple[float, ...] = ()
    seed: int = 0
    tolerances: dict[str, float] = field(default_factory=dict)
    options: dict[str, typing.Any] = field(default_factory=dict)
    output: str = ""

    def tolerance(self, name: str) -> float:
        if name in self.tolerances:
            return self.tolerances[name]
        assert name in DEFAULT_TOLERANCES, f"Unknown tolerance: {name}"
        return DEFAULT_TOLERANCES[name]

    def option(self, name: str, default: typing.Any) -> typing.Any:
        return self.options.get(name, default)

    def with_overrides(
        self,
        h: typing.Optional[float] = None,
        seed: typing.Optional[int] = None,
        output: typing.Optional[str] = None,
    ) -> "ExperimentConfig":
        return replace(
            self,
            h=self.h if h is None else _positive("h", h),
            seed=self.seed if seed is None else _seed(seed),
            output=self.output if output is None else output,
        )

    def as_dict(self) -> dict[str, typing.Any]:
        return {
            "name": self.name,
            "experiment": self.experiment,
            "description": self.description,
            "domain": None if self.domain is None else self.domain.as_dict(),
            "metric": None if self.metric is None else self.metric.as_dict(),
            "pole": list(self.pole),
            "h": self.h,
            "schedule": list(self.schedule),
            "seed": self.seed,
            "tolerances": {k: self.tolerance(k) for k in sorted(DEFAULT_TOLERANCES)},
            "options": self.options,
        }


@dataclass(frozen=True)
class Catalog:
    domains: dict[str, ShapeSpec]
    metrics: dict[str, ShapeSpec]
    experiments: dict[str, ExperimentConfig]

    def experiment(self, name: str) -> ExperimentConfig:
        if name not in self.experiments:
            known = ", ".join(sorted(self.experiments))
            raise ParameterError(f"Unknown experiment {name!r}; known: {known}")
        return self.experiments[name]


def worker_count() -> int:
    """Size of the thread pool for independent tasks, capped by GREENSCOPE_THREADS."""
    available = os.cpu_count() or 1
    raw = os.environ.get("GREENSCOPE_THREADS")
    if raw is None or raw.strip() == "":
        return available
    assert raw.strip().isdigit(), f"Invalid GREENSCOPE_THREADS: {raw}"
    return max(1, min(int(raw), available))


def _positive(name: str, value: typing.Any) -> float:
    if type(value) not in (int, float) or not value > 0:
        raise ParameterError(f"{name} must be a positive number: {value!r}")
    return float(value)


def _seed(value: typing.Any) -> int:
    if type(value) != int or not 0 <= value < 2**64:
        raise ParameterError(f"Seed must be an unsigned 64-bit integer: {value!r}")
    return int(value)


def _floats(name: str, value: typing.Any) -> tuple[float, ...]:
    if type(value) != list or any(type(x) not in (int, float) for x in value):
        raise ParameterError(f"{name} must be a list of numbers: {value!r}")
    return tuple(float(x) for x in value)


def _shape(
    what: str, value: typing.Any, named: typing.Mapping[str, ShapeSpec]
) -> ShapeSpec:
    if type(value) == str:
        if value not in named:
            raise ParameterError(f"Unknown {what} {value!r}")
        return named[value]
    if type(value) != dict or "kind" not in value:
        raise ParameterError(f"A {what} is a name or {{'kind': ..., 'params': ...}}: {value!r}")
    unknown = set(value) - {"kind", "params"}
    if unknown:
        raise ParameterError(f"Unknown {what} keys: {sorted(unknown)}")
    params = value.get("params", {})
    if type(value["kind"]) != str or type(params) != dict:
        raise ParameterError(f"Malformed {what}: {value!r}")
    return ShapeSpec(kind=value["kind"], params=dict(params))


def _experiment(
    name: str,
    content: typing.Any,
    domains: typing.Mapping[str, ShapeSpec],
    metrics: typing.Mapping[str, ShapeSpec],
) -> ExperimentConfig:
    if type(content) != dict:
        raise ParameterError(f"Experiment {name!r} must be an object")
    unknown = set(content) - _EXPERIMENT_KEYS
    if unknown:
        raise ParameterError(f"Unknown keys in experiment {name!r}: {sorted(unknown)}")
    if type(content.get("experiment")) != str:
        raise ParameterError(f"Experiment {name!r} needs an 'experiment' kind")
    tolerances = content.get("tolerances", {})
    if type(tolerances) != dict:
        raise ParameterError(f"Tolerances of {name!r} must be an object")
    for key, value in tolerances.items():
        if key not in DEFAULT_TOLERANCES:
            raise ParameterError(f"Unknown tolerance {key!r} in {name!r}")
        _positive(f"tolerance {key}", value)
    options = content.get("options", {})
    if type(options) != dict:
        raise ParameterError(f"Options of {name!r} must be an object")
    return ExperimentConfig(
        name=name,
        experiment=content["experiment"],
        description=str(content.get("description", "")),
        domain=_shape("domain", content["domain"], domains) if "domain" in content else None,
        metric=_shape("metric", content["metric"], metrics) if "metric" in content else None,
        pole=_floats("pole", content.get("pole", [])),
        h=_positive("h", content.get("h", 0.05)),
        schedule=_floats("schedule", content.get("schedule", [])),
        seed=_seed(content.get("seed", 0)),
        tolerances={k: float(v) for k, v in tolerances.items()},
        options=dict(options),
        output=str(content.get("output", "")),
    )


def load_catalog(fname: str = CATALOG_PATH) -> Catalog:
    with open(fname, "r") as fh:
        return _load_catalog_from_content(json.load(fh))


def _load_catalog_from_content(content: typing.Any) -> Catalog:
    assert type(content) == dict, "Catalog must be an object"
    unknown = set(content) - {"domains", "metrics", "experiments"}
    if unknown:
        raise ParameterError(f"Unknown catalog sections: {sorted(unknown)}")
    domains = {
        name: _shape("domain", spec, {}) for name, spec in content.get("domains", {}).items()
    }
    metrics = {
        name: _shape("metric", spec, {}) for name, spec in content.get("metrics", {}).items()
    }
    experiments = {
        name: _experiment(name, spec, domains, metrics)
        for name, spec in content.get("experiments", {}).items()
    }
    return Catalog(domains=domains, metrics=metrics, experiments=experiments)


def load_experiment_config(
    fname: str, catalog: typing.Optional[Catalog] = None
) -> ExperimentConfig:
    with open(fname, "r") as fh:
        return _load_experiment_config_from_content(json.load(fh), catalog)


def _load_experiment_config_from_content(
    content: typing.Any, catalog: typing.Optional[Catalog] = None
) -> ExperimentConfig:
    """A standalone config: {"name": ..., <experiment keys>}; names resolve against the catalog."""
    if type(content) != dict or type(content.get("name")) != str:
        raise ParameterError("Experiment config must be an object with a 'name'")
    body = {k: v for k, v in content.items() if k != "name"}
    named = [body.get("domain"), body.get("metric")]
    if catalog is None and any(type(x) == str for x in named):
        catalog = load_catalog()
    return _experiment(
        content["name"],
        body,
        catalog.domains if catalog else {},
        catalog.metrics if catalog else {},
    )
