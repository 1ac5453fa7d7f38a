import json
import os
import unittest
from unittest import mock
from greenscope import config
from greenscope.errors import ParameterError

_CATALOG = """
{
    "domains": {
        "unit_disk": {"kind": "disk", "params": {"radius": 1.0}}
    },
    "metrics": {
        "flat2": {"kind": "euclidean", "params": {"dimension": 2}}
    },
    "experiments": {
        "plane": {
            "experiment": "plane",
            "metric": "flat2",
            "pole": [0, 0],
            "h": 0.05,
            "schedule": [4, 8, 16],
            "tolerances": {"litam": 0.002}
        },
        "disk": {
            "experiment": "dirichlet",
            "domain": "unit_disk",
            "metric": {"kind": "euclidean", "params": {"dimension": 2}},
            "pole": [0.25, 0]
        }
    }
}
"""


class LoadCatalogTests(unittest.TestCase):

    def test_load_catalog(self) -> None:
        result = config._load_catalog_from_content(json.loads(_CATALOG))

        self.assertEqual(sorted(result.experiments), ["disk", "plane"])
        plane = result.experiment("plane")
        self.assertEqual(plane.schedule, (4.0, 8.0, 16.0))
        self.assertEqual(plane.metric, config.ShapeSpec("euclidean", {"dimension": 2}))
        self.assertEqual(plane.tolerance("litam"), 0.002)
        self.assertEqual(plane.tolerance("flux"), config.DEFAULT_TOLERANCES["flux"])

    def test_named_domain_resolves(self) -> None:
        result = config._load_catalog_from_content(json.loads(_CATALOG))

        disk = result.experiment("disk")

        self.assertEqual(disk.domain, config.ShapeSpec("disk", {"radius": 1.0}))
        self.assertEqual(disk.pole, (0.25, 0.0))
        self.assertEqual(disk.seed, 0)

    def test_unknown_experiment(self) -> None:
        result = config._load_catalog_from_content(json.loads(_CATALOG))

        with self.assertRaises(ParameterError):
            result.experiment("sphere")

    def test_shipped_catalog(self) -> None:
        result = config.load_catalog()

        for name in ["cylinder", "plane", "three_holes", "torus_tube_N2", "morse_genericity"]:
            self.assertIn(name, result.experiments)


class LoadExperimentConfigTests(unittest.TestCase):

    def test_load_standalone_config(self) -> None:
        content = """
        {
            "name": "wide_cylinder",
            "experiment": "cylinder",
            "h": 0.1,
            "seed": 7,
            "options": {"refine": false}
        }
        """
        result = config._load_experiment_config_from_content(json.loads(content))

        self.assertEqual(result.name, "wide_cylinder")
        self.assertEqual(result.h, 0.1)
        self.assertEqual(result.seed, 7)
        self.assertFalse(result.option("refine", True))

    def test_unknown_key_rejected(self) -> None:
        content = """
        {
            "name": "typo",
            "experiment": "cylinder",
            "spacing": 0.1
        }
        """
        with self.assertRaises(ParameterError):
            config._load_experiment_config_from_content(json.loads(content))

    def test_unknown_tolerance_rejected(self) -> None:
        content = """
        {
            "name": "typo",
            "experiment": "cylinder",
            "tolerances": {"flux_error": 0.1}
        }
        """
        with self.assertRaises(ParameterError):
            config._load_experiment_config_from_content(json.loads(content))

    def test_negative_spacing_rejected(self) -> None:
        content = """
        {
            "name": "bad",
            "experiment": "cylinder",
            "h": -0.1
        }
        """
        with self.assertRaises(ParameterError):
            config._load_experiment_config_from_content(json.loads(content))

    def test_seed_must_be_unsigned(self) -> None:
        content = """
        {
            "name": "bad",
            "experiment": "cylinder",
            "seed": -1
        }
        """
        with self.assertRaises(ParameterError):
            config._load_experiment_config_from_content(json.loads(content))

    def test_overrides(self) -> None:
        base = config._load_experiment_config_from_content(
            {"name": "c", "experiment": "cylinder", "h": 0.1}
        )

        result = base.with_overrides(h=0.05, seed=3, output="out")

        self.assertEqual((result.h, result.seed, result.output), (0.05, 3, "out"))
        self.assertEqual(base.h, 0.1)


class WorkerCountTests(unittest.TestCase):

    def test_capped_by_environment(self) -> None:
        with mock.patch.dict(os.environ, {"GREENSCOPE_THREADS": "1"}):
            self.assertEqual(config.worker_count(), 1)

    def test_defaults_to_cpu_count(self) -> None:
        with mock.patch.dict(os.environ, {"GREENSCOPE_THREADS": ""}):
            self.assertEqual(config.worker_count(), os.cpu_count() or 1)
