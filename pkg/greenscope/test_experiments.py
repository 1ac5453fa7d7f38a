import unittest
import numpy as np
from greenscope import experiments
from greenscope.config import ExperimentConfig, ShapeSpec, load_catalog
from greenscope.errors import ParameterError


class RegistryTests(unittest.TestCase):

    def test_every_catalog_experiment_has_a_runner(self) -> None:
        kinds = experiments.experiment_kinds()

        for name, config in load_catalog().experiments.items():
            self.assertIn(config.experiment, kinds, name)

    def test_unknown_kind(self) -> None:
        config = ExperimentConfig(name="x", experiment="sphere_packing")

        with self.assertRaises(ParameterError):
            experiments.run_experiment(config)


class BuildTests(unittest.TestCase):

    def test_default_metric_is_flat(self) -> None:
        metric = experiments.build_metric(None, 3, np.random.default_rng(0))

        self.assertEqual(metric.dimension, 3)
        np.testing.assert_allclose(metric.coefficient([(0.3, 0.2, 0.1)]), [1.0])

    def test_unknown_metric_kind(self) -> None:
        with self.assertRaises(ParameterError):
            experiments.build_metric(ShapeSpec("hyperbolic", {}), 2, np.random.default_rng(0))

    def test_missing_domain(self) -> None:
        with self.assertRaises(ParameterError):
            experiments.build_domain(None)

    def test_random_bump_is_seeded(self) -> None:
        spec = ShapeSpec("random_bump", {"clearance": 1.0})

        a = experiments.build_metric(spec, 3, np.random.default_rng(5))
        b = experiments.build_metric(spec, 3, np.random.default_rng(5))

        points = [(1.5, 0.4, 0.0), (-1.0, 0.0, 1.2)]
        np.testing.assert_array_equal(a.coefficient(points), b.coefficient(points))


class OracleExperimentTests(unittest.TestCase):

    def test_oracle_checks_pass(self) -> None:
        config = load_catalog().experiment("oracle_check")

        bundle = experiments.run_experiment(config)

        names = [c.name for c in bundle.checks]
        self.assertIn("ball_error", names)
        self.assertIn("disk_value_at_half_error", names)
        self.assertTrue(bundle.passed, [c.name for c in bundle.failures()])
        table = experiments.summary(bundle)
        self.assertEqual(len(table), len(bundle.checks))
