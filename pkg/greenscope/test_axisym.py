import math
import unittest
import numpy as np
from greenscope import axisym, discretize, elliptic, geometry
from greenscope.errors import ParameterError


class ReduceTests(unittest.TestCase):

    def test_meridian_of_ball(self) -> None:
        ball = geometry.make_domain("ball", {"radius": 2.0})

        section = axisym.meridian_domain(ball)

        self.assertEqual(section.bbox, ((-2.0, 2.0), (0.0, 2.0)))
        self.assertEqual(section.reflecting_axes(), (False, True))
        np.testing.assert_array_equal(
            section.contains([[0.0, 1.0], [1.5, 1.5], [0.0, 0.0]]), [True, False, True]
        )

    def test_weight_vanishes_on_axis(self) -> None:
        ball = geometry.make_domain("ball", {"radius": 1.0})
        problem = axisym.reduce(geometry.euclidean_metric(3), ball, 0.1)

        weight = problem.weight(np.array([[0.0, 0.0], [0.3, 0.5]]))

        self.assertEqual(weight[0], 0.0)
        self.assertAlmostEqual(weight[1], math.pi)

    def test_symmetry_required(self) -> None:
        ball = geometry.make_domain("ball", {"radius": 1.0})
        box = geometry.make_domain("box", {"lo": (0.0, 0.0, 0.0), "hi": (1.0, 1.0, 1.0)})
        plain = geometry.ConformalMetric(
            dimension=3,
            factor=lambda p: np.ones(len(p)),
            factor_gradient=lambda p: np.zeros_like(p),
        )

        with self.assertRaises(ParameterError):
            axisym.reduce(plain, ball, 0.1)
        with self.assertRaises(ParameterError):
            axisym.reduce(geometry.euclidean_metric(3), box, 0.1)
        with self.assertRaises(ParameterError):
            axisym.reduce(geometry.euclidean_metric(2), ball, 0.1)

    def test_pole_outside(self) -> None:
        ball = geometry.make_domain("ball", {"radius": 1.0})

        with self.assertRaises(ParameterError):
            axisym.reduce(geometry.euclidean_metric(3), ball, 0.1, pole=1.5)


class EuclideanReducedTests(unittest.TestCase):

    @classmethod
    def setUpClass(cls) -> None:
        ball = geometry.make_domain("ball", {"radius": 1.0})
        cls.solution = axisym.solve_reduced(
            axisym.reduce(geometry.euclidean_metric(3), ball, 0.025)
        )

    def test_radial_oracle(self) -> None:
        points = np.array([[0.5, 0.0], [0.0, 0.5], [0.3, 0.4], [-0.6, 0.2]])
        expected = geometry.oracle_radial(
            "ball_center", {"radius": 1.0}, np.linalg.norm(points, axis=1)
        )

        values = self.solution.evaluate(points)

        np.testing.assert_allclose(values, expected, atol=3e-3)

    def test_even_across_axis(self) -> None:
        sample = self.solution.evaluate_many([[0.4, 0.0], [-0.3, 0.0]])

        self.assertTrue(np.all(np.isfinite(sample.value)))
        np.testing.assert_allclose(sample.gradient[:, 1], 0.0, atol=1e-10)

    def test_evaluate_3d(self) -> None:
        values = axisym.evaluate_3d(self.solution, [[0.3, 0.0, 0.4], [0.3, 0.4, 0.0]])

        self.assertAlmostEqual(values[0], values[1], places=12)

    def test_no_critical_points(self) -> None:
        report = axisym.verify_no_critical(self.solution)

        self.assertEqual(report.census, [])
        self.assertTrue(report.passed)
        self.assertGreater(report.min_gradient, 0.05)


class ReducedAgainstFullTests(unittest.TestCase):

    def test_bump_metric(self) -> None:
        metric = geometry.axisymmetric_bump_metric(1.0, 0.8, 0.5, 0.4)
        ball = geometry.make_domain("ball", {"radius": 2.0})
        h = 0.1
        reduced = axisym.solve_reduced(axisym.reduce(metric, ball, h))
        full = elliptic.solve_dirichlet_green(
            metric, ball, (0.0, 0.0, 0.0), discretize.build_grid(ball, h)
        )

        difference = axisym.section_difference(
            reduced, full, [[0.6, 0.3], [-0.6, 0.3], [0.4, 0.6], [0.0, 0.8]]
        )

        self.assertLess(difference, 5e-3)

    def test_random_bumps_have_no_critical_points(self) -> None:
        rng = np.random.default_rng(2024)
        ball = geometry.make_domain("ball", {"radius": 3.0})

        for _ in range(2):
            metric = geometry.random_axisymmetric_bump(rng)
            solution = axisym.solve_reduced(axisym.reduce(metric, ball, 0.05))

            report = axisym.verify_no_critical(solution)

            self.assertEqual(report.census, [], metric.label)
            self.assertTrue(report.passed, metric.label)
