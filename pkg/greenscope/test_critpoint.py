import math
import typing
import unittest
from unittest import mock
import numpy as np
from greenscope import critpoint, discretize, elliptic, geometry
from greenscope.critpoint import Classification, CriticalPoint
from greenscope.errors import ClassificationError, ParameterError


def _sampled(
    fn: typing.Callable[[np.ndarray], np.ndarray],
    dimension: int = 2,
    half: float = 0.5,
    h: float = 0.02,
) -> elliptic.GreenSolution:
    box = geometry.make_domain("box", {"lo": (-half,) * dimension, "hi": (half,) * dimension})
    grid = discretize.build_grid(box, h)
    return elliptic.sampled_solution(discretize.ScalarField.from_function(grid, fn))


def _saddle(p: np.ndarray) -> np.ndarray:
    return np.asarray(p[:, 0] ** 2 - p[:, 1] ** 2)


def _monkey(p: np.ndarray) -> np.ndarray:
    return np.asarray(p[:, 0] ** 3 - 3 * p[:, 0] * p[:, 1] ** 2)


def _cone(p: np.ndarray) -> np.ndarray:
    return np.asarray(p[:, 0] ** 2 + p[:, 1] ** 2 - 2 * p[:, 2] ** 2)


def _point(**kwargs: typing.Any) -> CriticalPoint:
    defaults: dict[str, typing.Any] = {
        "position": (0.0, 0.0),
        "value": 0.0,
        "grad_residual": 0.0,
        "hessian_eigenvalues": (-1.0, 1.0),
        "classification": Classification.NONDEGENERATE,
        "morse_index": 1,
    }
    defaults.update(kwargs)
    return CriticalPoint(**defaults)


class ClassifyTests(unittest.TestCase):

    def test_saddle(self) -> None:
        point = critpoint.classify(_sampled(_saddle), (0.0, 0.0))

        self.assertEqual(point.classification, Classification.NONDEGENERATE)
        self.assertEqual(point.morse_index, 1)
        self.assertEqual(point.index, -1)
        np.testing.assert_allclose(point.hessian_eigenvalues, (-2.0, 2.0), atol=1e-8)

    def test_monkey_saddle(self) -> None:
        point = critpoint.classify(_sampled(_monkey), (0.0, 0.0))

        self.assertEqual(point.classification, Classification.DEGENERATE)
        self.assertEqual(point.order, 3)
        self.assertEqual(point.index, -2)
        self.assertEqual(len(point.separatrix_angles), 6)

    def test_three_dimensional_saddle(self) -> None:
        point = critpoint.classify(_sampled(_cone, dimension=3, h=0.05), (0.0, 0.0, 0.0))

        self.assertEqual(point.classification, Classification.NONDEGENERATE)
        self.assertEqual(point.morse_index, 1)
        np.testing.assert_allclose(point.hessian_eigenvalues, (-4.0, 2.0, 2.0), atol=1e-8)


class BlowupFitTests(unittest.TestCase):

    def test_quadratic(self) -> None:
        fit = critpoint.blowup_fit(_sampled(_saddle), (0.0, 0.0))

        self.assertEqual(fit.order, 2)
        self.assertLess(min(fit.phase, 2 * math.pi - fit.phase), 1e-9)
        self.assertLess(fit.residual, 1e-6)
        self.assertTrue(fit.consistent)
        for expected in (0.0, math.pi / 2, math.pi, 3 * math.pi / 2):
            gaps = [
                abs(math.remainder(a - expected, 2 * math.pi))
                for a in fit.separatrix_angles
            ]
            self.assertLess(min(gaps), 1e-9)

    def test_rotated_quartic(self) -> None:
        angle = math.radians(10)

        def quartic(p: np.ndarray) -> np.ndarray:
            z = (p[:, 0] + 1j * p[:, 1]) * np.exp(-1j * angle)
            return np.asarray(np.real(z**4))

        fit = critpoint.blowup_fit(_sampled(quartic), (0.0, 0.0))

        self.assertEqual(fit.order, 4)
        self.assertLess(abs(fit.phase - 4 * angle), 1e-3)
        self.assertAlmostEqual(fit.amplitude, 1.0, places=3)

    def test_monkey_separatrix_spacing(self) -> None:
        fit = critpoint.blowup_fit(_sampled(_monkey), (0.0, 0.0))

        angles = np.sort(np.mod(fit.separatrix_angles, 2 * math.pi))
        np.testing.assert_allclose(np.diff(angles), math.pi / 3, atol=1e-9)

    def test_regular_point(self) -> None:
        with self.assertRaises(ClassificationError):
            critpoint.blowup_fit(_sampled(lambda p: p[:, 0]), (0.1, 0.0))

    def test_three_dimensional(self) -> None:
        with self.assertRaises(ParameterError):
            critpoint.blowup_fit(_sampled(_cone, dimension=3, h=0.05), (0.0, 0.0, 0.0))


class LocalComponentTests(unittest.TestCase):

    def test_saddle(self) -> None:
        self.assertEqual(critpoint.local_component_count(_sampled(_saddle), (0.0, 0.0)), 4)

    def test_monkey_saddle(self) -> None:
        self.assertEqual(critpoint.local_component_count(_sampled(_monkey), (0.0, 0.0)), 6)

    def test_cone(self) -> None:
        solution = _sampled(_cone, dimension=3, half=1.0, h=0.05)

        count = critpoint.local_component_count(solution, (0.0, 0.0, 0.0))

        self.assertEqual(count, 3)

    def test_cubic_with_two_regions(self) -> None:
        def cubic(p: np.ndarray) -> np.ndarray:
            x, y, z = p[:, 0], p[:, 1], p[:, 2]
            return np.asarray(x**2 - y**2 + (x**2 + y**2) * z - (2.0 / 3.0) * z**3)

        solution = _sampled(cubic, dimension=3, half=1.0, h=0.05)

        count = critpoint.local_component_count(solution, (0.0, 0.0, 0.0))

        self.assertEqual(count, 2)

    def test_delta_too_large(self) -> None:
        with self.assertRaises(ParameterError):
            critpoint.local_component_count(_sampled(_saddle), (0.0, 0.0), delta=10.0)

    def test_too_few_samples(self) -> None:
        with self.assertRaises(ParameterError):
            critpoint.local_component_count(_sampled(_saddle), (0.0, 0.0), samples=16)


class HopfCheckTests(unittest.TestCase):

    def test_cylinder(self) -> None:
        report = critpoint.hopf_check([_point()], genus=0, ends=2)

        self.assertEqual(report.euler, 0)
        self.assertEqual(report.identity_residual, 0)
        self.assertEqual(report.betti, 1)
        self.assertTrue(report.within_bound)

    def test_plane(self) -> None:
        report = critpoint.hopf_check([], genus=0, ends=1)

        self.assertEqual(report.euler, 1)
        self.assertEqual(report.identity_residual, 0)
        self.assertEqual(report.betti, 0)

    def test_two_holes(self) -> None:
        report = critpoint.hopf_check([_point(), _point(position=(0.5, 0.0))], 0, 3)

        self.assertEqual(report.euler, -1)
        self.assertEqual(report.identity_residual, 0)
        self.assertEqual(report.betti, 2)

    def test_degenerate_index(self) -> None:
        monkey = _point(
            classification=Classification.DEGENERATE, morse_index=None, order=3
        )

        report = critpoint.hopf_check([monkey], genus=1, ends=1)

        self.assertEqual(report.indices, [-2])
        self.assertEqual(report.identity_residual, 0)

    def test_unclassified(self) -> None:
        unknown = _point(classification=Classification.UNCLASSIFIED, morse_index=None)

        report = critpoint.hopf_check([unknown], genus=0, ends=2)

        self.assertIsNone(report.identity_residual)


class CensusTests(unittest.TestCase):

    def test_disk_has_no_critical_points(self) -> None:
        disk = geometry.make_domain("disk", {"radius": 1.0})
        solution = elliptic.solve_dirichlet_green(
            geometry.euclidean_metric(2), disk, (0.3, 0.2), discretize.build_grid(disk, 0.05)
        )

        self.assertEqual(critpoint.census(solution), [])

    def test_annulus_saddle_on_axis(self) -> None:
        annulus = geometry.make_domain("annulus", {"inner": 0.5, "outer": 2.0})
        solution = elliptic.solve_dirichlet_green(
            geometry.euclidean_metric(2),
            annulus,
            (1.2, 0.0),
            discretize.build_grid(annulus, 0.05),
        )

        points = critpoint.census(solution)

        self.assertEqual(len(points), 1)
        x, y = points[0].position
        self.assertLess(x, -0.5)
        self.assertLess(abs(y), 1e-6)
        self.assertEqual(points[0].classification, Classification.NONDEGENERATE)
        self.assertEqual(points[0].morse_index, 1)
        self.assertLess(points[0].grad_residual, 1e-9)
        self.assertFalse(points[0].suspect)

    def test_cylinder_saddle(self) -> None:
        solution = elliptic.litam_limit(
            geometry.euclidean_metric(2),
            (0.0, 0.0),
            schedule=[2.0, 4.0, 8.0],
            tol=1e-3,
            h=2 * math.pi / 48,
            kind="truncated_cylinder",
        )

        report = critpoint.run_census(solution)

        self.assertEqual(len(report.points), 1)
        np.testing.assert_allclose(report.points[0].position, (0.0, math.pi), atol=1e-3)
        self.assertEqual(report.points[0].index, -1)
        self.assertGreaterEqual(report.seeds, 1)
        hopf = critpoint.hopf_check(report.points, genus=0, ends=2)
        self.assertEqual(hopf.identity_residual, 0)

    def test_exclusion_radius_too_small(self) -> None:
        disk = geometry.make_domain("disk", {"radius": 1.0})
        solution = elliptic.solve_dirichlet_green(
            geometry.euclidean_metric(2), disk, (0.0, 0.0), discretize.build_grid(disk, 0.05)
        )

        with self.assertRaises(ParameterError):
            critpoint.census(solution, exclusion_radius=0.1)

    def test_synthetic_saddle(self) -> None:
        def shifted_saddle(p: np.ndarray) -> np.ndarray:
            return np.asarray((p[:, 0] - 0.013) ** 2 - (p[:, 1] + 0.021) ** 2)

        points = critpoint.census(_sampled(shifted_saddle))

        self.assertEqual(len(points), 1)
        np.testing.assert_allclose(points[0].position, (0.013, -0.021), atol=1e-9)

    def test_escaping_seed_is_suspect(self) -> None:
        def shifted_saddle(p: np.ndarray) -> np.ndarray:
            return np.asarray((p[:, 0] - 0.013) ** 2 - (p[:, 1] + 0.021) ** 2)

        with mock.patch.object(critpoint, "TRUST_RADIUS", 0.01):
            report = critpoint.run_census(_sampled(shifted_saddle))

        self.assertEqual(len(report.points), 1)
        self.assertTrue(report.points[0].suspect)
        self.assertGreater(report.points[0].grad_residual, 1e-9)
        np.testing.assert_allclose(report.points[0].position, (0.013, -0.021), atol=0.02)
        self.assertEqual(report.discarded, 0)

    def test_frame(self) -> None:
        frame = critpoint.census_frame([_point(position=(0.25, -0.5))], dimension=2)

        self.assertEqual(
            list(frame.columns),
            ["x", "y", "value", "residual", "class", "morse_index", "m", "index", "suspect"],
        )
        self.assertEqual(frame["x"][0], 0.25)
        self.assertEqual(frame["index"][0], -1)
