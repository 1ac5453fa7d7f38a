import math
import os
import tempfile
import typing
import unittest
import numpy as np
from greenscope import critpoint, discretize, elliptic, geometry, levelset
from greenscope.errors import CriticalLevelError, ParameterError


def _sampled(
    fn: typing.Callable[[np.ndarray], np.ndarray],
    dimension: int = 2,
    half: float = 1.0,
    h: float = 0.05,
) -> elliptic.GreenSolution:
    box = geometry.make_domain("box", {"lo": (-half,) * dimension, "hi": (half,) * dimension})
    grid = discretize.build_grid(box, h)
    return elliptic.sampled_solution(discretize.ScalarField.from_function(grid, fn))


def _radius2(p: np.ndarray) -> np.ndarray:
    return np.asarray(np.sum(p * p, axis=1))


def _saddle(p: np.ndarray) -> np.ndarray:
    return np.asarray(p[:, 0] ** 2 - p[:, 1] ** 2)


class CurveTests(unittest.TestCase):

    def test_circle(self) -> None:
        found = levelset.extract(_sampled(_radius2), 0.25)

        self.assertEqual(len(found), 1)
        circle = found[0]
        self.assertTrue(circle.closed)
        self.assertEqual(circle.euler, 0)
        self.assertIsNone(circle.genus)
        np.testing.assert_allclose(np.linalg.norm(circle.vertices, axis=1), 0.5, atol=1e-6)
        self.assertEqual(levelset.component_topology(circle), (0, None, True))

    def test_polyline_is_ordered(self) -> None:
        circle = levelset.extract(_sampled(_radius2), 0.25)[0]

        gaps = np.linalg.norm(np.diff(circle.vertices, axis=0), axis=1)

        self.assertLess(float(np.max(gaps)), 0.1)

    def test_open_branches(self) -> None:
        found = levelset.extract(_sampled(_saddle), 0.1)

        self.assertEqual(len(found), 2)
        for branch in found:
            self.assertFalse(branch.closed)
            self.assertEqual(branch.euler, 1)

    def test_empty(self) -> None:
        self.assertEqual(levelset.extract(_sampled(_radius2), 5.0), [])

    def test_critical_level_refused(self) -> None:
        solution = _sampled(_saddle)
        census = [critpoint.classify(solution, (0.0, 0.0))]

        with self.assertRaises(CriticalLevelError):
            levelset.extract(solution, 0.0, census)

        found = levelset.extract(solution, 0.0, census, acknowledge_critical=True)
        self.assertGreater(len(found), 0)


class SurfaceTests(unittest.TestCase):

    def test_sphere(self) -> None:
        found = levelset.extract(_sampled(_radius2, dimension=3, h=0.1), 0.25)

        self.assertEqual(len(found), 1)
        sphere = found[0]
        self.assertTrue(sphere.closed)
        self.assertTrue(sphere.orientable)
        self.assertEqual(sphere.euler, 2)
        self.assertEqual(sphere.genus, 0)

    def test_torus(self) -> None:
        def tube(p: np.ndarray) -> np.ndarray:
            ring = np.hypot(p[:, 0], p[:, 1]) - 0.6
            return np.asarray(ring**2 + p[:, 2] ** 2)

        found = levelset.extract(_sampled(tube, dimension=3), 0.04)

        self.assertEqual(len(found), 1)
        self.assertEqual(found[0].euler, 0)
        self.assertEqual(found[0].genus, 1)

    def test_two_spheres(self) -> None:
        def pair(p: np.ndarray) -> np.ndarray:
            left = np.sum((p - np.array([-0.5, 0.0, 0.0])) ** 2, axis=1)
            right = np.sum((p - np.array([0.5, 0.0, 0.0])) ** 2, axis=1)
            return np.asarray(np.minimum(left, right))

        found = levelset.extract(_sampled(pair, dimension=3, h=0.1), 0.09)

        self.assertEqual(len(found), 2)
        self.assertEqual([c.genus for c in found], [0, 0])

    def test_off_export(self) -> None:
        sphere = levelset.extract(_sampled(_radius2, dimension=3, h=0.1), 0.25)[0]

        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "sphere.off")
            levelset.write_off(sphere, path)
            with open(path) as f:
                lines = f.read().splitlines()

        self.assertEqual(lines[0], "OFF")
        self.assertEqual(lines[1], f"{len(sphere.vertices)} {len(sphere.cells)} 0")
        self.assertEqual(len(lines), 2 + len(sphere.vertices) + len(sphere.cells))

    def test_off_export_needs_mesh(self) -> None:
        circle = levelset.extract(_sampled(_radius2), 0.25)[0]

        with self.assertRaises(ParameterError):
            levelset.write_off(circle, "unused.off")


class GreenLevelTests(unittest.TestCase):

    def test_cylinder_levels(self) -> None:
        solution = elliptic.litam_limit(
            geometry.euclidean_metric(2),
            (0.0, 0.0),
            schedule=[2.0, 4.0, 8.0],
            tol=1e-3,
            h=2 * math.pi / 48,
            kind="truncated_cylinder",
        )
        census = critpoint.census(solution)
        saddle = census[0].value

        table = levelset.level_scan(solution, [saddle + 0.02, saddle - 0.02], census)

        self.assertEqual(list(table["components"]), [1, 2])
        self.assertEqual(list(table["closed"]), [1, 2])

    def test_critical_level_nudged(self) -> None:
        solution = _sampled(_saddle)
        census = [critpoint.classify(solution, (0.0, 0.0))]

        table = levelset.level_scan(solution, [0.0], census)

        self.assertEqual(table["requested"][0], 0.0)
        self.assertGreater(table["level"][0], 0.0)

    def test_disk_levels_approach_boundary(self) -> None:
        disk = geometry.make_domain("disk", {"radius": 1.0})
        solution = elliptic.solve_dirichlet_green(
            geometry.euclidean_metric(2), disk, (0.0, 0.0), discretize.build_grid(disk, 0.05)
        )

        table = levelset.level_scan(solution, [0.3, 0.2, 0.05])
        near = levelset.boundary_hausdorff(levelset.extract(solution, 0.02), disk, 0.02)
        far = levelset.boundary_hausdorff(levelset.extract(solution, 0.05), disk, 0.02)

        self.assertEqual(list(table["components"]), [1, 1, 1])
        self.assertLess(near, far)
        self.assertLess(near, 0.15)
