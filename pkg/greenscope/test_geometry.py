import math
import unittest
import numpy as np
from greenscope import geometry
from greenscope.errors import ParameterError


class MakeDomainTests(unittest.TestCase):

    def test_annulus(self) -> None:
        domain = geometry.make_domain("annulus", {"inner": 0.5, "outer": 2.0})

        self.assertEqual(domain.boundary_components, 2)
        self.assertLess(domain.implicit([(1.0, 0.0)])[0], 0.0)
        self.assertGreater(domain.implicit([(0.1, 0.0)])[0], 0.0)

    def test_disk(self) -> None:
        domain = geometry.make_domain("disk", {"radius": 1.0})

        self.assertEqual(domain.boundary_components, 1)
        self.assertLess(domain.implicit([domain.witness])[0], 0.0)

    def test_three_holes(self) -> None:
        domain = geometry.make_domain(
            "multiply_connected_planar",
            {
                "outer": 3.0,
                "holes": [
                    {"center": [1.0, 0.0], "radius": 0.4},
                    {"center": [-1.0, 0.0], "radius": 0.4},
                ],
            },
        )

        self.assertEqual(domain.boundary_components, 3)
        self.assertLess(domain.implicit([domain.witness])[0], 0.0)
        self.assertGreater(domain.implicit([(1.0, 0.0)])[0], 0.0)
        self.assertIn(geometry.reflection(0), domain.symmetries)
        self.assertIn(geometry.reflection(1), domain.symmetries)

    def test_overlapping_holes(self) -> None:
        with self.assertRaises(ParameterError):
            geometry.make_domain(
                "multiply_connected_planar",
                {
                    "outer": 3.0,
                    "holes": [
                        {"center": [0.3, 0.0], "radius": 0.4},
                        {"center": [-0.3, 0.0], "radius": 0.4},
                    ],
                },
            )

    def test_hole_outside(self) -> None:
        with self.assertRaises(ParameterError):
            geometry.make_domain(
                "multiply_connected_planar",
                {"outer": 1.0, "holes": [{"center": [0.9, 0.0], "radius": 0.2}]},
            )

    def test_degenerate_annulus(self) -> None:
        with self.assertRaises(ParameterError):
            geometry.make_domain("annulus", {"inner": 2.0, "outer": 2.0})

    def test_unknown_kind(self) -> None:
        with self.assertRaises(ParameterError):
            geometry.make_domain("hexagon", {})

    def test_truncated_cylinder(self) -> None:
        domain = geometry.make_domain("truncated_cylinder", {"half_length": 4.0})

        self.assertEqual(domain.periodic, (False, True))
        self.assertEqual(domain.boundary_components, 2)
        self.assertAlmostEqual(domain.bbox[1][1], 2 * math.pi)

    def test_spherical_shell(self) -> None:
        domain = geometry.make_domain(
            "annulus", {"inner": 0.5, "outer": 2.0, "dimension": 3}
        )

        self.assertEqual(domain.dimension, 3)
        self.assertLess(domain.implicit([(0.0, 1.0, 0.0)])[0], 0.0)

    def test_perturbed_annulus(self) -> None:
        domain = geometry.make_domain(
            "annulus",
            {
                "inner": 0.5,
                "outer": 2.0,
                "outer_modes": [[0.0, 0.0], [0.05, 0.02]],
            },
        )

        self.assertEqual(domain.boundary_components, 2)
        self.assertLess(domain.implicit([domain.witness])[0], 0.0)
        # cos(2 theta) mode lengthens the x-axis radius
        self.assertLess(domain.implicit([(2.05, 0.0)])[0], 0.0)

    def test_perturbed_annulus_self_intersecting(self) -> None:
        with self.assertRaises(ParameterError):
            geometry.make_domain(
                "annulus",
                {"inner": 1.0, "outer": 1.2, "inner_modes": [[0.5, 0.0]]},
            )


class TorusDomainTests(unittest.TestCase):

    def test_single_ring(self) -> None:
        domain = geometry.torus_domain(1, 0.1)

        self.assertLess(domain.implicit([(2.0, 0.0, 0.0)])[0], 0.0)
        self.assertGreater(domain.implicit([(1.0, 0.0, 0.0)])[0], 0.0)
        self.assertEqual(domain.boundary_components, 1)

    def test_two_rings(self) -> None:
        domain = geometry.torus_domain(2, 0.1)

        self.assertLess(domain.implicit([(2.0, 0.0, 0.0)])[0], 0.0)
        self.assertLess(domain.implicit([(4.0, 0.0, 0.0)])[0], 0.0)
        self.assertGreater(domain.implicit([(3.0, 0.0, 0.0)])[0], 0.0)

    def test_mirrored_contains_origin(self) -> None:
        plain = geometry.torus_domain(1, 0.1)
        mirrored = geometry.torus_domain(1, 0.1, mirrored=True)

        self.assertLess(mirrored.implicit([(0.0, 0.0, 0.0)])[0], 0.0)
        self.assertLess(mirrored.implicit([(-2.0, 0.0, 0.0)])[0], 0.0)
        self.assertGreater(plain.implicit([(-2.0, 0.0, 0.0)])[0], 0.0)
        self.assertIn(geometry.reflection(0), mirrored.symmetries)

    def test_thick_tubes(self) -> None:
        with self.assertRaises(ParameterError):
            geometry.torus_domain(1, 0.25)

    def test_no_rings(self) -> None:
        with self.assertRaises(ParameterError):
            geometry.torus_domain(0, 0.1)

    def test_reflection_invariance(self) -> None:
        domain = geometry.torus_domain(2, 0.1)
        points = np.random.default_rng(1).uniform(-1.0, 5.0, size=(1000, 3))
        for axis in (1, 2):
            flipped = points.copy()
            flipped[:, axis] *= -1.0

            np.testing.assert_array_equal(
                domain.implicit(points), domain.implicit(flipped)
            )


class ConformalFactorTests(unittest.TestCase):

    def setUp(self) -> None:
        self.disk = geometry.make_domain("disk", {"radius": 1.0})

    def test_interior_is_one(self) -> None:
        metric = geometry.conformal_factor_build(self.disk, 4)

        self.assertEqual(metric.factor(np.array([[0.3, 0.2]]))[0], 1.0)

    def test_far_value_is_j(self) -> None:
        metric = geometry.conformal_factor_build(self.disk, 4)

        self.assertEqual(metric.factor(np.array([[1.5, 0.0]]))[0], 4.0)

    def test_mid_shell(self) -> None:
        metric = geometry.conformal_factor_build(self.disk, 4)
        point = np.array([[1.125, 0.0]])

        value = metric.factor(point)[0]
        gradient = metric.factor_gradient(point)[0]

        self.assertGreater(value, 1.0)
        self.assertLess(value, 4.0)
        self.assertGreater(gradient[0], 0.0)
        self.assertAlmostEqual(gradient[1], 0.0, places=9)

    def test_values_within_bounds(self) -> None:
        metric = geometry.conformal_factor_build(self.disk, 3)
        points = np.random.default_rng(2).uniform(-2.5, 2.5, size=(2000, 2))

        values = metric.factor(points)

        self.assertGreaterEqual(float(np.min(values)), 1.0)
        self.assertLessEqual(float(np.max(values)), 3.0)

    def test_gradient_matches_differences(self) -> None:
        metric = geometry.conformal_factor_build(self.disk, 2)
        step = 1e-4
        for point in ([1.25, 0.0], [0.9, 0.9], [-0.3, 1.1]):
            p = np.array([point])
            gradient = metric.factor_gradient(p)[0]
            for k in range(2):
                offset = np.zeros((1, 2))
                offset[0, k] = step
                difference = (
                    metric.factor(p + offset)[0] - metric.factor(p - offset)[0]
                ) / (2 * step)

                self.assertLess(
                    abs(difference - gradient[k]),
                    1e-5 * max(float(np.linalg.norm(gradient)), 1.0),
                )

    def test_small_j(self) -> None:
        with self.assertRaises(ParameterError):
            geometry.conformal_factor_build(self.disk, 1)

    def test_torus_symmetries(self) -> None:
        metric = geometry.conformal_factor_build(geometry.torus_domain(1, 0.1), 8)

        defect = geometry.symmetry_defect(
            metric, np.random.default_rng(3), count=1000, scale=2.5
        )

        self.assertLess(defect, 1e-12)


class DistanceFieldTests(unittest.TestCase):

    def test_closed_form(self) -> None:
        disk = geometry.make_domain("disk", {"radius": 1.0})

        result = geometry.distance_to_domain(disk, [(2.0, 0.0), (0.5, 0.0)])

        np.testing.assert_allclose(result, [1.0, 0.0])

    def test_sampled_torus(self) -> None:
        torus = geometry.torus_domain(1, 0.1)
        field = geometry.DistanceField(torus)

        dist, gradient = field.value_and_gradient(np.array([[2.0, 0.0, 0.5]]))

        self.assertAlmostEqual(dist[0], 0.5 - math.sqrt(0.1), places=6)
        np.testing.assert_allclose(gradient[0], [0.0, 0.0, 1.0], atol=1e-5)

    def test_inside_is_zero(self) -> None:
        torus = geometry.torus_domain(1, 0.1)

        self.assertEqual(geometry.distance_to_domain(torus, [(2.0, 0.0, 0.0)])[0], 0.0)


class SymmetryTests(unittest.TestCase):

    def test_group_size(self) -> None:
        elements = geometry.group_elements(
            [
                geometry.reflection(1),
                geometry.reflection(2),
                geometry.axis_rotation(0),
            ],
            3,
        )

        self.assertEqual(len(elements), 4 * geometry.ROTATION_SAMPLES)

    def test_rotation_samples_closed_under_negation(self) -> None:
        elements = geometry.group_elements([geometry.axis_rotation(0)], 3)
        count = len(elements)
        for step in range(1, count):
            np.testing.assert_array_equal(
                elements[step], elements[count - step].T
            )

    def test_bump_symmetry(self) -> None:
        metric = geometry.axisymmetric_bump_metric(1.5, 1.0, 0.5, 0.3)

        defect = geometry.symmetry_defect(metric, np.random.default_rng(4))

        self.assertLess(defect, 1e-12)

    def test_random_bump_clear_of_origin(self) -> None:
        rng = np.random.default_rng(5)
        for _ in range(5):
            metric = geometry.random_axisymmetric_bump(rng)

            self.assertLess(metric.factor(np.zeros((1, 3)))[0] - 1.0, 1e-3)

    def test_bump_gradient(self) -> None:
        metric = geometry.axisymmetric_bump_metric(1.5, 1.0, 0.5, 0.3)
        p = np.array([[0.9, 0.3, 0.35]])
        step = 1e-5
        gradient = metric.factor_gradient(p)[0]
        for k in range(3):
            offset = np.zeros((1, 3))
            offset[0, k] = step
            difference = (metric.factor(p + offset)[0] - metric.factor(p - offset)[0]) / (
                2 * step
            )

            self.assertAlmostEqual(difference, gradient[k], places=6)

    def test_euclidean_coefficient(self) -> None:
        metric = geometry.euclidean_metric(3)

        np.testing.assert_array_equal(metric.coefficient(np.ones((4, 3))), np.ones(4))
        np.testing.assert_array_equal(
            metric.coefficient_gradient(np.ones((4, 3))), np.zeros((4, 3))
        )


class OracleTests(unittest.TestCase):

    def test_cylinder_critical_point(self) -> None:
        value, gradient = geometry.oracle_cylinder([(0.0, math.pi)])

        self.assertAlmostEqual(value[0], -math.log(2) / (4 * math.pi), places=12)
        self.assertAlmostEqual(value[0], -0.055159, places=5)
        np.testing.assert_allclose(gradient[0], [0.0, 0.0], atol=1e-15)

    def test_cylinder_far(self) -> None:
        value, _ = geometry.oracle_cylinder([(5.0, math.pi / 2)])

        self.assertAlmostEqual(value[0], -math.log(math.cosh(5.0)) / (4 * math.pi), places=12)
        self.assertAlmostEqual(value[0], -0.3427, places=3)

    def test_cylinder_near_pole(self) -> None:
        near, _ = geometry.oracle_cylinder([(1e-3, 0.0)])
        nearer, _ = geometry.oracle_cylinder([(1e-6, 0.0)])

        self.assertGreater(nearer[0], near[0])
        self.assertGreater(near[0], 0.5)

    def test_cylinder_pole(self) -> None:
        with self.assertRaises(ParameterError):
            geometry.oracle_cylinder([(0.0, 0.0)])

    def test_oracle_gradients(self) -> None:
        oracles = [
            (geometry.AnalyticOracle(geometry.OracleKind.CYLINDER), [1.0, 2.0]),
            (
                geometry.AnalyticOracle(
                    geometry.OracleKind.DISK, {"radius": 1.0, "pole": (0.3, 0.2)}
                ),
                [-0.4, 0.1],
            ),
            (
                geometry.AnalyticOracle(geometry.OracleKind.BALL, {"radius": 1.0}),
                [0.3, 0.2, -0.4],
            ),
            (
                geometry.AnalyticOracle(
                    geometry.OracleKind.RADIAL_ANNULUS, {"R": 2.0, "dimension": 3}
                ),
                [0.7, 0.5, 0.1],
            ),
        ]
        step = 1e-5
        for oracle, point in oracles:
            p = np.array([point])
            gradient = oracle.gradient(p)[0]
            for k in range(p.shape[1]):
                offset = np.zeros_like(p)
                offset[0, k] = step
                difference = (oracle.value(p + offset)[0] - oracle.value(p - offset)[0]) / (
                    2 * step
                )

                self.assertLess(abs(difference - gradient[k]), 1e-8)

    def test_radial_annulus(self) -> None:
        a, b = geometry.radial_annulus_coefficients(3, 2.0)
        value = geometry.oracle_radial("spherical_annulus", {"R": 2.0, "dimension": 3}, 1.0)

        self.assertAlmostEqual(a, -1 / (24 * math.pi), places=15)
        self.assertAlmostEqual(b, 1 / (12 * math.pi), places=15)
        self.assertAlmostEqual(float(value), 1 / (24 * math.pi), places=15)
        self.assertAlmostEqual(float(value), 0.0132629, places=7)

    def test_radial_annulus_traces(self) -> None:
        params = {"R": 2.0, "dimension": 3}

        outer = geometry.oracle_radial("spherical_annulus", params, 2.0)
        inner = geometry.oracle_radial("spherical_annulus", params, 0.5)

        self.assertAlmostEqual(float(outer), 0.0, places=15)
        self.assertAlmostEqual(float(inner), 1 / (8 * math.pi), places=15)

    def test_radial_annulus_2d(self) -> None:
        params = {"R": 2.0, "dimension": 2}

        inner = geometry.oracle_radial("spherical_annulus", params, 0.5)

        self.assertAlmostEqual(float(inner), 1 / (2 * math.pi), places=14)

    def test_ball_center(self) -> None:
        value = geometry.oracle_radial("ball_center", {"radius": 1.0}, 0.5)

        self.assertAlmostEqual(float(value), (1 / 0.5 - 1) / (4 * math.pi), places=15)

    def test_radius_outside(self) -> None:
        with self.assertRaises(ParameterError):
            geometry.oracle_radial("spherical_annulus", {"R": 2.0}, 3.0)

    def test_disk_center(self) -> None:
        value, _ = geometry.oracle_disk([(0.5, 0.0)], (0.0, 0.0))

        self.assertAlmostEqual(value[0], 0.110318, places=6)

    def test_disk_boundary_vanishes(self) -> None:
        angles = np.linspace(0, 2 * math.pi, 17)
        boundary = np.stack([np.cos(angles), np.sin(angles)], axis=1)

        value, _ = geometry.oracle_disk(boundary, (0.3, 0.2))

        np.testing.assert_allclose(value, 0.0, atol=1e-13)

    def test_cylinder_unique_critical_point(self) -> None:
        xs = np.linspace(-6, 6, 401)
        thetas = np.linspace(0, 2 * math.pi, 250, endpoint=False)
        mesh = np.meshgrid(xs, thetas, indexing="ij")
        points = np.stack([m.ravel() for m in mesh], axis=1)
        away = (np.hypot(points[:, 0], points[:, 1] - math.pi) > 0.05) & (
            np.hypot(points[:, 0], np.minimum(points[:, 1], 2 * math.pi - points[:, 1]))
            > 0.05
        )

        _, gradient = geometry.oracle_cylinder(points[away])

        self.assertGreater(float(np.min(np.linalg.norm(gradient, axis=1))), 1e-6)
