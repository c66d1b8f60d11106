# tests/test_oracle.py
import unittest

import numpy as np
from numpy.testing import assert_allclose

from autodiff import ParamVector
from combine import pegrad_combine, project_orthogonal, GradPair
from oracle import (bruteforce_pitch, compare_gradients, finite_diff, first_order_invariance_probe,
                    projection_bruteforce)


class TestFiniteDiff(unittest.TestCase):
    def test_quadratic_is_exact(self):
        a = np.array([[2.0, 0.5], [0.5, 1.0]])
        theta = np.array([0.3, -0.7])
        numeric = finite_diff(lambda x: 0.5 * x @ a @ x, theta)
        assert_allclose(numeric, a @ theta, rtol=1e-8)

    def test_constant_loss_gives_zero(self):
        numeric = finite_diff(lambda x: 4.0, np.ones(3))
        assert_allclose(numeric, np.zeros(3), atol=0)

    def test_param_vector_in_and_out(self):
        theta = ParamVector.from_arrays([('w', np.array([1.0, 2.0]))])
        numeric = finite_diff(lambda p: float(np.sum(p.values ** 2)), theta)
        self.assertIsInstance(numeric, ParamVector)
        assert_allclose(numeric.values, [2.0, 4.0], rtol=1e-8)

    def test_compare_gradients_reports_worst_entry(self):
        report = compare_gradients(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.2, 3.0]))
        self.assertEqual(report.argmax, 1)
        self.assertAlmostEqual(report.max_relative_error, 0.2 / 2.2)
        self.assertFalse(report.passes(1e-3))


class TestInvarianceProbe(unittest.TestCase):
    def setUp(self):
        self.g_R = np.array([1.0, 2.0, -1.0])

        def loss(theta):
            # linear task loss plus curvature, gradient g_R at the origin
            return float(self.g_R @ theta + 0.5 * theta @ theta)

        self.loss = loss

    def test_orthogonal_motion_is_second_order(self):
        u = project_orthogonal(np.array([0.5, -0.2, 0.9]), self.g_R)
        probe = first_order_invariance_probe(self.loss, np.zeros(3), u / np.linalg.norm(u))
        self.assertAlmostEqual(probe.order(), 2.0, places=6)
        for ratio in probe.ratios():
            self.assertAlmostEqual(ratio, 4.0, places=6)

    def test_parallel_motion_is_first_order(self):
        u = self.g_R / np.linalg.norm(self.g_R)
        probe = first_order_invariance_probe(self.loss, np.zeros(3), u)
        self.assertLess(abs(probe.order() - 1.0), 0.01)
        for ratio in probe.ratios():
            self.assertLess(abs(ratio - 2.0), 0.02)

    def test_pegrad_correction_keeps_task_loss_to_first_order(self):
        g_E = np.array([3.0, -1.0, 0.5])
        direction = pegrad_combine(GradPair(ParamVector.from_arrays([('w', self.g_R)]),
                                            ParamVector.from_arrays([('w', g_E)]))).direction.values
        v = direction - self.g_R
        probe = first_order_invariance_probe(self.loss, np.zeros(3), v / np.linalg.norm(v))
        self.assertGreater(probe.order(), 1.9)

    def test_direction_must_be_unit(self):
        with self.assertRaises(ValueError):
            first_order_invariance_probe(self.loss, np.zeros(3), np.array([1.0, 1.0, 0.0]))


class TestProjectionBruteforce(unittest.TestCase):
    def test_agrees_with_closed_form_in_2d_and_3d(self):
        rng = np.random.default_rng(0)
        for dim in (2, 3):
            for _ in range(5):
                g_R, g_E = rng.normal(size=dim), rng.normal(size=dim)
                resolution = 401 if dim == 2 else 101
                found = projection_bruteforce(g_E, g_R, resolution)
                expected = project_orthogonal(g_E, g_R)
                tolerance = bruteforce_pitch(g_E, resolution) * np.sqrt(dim - 1)
                self.assertLessEqual(np.linalg.norm(found - expected), tolerance)

    def test_zero_task_gradient(self):
        g_E = np.array([0.3, -0.4])
        found = projection_bruteforce(g_E, np.zeros(2))
        self.assertLessEqual(np.linalg.norm(found - g_E), bruteforce_pitch(g_E) * np.sqrt(2))

    def test_rejects_other_dimensions(self):
        with self.assertRaises(ValueError):
            projection_bruteforce(np.zeros(4), np.zeros(4))
        with self.assertRaises(ValueError):
            projection_bruteforce(np.zeros(2), np.zeros(3))


if __name__ == '__main__':
    unittest.main()
