import unittest

import numpy as np

from hoc_biharmonic.grid import UniformGrid
from hoc_biharmonic.problems import (
    PROBLEMS,
    check_load,
    example_osc_2d,
    example_osc_3d,
    example_smooth_2d,
    example_smooth_3d,
    get_problem,
    layout_name,
    polynomial_problem,
    resolve_layout,
    stokes_cavity,
)
from hoc_biharmonic.utils import ConfigurationError


class TestManufacturedProblems(unittest.TestCase):
    def test_smooth_2d_values(self):
        problem = example_smooth_2d()
        self.assertAlmostEqual(float(problem.u(1.0, 0.0)), 1.0 - np.e)
        self.assertAlmostEqual(float(problem.laplacian(0.0, 0.0)), 2.0)
        self.assertEqual(float(problem.f(0.3, 0.7)), 0.0)

    def test_osc_2d_values(self):
        problem = example_osc_2d()
        lam = 25.0 ** 2 + 5.0 ** 2
        x, y = 0.13, 0.41
        self.assertAlmostEqual(float(problem.laplacian(x, y)), -lam * float(problem.u(x, y)))
        self.assertAlmostEqual(float(problem.f(x, y)), lam ** 2 * float(problem.u(x, y)), places=6)
        self.assertEqual(float(problem.u(0.0, 0.5)), 0.0)
        with self.assertRaises(ValueError):
            example_osc_2d(k1=0.0)

    def test_3d_values(self):
        smooth = example_smooth_3d()
        self.assertEqual(float(smooth.u(0.0, 0.4, 0.9)), 0.0)
        x, y, z = 0.5, 0.5, 0.5
        s = 2.5
        expected = 2 * 0.75 / s - 3 * 0.125 / s ** 2
        self.assertAlmostEqual(float(smooth.laplacian(x, y, z)), expected)
        osc = example_osc_3d()
        self.assertEqual(float(osc.u(0.0, 0.3, 0.3)), 0.0)
        self.assertEqual(float(osc.u(0.3, 0.3, 0.0)), 0.0)

    def test_load_oracle(self):
        for name, factory in PROBLEMS.items():
            check = check_load(factory())
            self.assertTrue(check.passed, f"{name}: max error {check.max_error:.3e} > {check.atol:.3e}")
            self.assertEqual(check.points, 100)

    def test_load_oracle_catches_a_wrong_load(self):
        problem = example_smooth_2d()
        problem.f = lambda x, y: 1.0 + 0 * x
        self.assertFalse(check_load(problem).passed)

    def test_polynomial_derivatives(self):
        problem = polynomial_problem({(4, 0): 1.0, (2, 2): 2.0})
        x, y = 0.3, 0.7
        self.assertAlmostEqual(float(problem.laplacian(x, y)), 12 * x ** 2 + 4 * y ** 2 + 4 * x ** 2)
        self.assertAlmostEqual(float(problem.f(x, y)), 24.0 + 16.0)
        gx, gy = problem.gradient(x, y)
        self.assertAlmostEqual(float(gx), 4 * x ** 3 + 4 * x * y ** 2)
        self.assertAlmostEqual(float(gy), 4 * x ** 2 * y)
        self.assertTrue(check_load(problem).passed)
        with self.assertRaises(ValueError):
            polynomial_problem({(1, 1, 1): 1.0})


class TestLayouts(unittest.TestCase):
    def test_named_layouts(self):
        self.assertEqual(set(resolve_layout("first", 3).values()), {"first"})
        mixed = resolve_layout("mixed", 2)
        self.assertEqual(mixed["x-"], "second")
        self.assertEqual(mixed["y+"], "first")

    def test_explicit_layout(self):
        layout = {"left": "second", "right": "first", "bottom": "first", "top": "second"}
        self.assertEqual(resolve_layout(layout, 2)["y+"], "second")
        self.assertEqual(layout_name(layout), "bottom:first,left:second,right:first,top:second")
        with self.assertRaises(ConfigurationError):
            resolve_layout({"left": "second"}, 2)
        with self.assertRaises(ConfigurationError):
            resolve_layout({"left": "third", "right": "first", "bottom": "first", "top": "first"}, 2)
        with self.assertRaises(ConfigurationError):
            resolve_layout("clamped", 2)

    def test_generated_data_match_the_exact_fields(self):
        problem = example_smooth_2d()
        spec = problem.boundary("mixed")
        y = np.linspace(0.0, 1.0, 5)
        x = np.zeros_like(y)
        np.testing.assert_allclose(spec.sides["x-"].g_L(x, y), problem.laplacian(x, y))
        np.testing.assert_allclose(spec.sides["x+"].g_N(x + 1.0, y), problem.gradient(x + 1.0, y)[0])
        np.testing.assert_allclose(spec.sides["y-"].g_N(y, x), -problem.gradient(y, x)[1])


class TestRegistry(unittest.TestCase):
    def test_lookup(self):
        self.assertEqual(get_problem("osc_2d", {"k1": 5.0, "k2": 50.0}).params, {"k1": 5.0, "k2": 50.0})
        poly = get_problem("polynomial", {"dim": 3, "terms": {"2,1,1": 1.0}})
        self.assertEqual(poly.dim, 3)
        self.assertAlmostEqual(float(poly.u(1.0, 2.0, 3.0)), 6.0)

    def test_bad_lookups(self):
        with self.assertRaises(ConfigurationError):
            get_problem("plate")
        with self.assertRaises(ConfigurationError):
            get_problem("smooth_2d", {"k1": 3.0})
        with self.assertRaises(ConfigurationError):
            get_problem("polynomial", {"dim": 2})


class TestStokesCavity(unittest.TestCase):
    def test_lid_data(self):
        problem = stokes_cavity()
        lid = problem.boundary.sides["y+"].g_N
        self.assertAlmostEqual(float(lid(0.5, 1.0)), -0.5 ** 12)
        self.assertEqual(float(lid(0.0, 1.0)), 0.0)
        self.assertEqual(float(lid(1.0, 1.0)), 0.0)
        for side in ("x-", "x+", "y-"):
            self.assertEqual(float(problem.boundary.sides[side].g_N(0.5, 0.5)), 0.0)
        self.assertEqual(problem.boundary.first_kind_sides(), ("x-", "x+", "y-", "y+"))

    def test_lid_speed_scales_data(self):
        grid = UniformGrid.cube(2, 8)
        fast = stokes_cavity(2.0).boundary.sides["y+"].g_N
        slow = stokes_cavity(1.0).boundary.sides["y+"].g_N
        x = grid.coordinates()[0]
        np.testing.assert_allclose(fast(x, 1.0 + 0 * x), 2.0 * slow(x, 1.0 + 0 * x))


if __name__ == "__main__":
    unittest.main()
