import os
import tempfile
import unittest

import numpy as np
import scipy.io

from hoc_biharmonic.assembly import (
    assemble_13point_2d,
    assemble_coupled,
    assemble_decoupled,
    evaluate,
    export_matrix_market,
    m_matrix_check,
)
from hoc_biharmonic.grid import UniformGrid
from hoc_biharmonic.harness import error_norms, solve_problem
from hoc_biharmonic.problems import example_smooth_2d, polynomial_problem
from hoc_biharmonic.utils import ConfigurationError

QUARTIC_2D = {(4, 0): 1.0, (2, 2): -0.5, (1, 3): 0.25, (0, 2): 1.0, (1, 0): -2.0}
QUARTIC_3D = {(2, 2, 0): 1.0, (0, 1, 3): -0.5, (1, 1, 1): 2.0, (0, 0, 4): 0.25}


class TestCoupledAssembly(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.problem = example_smooth_2d()

    def test_unknown_counts(self):
        system = assemble_coupled(UniformGrid.cube(2, 4), self.problem.to_problem("first"))
        self.assertEqual((system.n_u, system.n_v, system.size), (9, 21, 30))
        mixed = assemble_coupled(UniformGrid.cube(2, 4), self.problem.to_problem("mixed"))
        self.assertEqual((mixed.n_u, mixed.n_v), (9, 18))

    def test_unknown_ordering(self):
        system = assemble_coupled(UniformGrid.cube(2, 4), self.problem.to_problem("first"))
        self.assertTrue(np.all(np.diff(system.u_map) > 0))
        self.assertTrue(np.all(np.diff(system.v_map) > 0))
        self.assertEqual(system.v_map[0], 1, "The first V unknown should be the face node (1, 0).")

    def test_matrix_is_canonical(self):
        system = assemble_coupled(UniformGrid.cube(2, 8), self.problem.to_problem("first"))
        self.assertTrue(system.matrix.has_sorted_indices)
        self.assertTrue(np.all(system.matrix.data != 0))
        self.assertEqual(system.matrix.shape, (system.size, system.size))

    def test_interior_row_sums(self):
        grid = UniformGrid.cube(2, 8)
        system = assemble_coupled(grid, self.problem.to_problem("first"))
        blocks = system.blocks()
        row = int(np.searchsorted(system.u_map, grid.lex_index((4, 4))))
        self.assertAlmostEqual(blocks["A_h"][row].sum(), 0.0, places=8)
        self.assertAlmostEqual(blocks["B"][row].sum(), -1.0, places=12)
        self.assertAlmostEqual(blocks["A_h"][row, row], -20 / 6 * 64, places=8)

    def test_second_kind_only_needs_decoupled_path(self):
        with self.assertRaises(ConfigurationError):
            assemble_coupled(UniformGrid.cube(2, 4), self.problem.to_problem("second"))
        with self.assertRaises(ConfigurationError):
            assemble_decoupled(UniformGrid.cube(2, 4), self.problem.to_problem("first"))

    def test_dimension_mismatch(self):
        with self.assertRaises(ConfigurationError):
            assemble_coupled(UniformGrid.cube(3, 4), self.problem.to_problem("first"))

    def test_3d_counts(self):
        problem = polynomial_problem(QUARTIC_3D, dim=3)
        system = assemble_coupled(UniformGrid.cube(3, 4), problem.to_problem("first"))
        self.assertEqual((system.n_u, system.n_v), (27, 81))

    def test_scatter_keeps_boundary_data(self):
        grid = UniformGrid.cube(2, 4)
        system = assemble_coupled(grid, self.problem.to_problem("first"))
        u, v = system.scatter(np.zeros(system.size))
        coords = grid.coordinates()
        boundary = grid.boundary_count() > 0
        np.testing.assert_allclose(u[boundary], evaluate(self.problem.u, coords)[boundary])
        self.assertTrue(np.all(u[system.u_map] == 0))
        with self.assertRaises(ValueError):
            system.scatter(np.zeros(3))


class TestPolynomialExactness(unittest.TestCase):
    """Quartic data are reproduced to rounding on every layout."""

    def check(self, problem, layout, n, atol=1e-9):
        grid = UniformGrid.cube(problem.dim, n)
        solution = solve_problem(problem.to_problem(layout), grid)
        coords = grid.coordinates()
        e_u, _ = error_norms(solution.u, evaluate(problem.u, coords), grid.h, grid.dim)
        e_v, _ = error_norms(solution.v, evaluate(problem.laplacian, coords), grid.h, grid.dim)
        self.assertLess(e_u, atol, f"U error on layout {layout}")
        self.assertLess(e_v, 1e3 * atol, f"V error on layout {layout}")

    def test_2d_layouts(self):
        problem = polynomial_problem(QUARTIC_2D)
        for layout in ("first", "second", "mixed", {"left": "first", "right": "second", "bottom": "second", "top": "first"}):
            self.check(problem, layout, 8)

    def test_3d_first_kind(self):
        self.check(polynomial_problem(QUARTIC_3D, dim=3), "first", 4)

    def test_smooth_problem_converges(self):
        problem = example_smooth_2d()
        errors = []
        for n in (16, 32):
            grid = UniformGrid.cube(2, n)
            solution = solve_problem(problem.to_problem("first"), grid)
            errors.append(error_norms(solution.u, evaluate(problem.u, grid.coordinates()), grid.h, 2)[0])
        self.assertGreater(errors[0] / errors[1], 8.0, f"Errors {errors} do not fall fast enough.")


class TestDecoupled(unittest.TestCase):
    def test_sizes(self):
        grid = UniformGrid.cube(2, 8)
        v_system, u_builder = assemble_decoupled(grid, example_smooth_2d().to_problem("second"))
        self.assertEqual(v_system.size, 49)
        u_system = u_builder(np.zeros(grid.num_nodes))
        self.assertEqual(u_system.matrix.shape, (49, 49))


class TestMMatrix(unittest.TestCase):
    def test_small_grids(self):
        for n in (4, 8):
            system = assemble_coupled(UniformGrid.cube(2, n), example_smooth_2d().to_problem("first"))
            report = m_matrix_check(system)
            self.assertTrue(report.passed, f"-A_h should be an M-matrix at N={n}.")
            self.assertGreaterEqual(report.min_inverse_entry, 0.0)

    def test_refuses_large_grids(self):
        system = assemble_coupled(UniformGrid.cube(2, 32), example_smooth_2d().to_problem("first"))
        with self.assertRaises(ValueError):
            m_matrix_check(system)


class TestThirteenPoint(unittest.TestCase):
    def test_centre_coefficient(self):
        grid = UniformGrid.cube(2, 8)
        system = assemble_13point_2d(grid, example_smooth_2d().to_problem("first"))
        row = int(np.searchsorted(system.unknown_map, grid.lex_index((4, 4))))
        self.assertAlmostEqual(system.matrix[row, row] / 8 ** 4, 20.0)
        self.assertEqual(system.size, 49)

    def test_quadratics_are_exact(self):
        problem = polynomial_problem({(2, 0): 1.0, (1, 1): 0.5, (0, 2): -1.0, (0, 1): 3.0})
        grid = UniformGrid.cube(2, 8)
        system = assemble_13point_2d(grid, problem.to_problem("first"))
        x = np.linalg.solve(system.matrix.toarray(), system.rhs)
        u = system.scatter(x)
        np.testing.assert_allclose(u, evaluate(problem.u, grid.coordinates()), atol=1e-9)

    def test_needs_first_kind_2d(self):
        with self.assertRaises(ConfigurationError):
            assemble_13point_2d(UniformGrid.cube(2, 4), example_smooth_2d().to_problem("mixed"))


class TestExport(unittest.TestCase):
    def test_matrix_market(self):
        system = assemble_coupled(UniformGrid.cube(2, 4), example_smooth_2d().to_problem("first"))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "coupled.mtx")
            export_matrix_market(system.matrix, path, comment="coupled N=4")
            loaded = scipy.io.mmread(path).tocsr()
        np.testing.assert_allclose(loaded.toarray(), system.matrix.toarray())


if __name__ == "__main__":
    unittest.main()
