import json
import unittest
from fractions import Fraction

import numpy as np

from hoc_biharmonic import stencils
from hoc_biharmonic.grid import UniformGrid
from hoc_biharmonic.stencils import (
    COUPLED_BOUNDARY_2D,
    HOC9_2D,
    HOC19_3D,
    PRINTED_BOUNDARY_3D,
    Stencil,
    apply,
    rotate_to_side,
    stencils_to_json,
)


class TestCatalog(unittest.TestCase):
    def test_interior_coefficients(self):
        self.assertEqual(HOC9_2D.u_part[(0, 0)], Fraction(-20, 6))
        self.assertEqual(HOC9_2D.u_part[(1, 1)], Fraction(1, 6))
        self.assertEqual(HOC9_2D.v_part[(0, 0)], Fraction(-8, 12))
        self.assertNotIn((1, 1), HOC9_2D.v_part)
        self.assertEqual(len(HOC19_3D.u_part), 19)
        self.assertEqual(len(HOC19_3D.v_part), 7)

    def test_consistency(self):
        for st in (HOC9_2D, HOC19_3D, COUPLED_BOUNDARY_2D):
            self.assertTrue(st.is_consistent(), f"{st.name} should annihilate constants.")
        self.assertEqual(PRINTED_BOUNDARY_3D.u_sum(), Fraction(-1, 2))
        self.assertFalse(PRINTED_BOUNDARY_3D.is_consistent())

    def test_rejects_wide_or_normal_offsets(self):
        with self.assertRaises(ValueError):
            Stencil("wide", 2, "interior", {(2, 0): Fraction(1)})
        with self.assertRaises(ValueError):
            Stencil("normal_g", 2, "x-", {(0, 0): Fraction(1)}, g_part={(1, 0): Fraction(1)})
        with self.assertRaises(ValueError):
            Stencil("interior_g", 2, "interior", {(0, 0): Fraction(1)}, g_part={(0, 0): Fraction(1)})

    def test_weights_are_sorted_floats(self):
        offsets, weights = COUPLED_BOUNDARY_2D.weights("u")
        self.assertEqual(offsets.shape, (6, 2))
        self.assertEqual([tuple(o) for o in offsets], sorted(COUPLED_BOUNDARY_2D.u_part))
        self.assertAlmostEqual(weights.sum(), 0.0)

    def test_lazy_3d_closure(self):
        st = stencils.COUPLED_BOUNDARY_3D
        self.assertEqual(st.anchor, "x-")
        self.assertTrue(st.is_consistent())
        self.assertIs(st, stencils.boundary_stencil(3))


class TestRotation(unittest.TestCase):
    def test_rotate_to_right_side(self):
        right = rotate_to_side(COUPLED_BOUNDARY_2D, "x+")
        self.assertEqual(right.anchor, "x+")
        self.assertEqual(right.u_part[(-1, 0)], Fraction(8, 6))
        self.assertEqual(right.u_part[(-1, 1)], Fraction(2, 6))
        self.assertEqual(right.g_part, {(0, 0): Fraction(-2)})

    def test_rotate_to_top(self):
        top = rotate_to_side(COUPLED_BOUNDARY_2D, "top")
        self.assertEqual(top.anchor, "y+")
        self.assertEqual(top.u_part[(0, -1)], Fraction(8, 6))
        self.assertEqual(top.v_part[(0, -1)], Fraction(-4, 12))

    def test_coefficient_multiset_preserved(self):
        for side in ("x+", "y-", "y+"):
            moved = rotate_to_side(COUPLED_BOUNDARY_2D, side)
            self.assertEqual(sorted(moved.u_part.values()), sorted(COUPLED_BOUNDARY_2D.u_part.values()))
            back = rotate_to_side(moved, "x-")
            self.assertEqual(back.u_part, COUPLED_BOUNDARY_2D.u_part, f"Round trip through {side} failed.")
            self.assertEqual(back.v_part, COUPLED_BOUNDARY_2D.v_part)

    def test_rotate_3d(self):
        moved = rotate_to_side(PRINTED_BOUNDARY_3D, "z+")
        self.assertEqual(moved.u_part[(0, 0, -1)], PRINTED_BOUNDARY_3D.u_part[(1, 0, 0)])

    def test_interior_has_no_side(self):
        with self.assertRaises(ValueError):
            rotate_to_side(HOC9_2D, "x+")


class TestApply(unittest.TestCase):
    def setUp(self):
        self.grid = UniformGrid.cube(2, 4, 0.0, 2.0)

    def test_interior_quadratic(self):
        residual = apply(HOC9_2D, lambda x, y: x ** 2 + y ** 2, lambda x, y: 4.0 + 0 * x, None, None, (2, 2), self.grid)
        self.assertAlmostEqual(residual, 0.0, places=12)

    def test_interior_quartic(self):
        residual = apply(HOC9_2D, lambda x, y: x ** 4, lambda x, y: 12 * x ** 2, None, None, (1, 3), self.grid)
        self.assertAlmostEqual(residual, 0.0, places=11)

    def test_boundary_exact_on_quartic(self):
        grid = UniformGrid((0.5, 0.0), (2.5, 2.0), (4, 4))
        residual = apply(
            COUPLED_BOUNDARY_2D,
            lambda x, y: x ** 4 + x ** 2 * y ** 2,
            lambda x, y: 14 * x ** 2 + 2 * y ** 2,
            lambda x, y: 32.0 + 0 * x,
            lambda x, y: -(4 * x ** 3 + 2 * x * y ** 2),
            (0, 2),
            grid,
        )
        self.assertAlmostEqual(residual, 0.0, places=10)

    def test_boundary_sign_matters(self):
        grid = UniformGrid((0.5, 0.0), (2.5, 2.0), (4, 4))
        args = (lambda x, y: x ** 2, lambda x, y: 2.0 + 0 * x, lambda x, y: 0 * x, lambda x, y: -2 * x, (0, 2), grid)
        self.assertAlmostEqual(apply(COUPLED_BOUNDARY_2D, *args), 0.0, places=12)
        self.assertAlmostEqual(apply(stencils.PRINTED_BOUNDARY_2D_SIGN, *args), 4 * 0.5 * 2 / grid.h, places=10)

    def test_array_fields_need_the_offsets(self):
        coords = self.grid.coordinates()
        u = self.grid.as_array(coords[0] ** 2)
        v = np.full(self.grid.shape, 2.0)
        self.assertAlmostEqual(apply(HOC9_2D, u, v, None, None, (2, 1), self.grid), 0.0, places=12)
        with self.assertRaises(ValueError):
            apply(HOC9_2D, u, v, None, None, (0, 2), self.grid)
        with self.assertRaises(ValueError):
            apply(HOC9_2D, u, None, None, None, (2, 2), self.grid)


class TestExport(unittest.TestCase):
    def test_json_catalog(self):
        payload = json.loads(stencils_to_json([COUPLED_BOUNDARY_2D, HOC9_2D]))
        self.assertEqual([entry["name"] for entry in payload], ["COUPLED_BOUNDARY_2D", "HOC9_2D"])
        f_entries = payload[0]["parts"]["f"]
        self.assertEqual(f_entries, [{"offset": [0, 0], "num": -1, "den": 12, "h_power": 2}])
        self.assertEqual(payload[0]["parts"]["g"][0]["h_power"], -1)

    def test_from_dict_restores_the_stencil(self):
        restored = Stencil.from_dict(COUPLED_BOUNDARY_2D.to_dict())
        self.assertEqual(restored, COUPLED_BOUNDARY_2D)


if __name__ == "__main__":
    unittest.main()
