"""
Fourth-order compact finite difference solver for the biharmonic equation Δ²u = f
on boxes in 2D and 3D, using the coupled splitting v = Δu with Dirichlet
boundary conditions of the first kind (u, ∂ₙu), the second kind (u, Δu) or a mix.
================================================
Documentation is available in the docstrings and in README.md.


Contents
--------------------------------------
::
  UniformGrid         --- Uniform node-centred grid on a box.
  BoundarySpec        --- Per-side boundary conditions.
  ProblemSpec         --- Load and boundary data of a biharmonic problem.
  Stencil             --- Exact-rational compact stencil.
  truncation_table    --- Exact residuals of a stencil on monomials.
  solve_3d_boundary   --- Derives and certifies the 3D boundary closure.
  assemble_coupled    --- Coupled block system for U and V.
  solve               --- Sparse linear solver.
  estimate_cond2      --- 2-norm condition number estimate.
  get_problem         --- Manufactured problems by name.
  refine_study        --- Grid refinement study.
  __version__         --- hoc_biharmonic version string.

"""

from .assembly import assemble_13point_2d, assemble_coupled, assemble_decoupled, m_matrix_check
from .boundary import BoundarySpec, ProblemSpec, first_kind, second_kind
from .derive import solve_3d_boundary, truncation_table
from .grid import UniformGrid
from .harness import cond_study, refine_study, solve_problem, stokes_study
from .linsolve import estimate_cond2, solve
from .problems import get_problem, stokes_cavity
from .stencils import Stencil
from .version import __version__
