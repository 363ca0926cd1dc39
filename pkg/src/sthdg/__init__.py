"""Space-time hybridizable discontinuous Galerkin solver for the incompressible
Navier-Stokes equations on time-dependent 2D domains."""

from .basis import make_basis
from .diagnostics import CaseConfig, DiagnosticsReport, convergence_study, run_case
from .dofs import BoundaryData, build_layout
from .errors import *  # noqa: F401,F403
from .marching import TraceField, march, picard_slab, project_initial
from .mesh import SinusoidalMotion, SpatialMesh, StaticMotion, extrude_slab, move_mesh, triangulate_unit_square
from .problems import make_problem, manufactured_solution
from .quadrature import make_quadrature

__version__ = "0.1.0"
