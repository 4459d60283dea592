"""Finite element heat flow of p-harmonic maps into spheres, with penalization."""

__version__ = "0.1.0"

from .config import ConfigError, RunConfig, SolverConfig, load_config
from .energy import (DEFAULT_SPLITTING, ConvexSplitting, EnergyBreakdown, gk_gradient, gk_hessian,
                     gk_value, penalty_density, regularized_gradient_norm, total_energy,
                     total_energy_unregularized)
from .flow import (FlowResult, FlowTrace, LinearSolveFailure, NonConvergence, StepResult,
                   implicit_step, run_flow, stationarity_check, time_interpolant)
from .mesh import QuadratureRule, TriMesh, build_rect_mesh, p1_gradient_on_element, quadrature_rule
from .sphere import (ConstraintReport, constraint_report, orthogonality_defect, project_to_sphere,
                     wedge)
