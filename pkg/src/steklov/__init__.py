"""Two-level spectral-collocation direct solver for elliptic problems on boxes."""

from .condensation import (BatchSchedule, InterfaceSystem, SolveReport, build,
                           estimate_workspace, reduce_load, run_solve_stage,
                           solve, solve_bvp)
from .geometry import (DomainBox, Discretization, MeshConfig, ParameterMap,
                       build_discretization, leaf_neighbors, sinusoidal_map)
from .local_ops import (DROP_CORNERS, LEGENDRE_FACES, CoefficientField,
                        LeafFactors, LeafTemplate, build_leaf_operator,
                        cheb_diff_matrix, cheb_nodes,
                        face_interp_cheb_to_legendre, isotropic_field)
from .problems import (ParabolicProblem, ProblemSpec, TimeStepConfig,
                       crank_nicolson_run, make_parabolic, make_problem,
                       relative_l2_error)

__version__ = "0.1.0"
