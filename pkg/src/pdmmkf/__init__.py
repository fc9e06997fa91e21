"""PDMM for decomposable quadratic programs on graphs, with finite-time
convergence on trees and its equivalence to the Kalman filter."""

from .errors import (AssumptionError, DimensionError, GraphError, InfeasibleError,
                     NoSaddlePointError, PdmmError, ScheduleError, SingularSystemError,
                     ValidationError)
from .graph import Graph, Orientation, build_graph, is_chain, is_tree, orient_to_root
from .kalman import (KalmanState, MlChainProblem, StateSpaceModel, build_P_statespace,
                     kalman_filter, kalman_init, kalman_step, ml_chain_problem,
                     pdmm_filter, pdmm_smoother, simulate_trajectory)
from .params import (PMatrixSet, build_tree_optimal, build_uniform, check_assumption2,
                     woodbury_inverse)
from .pdmm import (Schedule, SolverState, Status, async_step, forward_message_direct,
                   init_state, lambda_from_message, local_x_update, message_update, run,
                   sync_iteration)
from .problem import (EdgeConstraint, KktResidual, NodeObjective, Problem, build_problem,
                      kkt_residual, objective_value, oracle_solve, validate)

__version__ = "0.1.0"
