"""Exact Newton steps for objectives defined on computational graphs.

The objective is lifted to an equality-constrained program and the
resulting KKT system is solved by message passing over a tree
decomposition of the graph's moralization.
"""

from .autodiff import accumulate_dense_hessian, hessian_vector, reverse_grad
from .control import (DdpVariant, OcProblem, build_chain, ddp_backward, ddp_forward, preset,
                      rollout, run_ddp)
from .estimators import DDPSolver, GraphNewton, TreeDecomposer, check_graph, check_inputs
from .exceptions import (DimensionError, GraphError, InfeasiblePointError, LinesearchFailError,
                         NonDescentError, OptimizationError, SingularKKTError, SingularPivotError,
                         SingularQuuError)
from .graph import CompGraph, NodeSpec, forward_eval, objective_value, validate_graph
from .kkt import KktSystem, assemble_kkt, dense_kkt_solve, extract_input_step, write_matrix_market
from .mpsolver import solve_kkt_tree
from .newton import NewtonConfig, linesearch, newton_step, optimize
from .problem_io import dump_problem, load_problem, parse_problem
from .treedecomp import (Hypergraph, TreeDecomposition, check_edge_separation, decompose,
                         decomposition_from_ordering, elimination_order, moralize,
                         validate_decomposition)

__version__ = "0.1.0"

__all__ = [
    "CompGraph", "NodeSpec", "validate_graph", "forward_eval", "objective_value",
    "reverse_grad", "hessian_vector", "accumulate_dense_hessian",
    "KktSystem", "assemble_kkt", "dense_kkt_solve", "extract_input_step", "write_matrix_market",
    "Hypergraph", "TreeDecomposition", "moralize", "elimination_order",
    "decomposition_from_ordering", "decompose", "validate_decomposition", "check_edge_separation",
    "solve_kkt_tree",
    "NewtonConfig", "newton_step", "linesearch", "optimize",
    "OcProblem", "DdpVariant", "preset", "build_chain", "rollout", "ddp_backward", "ddp_forward",
    "run_ddp",
    "load_problem", "parse_problem", "dump_problem",
    "GraphNewton", "DDPSolver", "TreeDecomposer", "check_graph", "check_inputs",
    "GraphError", "DimensionError", "InfeasiblePointError", "SingularKKTError",
    "SingularPivotError", "SingularQuuError", "OptimizationError", "NonDescentError",
    "LinesearchFailError",
]
