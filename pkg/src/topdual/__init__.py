"""Kernelized dual coordinate ascent for accuracy-at-the-top classifiers.

TopPush, TopPushK and PatMat are trained in the dual by a randomized
two-coordinate ascent whose steps have closed forms; see
:func:`topdual.solver.solve`.
"""

from .diagnostics import ThresholdSpec, primal_objective, threshold
from .exceptions import ConfigError, DataError, NumericError, TopDualError
from .kernel import KernelMatrix, KernelSpec, build_kernel_matrix, read_cache, write_cache
from .metrics import ScoredLabels, pr_curve, precision_at_recall, precision_recall_at
from .model import TrainedModel, from_state
from .problem import ProblemSpec, dual_objective, is_feasible
from .solver import SolverConfig, SolverState, initialize, run_loop, solve
from .surrogate import SurrogateSpec

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "KernelMatrix", "KernelSpec", "NumericError", "ProblemSpec",
    "ScoredLabels", "SolverConfig", "SolverState", "SurrogateSpec", "ThresholdSpec",
    "TopDualError", "TrainedModel", "build_kernel_matrix", "dual_objective", "from_state",
    "initialize", "is_feasible", "pr_curve", "precision_at_recall", "precision_recall_at",
    "primal_objective", "read_cache", "run_loop", "solve", "threshold", "write_cache",
]
