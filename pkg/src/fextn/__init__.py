"""Finite-expression search for high-dimensional PDEs, with TransNet-fitted
one-dimensional networks available as unary operators."""

from .config import RunConfig, load_run_config
from .controller import ControllerState, policy_gradient, sample_sequence
from .evaluation import ErrorReport, mc_relative_l2, slice_grid
from .expression import (
    DomainError,
    Expression,
    OperatorPool,
    ParamLayout,
    build_skeleton,
    evaluate,
    evaluate_jet,
    evaluate_jet_with_sensitivity,
    init_theta,
    to_expression_string,
)
from .operators import BUILTINS, BinaryOperator
from .optim import AdamConfig, BfgsConfig, adam_run, bfgs_run, compute_score
from .problems import LossFunction, make_problem, sample_points
from .search import CandidatePool, SearchResult, run_search
from .transnet import TnOperator, build_tn_operator, grf_realize, ls_fit, tune_gamma

__version__ = "0.1.0"

__all__ = [
    "AdamConfig", "BUILTINS", "BfgsConfig", "BinaryOperator", "CandidatePool", "ControllerState",
    "DomainError", "ErrorReport", "Expression", "LossFunction", "OperatorPool", "ParamLayout",
    "RunConfig", "SearchResult", "TnOperator", "adam_run", "bfgs_run", "build_skeleton",
    "build_tn_operator", "compute_score", "evaluate", "evaluate_jet", "evaluate_jet_with_sensitivity",
    "grf_realize", "init_theta", "load_run_config", "ls_fit", "make_problem", "mc_relative_l2",
    "policy_gradient", "run_search", "sample_points", "sample_sequence", "slice_grid",
    "to_expression_string", "tune_gamma",
]
