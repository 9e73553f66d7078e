"""Lazy exact arithmetic over expression dags.

Build a dag with :class:`ExpressionDag`, then :func:`evaluate` it to any
absolute accuracy ``2**q``.  Unbalanced graphs can be attacked externally
(:func:`restructure`, a weighted Brent rebuild of every maximal operator
tree) or internally (the ``ebc`` / ``ebd`` evaluation policies, which
redistribute per-node error budgets).  The :mod:`exdag.bench` module holds
generators and an experiment runner for comparing the strategies.
"""

from .balance import (
    ParameterTriple,
    balanced_cp_cost,
    depth_heuristic_parameters,
    full_count_weights,
    optimal_path_weights,
    parameters_from_weights,
    predicted_cost,
    solve_cp_split,
)
from .bounds import magnitude_bounds, operation_constants
from .dag import (
    ExpressionDag,
    Node,
    OpKind,
    ParseError,
    export_dot,
    maximal_operator_trees,
    parse,
    serialize,
)
from .errors import (
    DegenerateSplitError,
    DomainError,
    EvaluationError,
    PrecisionCapError,
    SeparationError,
)
from .evaluate import Accuracy, Approximation, CostReport, cost_summary, evaluate
from .restructure import LinearFractional, RestructureStats, WeightPolicy, restructure

__all__ = [
    "Accuracy",
    "Approximation",
    "CostReport",
    "DegenerateSplitError",
    "DomainError",
    "EvaluationError",
    "ExpressionDag",
    "LinearFractional",
    "Node",
    "OpKind",
    "ParameterTriple",
    "ParseError",
    "PrecisionCapError",
    "RestructureStats",
    "SeparationError",
    "WeightPolicy",
    "balanced_cp_cost",
    "cost_summary",
    "depth_heuristic_parameters",
    "evaluate",
    "export_dot",
    "full_count_weights",
    "magnitude_bounds",
    "maximal_operator_trees",
    "operation_constants",
    "optimal_path_weights",
    "parameters_from_weights",
    "parse",
    "predicted_cost",
    "restructure",
    "serialize",
    "solve_cp_split",
]
