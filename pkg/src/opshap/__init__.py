"""Shapley-value attribution and search for weight-sharing supernet operations."""

from .game import (
    Coalition,
    EvalCache,
    EvaluationError,
    OperationId,
    ValueFunction,
    cached_evaluate,
    flatten,
    unflatten,
)
from .shapley import (
    ExactModeRefused,
    McConfig,
    ShapleyEstimate,
    shapley_exact,
    shapley_mc,
    truncated_scan,
)
from .search import (
    SearchConfig,
    SearchError,
    SearchState,
    alpha_update,
    momentum_update,
    run_search,
)
from .space import (
    Genotype,
    SearchSpace,
    derive_genotype,
    load_space,
    load_space_file,
    preset_space,
)
from .synthetic import GameSpec, InteractionGame, load_game_spec, make_game
from .analysis import (
    CorrelationReport,
    ablation_sweep,
    correlation_analysis,
    kendall_tau,
    pairwise_removal_study,
)
from .protocol import SubprocessValueFunction, spawn_evaluator

__version__ = "0.1.0"

__all__ = [
    "Coalition",
    "CorrelationReport",
    "EvalCache",
    "EvaluationError",
    "ExactModeRefused",
    "GameSpec",
    "Genotype",
    "InteractionGame",
    "McConfig",
    "OperationId",
    "SearchConfig",
    "SearchError",
    "SearchSpace",
    "SearchState",
    "ShapleyEstimate",
    "SubprocessValueFunction",
    "ValueFunction",
    "ablation_sweep",
    "alpha_update",
    "cached_evaluate",
    "correlation_analysis",
    "derive_genotype",
    "flatten",
    "kendall_tau",
    "load_game_spec",
    "load_space",
    "load_space_file",
    "make_game",
    "momentum_update",
    "pairwise_removal_study",
    "preset_space",
    "run_search",
    "shapley_exact",
    "shapley_mc",
    "spawn_evaluator",
    "truncated_scan",
    "unflatten",
]
