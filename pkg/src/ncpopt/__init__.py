"""Optimal investment with non-concave, bounded-above preferences on finite scenario trees."""
from .config import DEFAULT_CONFIG, SolverConfig
from .cpt_solver import cpt_value, optimize_cpt, search_region
from .dp_solver import indirect_utility_curve, solve, terminal_value
from .errors import (
    ArbitrageError,
    HypothesisError,
    InvalidTreeError,
    MissingStrategyError,
    NCPError,
    PreferenceError,
    TreeFormatError,
)
from .no_arbitrage import analyze, check_na
from .preferences import (
    CPTPreference,
    EUPreference,
    inverse_distortion,
    make_builtin_distortion,
    make_builtin_utility,
    preference_from_dict,
)
from .tree import ScenarioTree, load_tree, terminal_law, tree_from_dict, validate_tree, wealth_process

__version__ = "0.1.0"
