"""Posted-price mechanisms, correlation gaps and their approximation bounds."""

from .corrgap import (
    KUniformRank,
    WeightedRank,
    correlation_gap,
    greedy_verifies_gap,
    kuniform_gap,
    max_correlated_value,
    miniset_gap_profile,
    multilinear,
    multilinear_mc,
    phi,
    phi_limit,
)
from .errors import CapacityError, DomainError, MechlabError, UnsupportedError
from .mech import (
    Instance,
    build_greedy_spm,
    expected_performance,
    ironed_virtual,
    optimal_mechanism,
    reduction_quantities,
    run_spm,
    vcg_with_reserves,
    win_probabilities,
)
from .bounds import solve_cp, upper_bound_check
from .setsys import system_from_config, weighted_rank
from .valuation import Discrete, PiecewiseCDF, Uniform, distribution_from_config, ironed_curve, revenue_curve

__version__ = "0.1.0"

__all__ = [
    "KUniformRank", "WeightedRank", "correlation_gap", "greedy_verifies_gap", "kuniform_gap",
    "max_correlated_value", "miniset_gap_profile", "multilinear", "multilinear_mc", "phi", "phi_limit",
    "CapacityError", "DomainError", "MechlabError", "UnsupportedError",
    "Instance", "build_greedy_spm", "expected_performance", "ironed_virtual", "optimal_mechanism",
    "reduction_quantities", "run_spm", "vcg_with_reserves", "win_probabilities",
    "solve_cp", "upper_bound_check", "system_from_config", "weighted_rank",
    "Discrete", "PiecewiseCDF", "Uniform", "distribution_from_config", "ironed_curve", "revenue_curve",
]
