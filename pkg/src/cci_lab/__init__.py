"""Tabular laboratory for continuous constraint interpolation and ACPO."""

from .acpo import AcpoConfig, ConfigError, CriticSet, DualState, TrainResult, train, update_dual
from .cci import (CciParams, Regime, advantage_bound, cci_weight, classify_regime, closed_form_policy,
                  constraint_derivative, constraint_value, log_normalizer, state_constraint,
                  wbc_threshold)
from .data import OfflineDataset, Transition, fit_behavior_mle, generate_dataset
from .mdp import (SoftValues, TabularMdp, TabularPolicy, discounted_visitation, evaluate_policy,
                  gridworld, max_entropy_return, random_mdp, shape_reward)
from .theory import BoundTerms, TheoryReport, compute_bound_terms, run_suite

__version__ = "0.1.0"

__all__ = [
    "AcpoConfig", "BoundTerms", "CciParams", "ConfigError", "CriticSet", "DualState",
    "OfflineDataset", "Regime", "SoftValues", "TabularMdp", "TabularPolicy", "TheoryReport",
    "TrainResult", "Transition", "advantage_bound", "cci_weight", "classify_regime",
    "closed_form_policy", "compute_bound_terms", "constraint_derivative", "constraint_value",
    "discounted_visitation", "evaluate_policy", "fit_behavior_mle", "generate_dataset",
    "gridworld", "log_normalizer", "max_entropy_return", "random_mdp", "run_suite",
    "shape_reward", "state_constraint", "train", "update_dual", "wbc_threshold",
]
