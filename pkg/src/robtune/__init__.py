"""Desk-scale study of SGD hyperparameters vs. black-box evasion robustness.

Train small classifiers (centralized, deep-ensemble, or distributed with
IID / Dirichlet non-IID shards) under configurable SGD hyperparameters,
attack them with transfer- and query-based black-box attacks, compute
curvature/similarity/bound diagnostics, and search the hyperparameter
space with NSGA-II for configurations robust to both attack families.
"""

from .attacks import (AdvResult, AttackBudget, pgd, square_attack, transfer_attack,
                      evaluate_attack, evaluate_query_attack, evaluate_transfer_attack)
from .autodiff import Tensor, grad, hvp
from .data import Dataset, PartitionSpec, generate, load_dataset, partition, save_dataset, split_validation
from .diagnostics import (BoundInputs, RobustnessReport, SimilarityStats, SmoothnessEstimate,
                          build_report, clean_accuracy, gradient_similarity, input_smoothness,
                          param_sharpness, query_bounds, robust_accuracy, transfer_bound,
                          transfer_indicator)
from .ensembles import EnsembleModel, EnsembleSpec, build, load_ensemble, save_ensemble
from .estimators import EnsembleClassifier
from .experiments import AblationPlan, ExperimentConfig, run_ablation, run_search
from .nets import ModelParams, ModelSpec, Net, init_params, load_model, save_model
from .nsga2 import (Individual, SearchConfig, crowding_distance, dominates, evolve,
                    nondominated_sort, pareto_front)
from .training import HyperParams, OptimizerState, TrainLog, cosine_eta, sgd_step, train

__version__ = "0.1.0"

__all__ = [
    "AdvResult", "AttackBudget", "pgd", "square_attack", "transfer_attack",
    "evaluate_attack", "evaluate_query_attack", "evaluate_transfer_attack",
    "Tensor", "grad", "hvp",
    "Dataset", "PartitionSpec", "generate", "load_dataset", "partition",
    "save_dataset", "split_validation",
    "BoundInputs", "RobustnessReport", "SimilarityStats", "SmoothnessEstimate",
    "build_report", "clean_accuracy", "gradient_similarity", "input_smoothness",
    "param_sharpness", "query_bounds", "robust_accuracy", "transfer_bound",
    "transfer_indicator",
    "EnsembleModel", "EnsembleSpec", "build", "load_ensemble", "save_ensemble",
    "EnsembleClassifier",
    "AblationPlan", "ExperimentConfig", "run_ablation", "run_search",
    "ModelParams", "ModelSpec", "Net", "init_params", "load_model", "save_model",
    "Individual", "SearchConfig", "crowding_distance", "dominates", "evolve",
    "nondominated_sort", "pareto_front",
    "HyperParams", "OptimizerState", "TrainLog", "cosine_eta", "sgd_step", "train",
]
