"""Federated-learning simulator with latent-similarity contribution weighting."""

from .config import RunConfig, ConfigError
from .contribution import (
    DegenerateLatent,
    MeanLatent,
    contribution_factors,
    cosine,
    normalize_weights,
    similarity_matrix,
)
from .data import (
    Dataset,
    DirichletConfig,
    PartitionPlan,
    generate_synthetic,
    load_idx,
    partition_dirichlet,
    partition_label_split,
    train_test_split,
)
from .nn import ModelSpec, OptimizerState, TrainingDiverged, init_model
from .simulation import Federation, RoundReport, run_experiment
from .strategies import ClientUpdate, StrategyConfig

__version__ = "0.1.0"

__all__ = [
    "ClientUpdate",
    "ConfigError",
    "Dataset",
    "DegenerateLatent",
    "DirichletConfig",
    "Federation",
    "MeanLatent",
    "ModelSpec",
    "OptimizerState",
    "PartitionPlan",
    "RoundReport",
    "RunConfig",
    "StrategyConfig",
    "TrainingDiverged",
    "contribution_factors",
    "cosine",
    "generate_synthetic",
    "init_model",
    "load_idx",
    "normalize_weights",
    "partition_dirichlet",
    "partition_label_split",
    "run_experiment",
    "similarity_matrix",
    "train_test_split",
]
