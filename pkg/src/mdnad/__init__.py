"""Deep mixture density networks for conditional density anomaly detection."""

from .core_math import ContractError, Rng
from .data import Dataset, SchemaSpec, gen_synthetic_bimodal, inject_anomalies
from .model import MdnConfig, MdnModel, MdnOutput, NetworkParams
from .optimizers import OptimizerSpec
from .scoring import ThresholdPolicy
from .trainer import TrainConfig, TrainReport, compare_optimizers, train

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "Dataset",
    "MdnConfig",
    "MdnModel",
    "MdnOutput",
    "NetworkParams",
    "OptimizerSpec",
    "Rng",
    "SchemaSpec",
    "ThresholdPolicy",
    "TrainConfig",
    "TrainReport",
    "compare_optimizers",
    "gen_synthetic_bimodal",
    "inject_anomalies",
    "train",
]
