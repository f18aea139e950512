"""Hierarchical graph attention for stock movement prediction, on a small numpy autograd."""

from .autograd import ContractError, NumericError, ShapeError, Tensor
from .graph import RelationGraph, build_metapaths
from .market import MarketFrame, PhaseSplit, split_phases
from .models import IndexModel, ModelSpec, NodeModel
from .training import TrainConfig, run_experiment, train_phase

__version__ = "0.1.0"

__all__ = [
    "ContractError", "IndexModel", "MarketFrame", "ModelSpec", "NodeModel", "NumericError",
    "PhaseSplit", "RelationGraph", "ShapeError", "Tensor", "TrainConfig", "build_metapaths",
    "run_experiment", "split_phases", "train_phase",
]
