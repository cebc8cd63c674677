"""Merge-and-Bound training for class-incremental learning on small MLPs."""

from .params import ParameterSet, DimensionError
from .nn import Model, Dense, BatchNorm, ReLU, Classifier, TRAIN, EVAL
from .weightspace import (
    IntraMergeAccumulator,
    BaseModelState,
    uniform_merge_step,
    ema_merge_step,
    intra_merge_step,
    concat_classifier,
    displacement,
    bound_update,
)

__all__ = [
    "ParameterSet",
    "DimensionError",
    "Model",
    "Dense",
    "BatchNorm",
    "ReLU",
    "Classifier",
    "TRAIN",
    "EVAL",
    "IntraMergeAccumulator",
    "BaseModelState",
    "uniform_merge_step",
    "ema_merge_step",
    "intra_merge_step",
    "concat_classifier",
    "displacement",
    "bound_update",
]
