"""Margin-based softmax losses with an adaptive curriculum term, plus a toy
training and evaluation harness built on numpy."""

from cmgn.errors import (
    CheckpointFormatError,
    DegenerateInputError,
    NumericalFailure,
    ShapeError,
)
from cmgn.losses import LossKind, LossOutput, LossVariant, CosineBatch, forward, backward
from cmgn.curriculum import CurriculumState, StatisticKind, update_t

__version__ = "0.1.0"

__all__ = [
    "CheckpointFormatError",
    "CosineBatch",
    "CurriculumState",
    "DegenerateInputError",
    "LossKind",
    "LossOutput",
    "LossVariant",
    "NumericalFailure",
    "ShapeError",
    "StatisticKind",
    "backward",
    "forward",
    "update_t",
]
