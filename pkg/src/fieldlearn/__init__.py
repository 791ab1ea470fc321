"""Neural vector-field models that satisfy linear operator constraints by construction."""

from .diffops import OperatorMatrix, OperatorPoly, compose, format_operator, is_zero, parse_operator
from .ansatz import find_transformation, search_transformation
from .errors import (CapabilityError, ConfigError, DataError, DomainError, FieldLearnError,
                     ParseError, ShapeError, TrainingAborted)
from .model import ConstrainedModel, StandardModel, constraint_residual
from .network import MlpSpec
from .training import TrainConfig, train

__all__ = [
    "OperatorMatrix", "OperatorPoly", "compose", "format_operator", "is_zero", "parse_operator",
    "find_transformation", "search_transformation",
    "CapabilityError", "ConfigError", "DataError", "DomainError", "FieldLearnError",
    "ParseError", "ShapeError", "TrainingAborted",
    "ConstrainedModel", "StandardModel", "constraint_residual", "MlpSpec", "TrainConfig", "train",
]

__version__ = "0.1.0"
