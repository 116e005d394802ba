"""Intersectional explanation-stability auditing and three-objective model selection."""

from mesdaudit.errors import (
    ArtifactError,
    ConfigError,
    ContractError,
    DataError,
    DegenerateError,
    MesdAuditError,
    NumericError,
    SchemaError,
    ShapeError,
    TrainingError,
)

__version__ = "0.1.0"

__all__ = [
    "ArtifactError",
    "ConfigError",
    "ContractError",
    "DataError",
    "DegenerateError",
    "MesdAuditError",
    "NumericError",
    "SchemaError",
    "ShapeError",
    "TrainingError",
    "__version__",
]
