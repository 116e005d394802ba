"""Exception hierarchy.

Every error carries a short machine-readable ``kind`` and the CLI exit code it
maps to (2 input/config, 3 artifact, 4 numeric/training).
"""

from __future__ import annotations


class MesdAuditError(Exception):
    kind = "error"
    exit_code = 1


class ConfigError(MesdAuditError, ValueError):
    kind = "config"
    exit_code = 2


class SchemaError(MesdAuditError, ValueError):
    kind = "schema"
    exit_code = 2


class DataError(MesdAuditError, ValueError):
    kind = "data"
    exit_code = 2


class InputIOError(MesdAuditError, OSError):
    kind = "io"
    exit_code = 2


class ShapeError(MesdAuditError, ValueError):
    kind = "shape"
    exit_code = 2


class ContractError(MesdAuditError, ValueError):
    kind = "contract"
    exit_code = 2


class DegenerateError(MesdAuditError, ValueError):
    """Raised when a metric is undefined for the given input (e.g. one group)."""

    kind = "degenerate"
    exit_code = 4


class ArtifactError(MesdAuditError):
    kind = "artifact"
    exit_code = 3


class NumericError(MesdAuditError, ArithmeticError):
    kind = "numeric"
    exit_code = 4


class TrainingError(NumericError):
    kind = "training"

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
