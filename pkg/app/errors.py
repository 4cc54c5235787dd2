from __future__ import annotations


class PipelineError(ValueError):
    """Base class for every error the pipeline raises on purpose."""

    exit_code = 3


class InvalidArgumentError(PipelineError):
    exit_code = 2


class DataError(PipelineError):
    exit_code = 3


class SchemaError(DataError):
    def __init__(self, column: str, path: str = ""):
        self.column = column
        where = f" in {path}" if path else ""
        super().__init__(f"Missing required column '{column}'{where}")


class RowError(DataError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class LabelError(DataError):
    pass


class NoRegisteredDomainError(DataError):
    reason = "no-registered-domain"


class CorruptModelError(DataError):
    pass


class ConfigMismatchError(PipelineError):
    exit_code = 4


class ModelVersionError(ConfigMismatchError):
    def __init__(self, found: int, supported: int):
        self.found = found
        self.supported = supported
        super().__init__(
            f"Model file format version {found} is not supported "
            f"(this build reads version {supported})"
        )
