"""Exception hierarchy. Each category maps to a stable CLI exit code."""


class GraspError(Exception):
    exit_code = 1


class ConfigError(GraspError):
    """Invalid configuration, missing paths, or bundle/config mismatch."""

    exit_code = 2


class DataError(GraspError):
    """Malformed or semantically invalid input data."""

    exit_code = 3


class EventParseError(DataError):
    def __init__(self, lineno, message):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


class EventValidationError(DataError):
    def __init__(self, lineno, field, message):
        self.lineno = lineno
        self.field = field
        super().__init__(f"line {lineno}: field {field!r}: {message}")


class TrainingError(GraspError):
    exit_code = 4
