"""Exception types shared across the package."""


class PulseCommError(Exception):
    """Base class for all errors raised by pulsecomm."""


class DomainError(PulseCommError, ValueError):
    """An argument lies outside the domain of an operation."""


class FormatError(PulseCommError, ValueError):
    """A binary or textual encoding could not be decoded."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (word offset {offset})"
        super().__init__(message)
        self.offset = offset


class CapacityError(PulseCommError):
    """A memory or buffer budget would be exceeded."""


class ParseError(PulseCommError, ValueError):
    """A text input file is malformed."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{':'.join(where)}: {message}"
        super().__init__(message)
        self.line = line
        self.path = path


class ValidationError(PulseCommError, ValueError):
    """Input parsed but violates a semantic rule."""


class ConsistencyError(PulseCommError):
    """Analysis inputs contradict each other (e.g. more traced than sent)."""


class SimulationError(PulseCommError, RuntimeError):
    """Internal invariant violation inside the event engine."""


class ConfigError(PulseCommError, ValueError):
    """Invalid run configuration; carries the offending key path."""

    def __init__(self, message: str, key_path: str | None = None):
        if key_path:
            message = f"{key_path}: {message}"
        super().__init__(message)
        self.key_path = key_path
