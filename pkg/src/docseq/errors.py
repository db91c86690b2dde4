"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class EncodingError(ValueError):
    pass


class ParseError(ValueError):
    """A token sequence broke the document grammar at ``position``."""

    def __init__(self, position, expected, message=None):
        self.position = position
        self.expected = tuple(expected)
        msg = message or f"grammar violation at position {position}, expected one of {set(self.expected)}"
        super().__init__(msg)


class ContextOverflowError(ValueError):
    pass


class InvalidPromptError(ValueError):
    pass


class TrainingAborted(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CheckpointError(IOError):
    pass


class NotACheckpointError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class InsufficientDataError(ValueError):
    pass


class PairingError(ValueError):
    def __init__(self, message, offenders=()):
        super().__init__(message)
        self.offenders = list(offenders)


class IngestionError(ValueError):
    def __init__(self, message, ids=()):
        super().__init__(message)
        self.ids = list(ids)
