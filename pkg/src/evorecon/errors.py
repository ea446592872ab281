"""Exception types shared across the package."""


class EvoreconError(Exception):
    """Base class for domain errors (CLI maps these to exit code 1)."""


class GenomeParseError(EvoreconError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class CompileError(EvoreconError, ValueError):
    pass


class ShapeError(EvoreconError, ValueError):
    pass


class TensorFileError(EvoreconError, ValueError):
    pass


class IntegrityError(EvoreconError):
    """Raised when a checkpoint fails its checksum or header checks."""
