"""Exception types shared across the package.

The CLI maps these onto its exit codes, so keep the hierarchy flat.
"""


class ShapeError(ValueError):
    """Operand dimensions are incompatible."""


class ConfigError(ValueError):
    """A configuration value is missing or invalid."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class DataError(ValueError):
    """Input data cannot be read or violates its schema."""


class IntegrityError(ValueError):
    """A checkpoint file is corrupt, truncated or inconsistent with its config."""


class VersionError(IntegrityError):
    """A checkpoint was written with an unsupported format version."""


class ArtifactMismatchError(ValueError):
    """Two run artifacts (checkpoint, vocab, dataset) do not belong together."""
