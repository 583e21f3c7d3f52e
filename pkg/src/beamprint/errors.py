"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes, so raising the right class
matters: configuration problems exit 1, data problems exit 2, training
divergence exits 3.
"""


class BeamprintError(Exception):
    """Base class for all package-specific failures."""


class ConfigurationError(BeamprintError):
    """Invalid scenario, feature, model, or experiment configuration."""


class DataError(BeamprintError):
    """Dataset-level failure: empty grids, empty filters, bad inputs."""


class DatasetParseError(DataError):
    """A dataset or measurement file could not be parsed.

    Carries enough context (path, line number, field) to point at the
    offending spot in the file.
    """

    def __init__(self, message, path=None, line=None, field=None):
        ctx = []
        if path is not None:
            ctx.append(str(path))
        if line is not None:
            ctx.append(f"line {line}")
        if field is not None:
            ctx.append(f"field {field!r}")
        if ctx:
            message = f"{message} ({', '.join(ctx)})"
        super().__init__(message)
        self.path = path
        self.line = line
        self.field = field


class FeatureExtractionError(DataError):
    """A record cannot produce the requested feature vector."""

    def __init__(self, reason, message):
        super().__init__(message)
        # machine-readable skip reason, used for counted skips
        self.reason = reason


class TrainingDivergenceError(BeamprintError):
    """Training produced a non-finite loss."""
