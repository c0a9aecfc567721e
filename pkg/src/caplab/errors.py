"""Exception hierarchy shared across the package.

Every error carries a short machine-parsable ``category`` that the CLI
prints as ``error:<category>: <message>`` before exiting with status 1.
"""


class CaplabError(Exception):
    """Base class for all errors raised by this package."""

    category = "runtime"


class InvalidInputError(CaplabError):
    """An array, image, or file violates a documented precondition."""

    category = "invalid-input"


class InvalidConfigError(CaplabError):
    """A configuration value is out of range or inconsistent."""

    category = "invalid-config"


class IngestionError(CaplabError):
    """A file or dataset on disk could not be read or is malformed."""

    category = "ingestion"


class ModelBuildError(CaplabError):
    """A model configuration cannot be realized as a network."""

    category = "model-build"


class NumericError(CaplabError):
    """A non-finite value appeared where the pipeline requires finite math."""

    category = "numeric"


class InternalConsistencyError(CaplabError):
    """An internal invariant was violated; indicates a bug, not bad input."""

    category = "internal"
