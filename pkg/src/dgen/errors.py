"""Exception taxonomy shared by every dgen module.

The CLI maps each class to a one-line machine-parsable error report
(`error: <ClassName>: <message>`) and a nonzero exit code, so raise the
most specific class available.
"""


class DgenError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DgenError):
    """Tensor/array dimension mismatch. Messages carry both shapes."""


class ConfigError(DgenError):
    """Invalid configuration value or combination."""


class DataError(DgenError):
    """Malformed or out-of-contract data (labels, datasets, samples)."""


class StateError(DgenError):
    """Operation called in an invalid state (e.g. backward run twice)."""


class TrainingError(DgenError):
    """Training diverged or produced a non-finite loss."""


class EvaluationError(DgenError):
    """A metric was requested on inputs where it is undefined."""


class FormatError(DgenError):
    """Malformed on-disk artifact (raster, checkpoint, config file)."""
