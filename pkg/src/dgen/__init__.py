"""dgen: a desk-scale diffusion generalist for dense vision tasks.

Dense prediction targets (segmentation, depth, restoration) are re-encoded
as RGB images and produced by one conditional pixel-space diffusion model
selected by a task instruction.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataError,
    DgenError,
    EvaluationError,
    FormatError,
    ShapeError,
    StateError,
    TrainingError,
)

__all__ = [
    "ConfigError", "DataError", "DgenError", "EvaluationError",
    "FormatError", "ShapeError", "StateError", "TrainingError",
    "__version__",
]
