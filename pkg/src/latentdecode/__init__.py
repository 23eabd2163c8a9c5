"""Two-stage generator-latent extraction and linear brain decoding.

Subpackages are imported on demand; the most used entry points are
re-exported here.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, LatentDecodeError, NumericError  # noqa: E402
from .oracle import (  # noqa: E402
    FeatureExtractorOracle,
    GeneratorOracle,
    GeneratorSpec,
    ToyFeatureExtractor,
    ToyGenerator,
)

__all__ = [
    "__version__",
    "LatentDecodeError",
    "ConfigError",
    "DataError",
    "NumericError",
    "GeneratorSpec",
    "GeneratorOracle",
    "FeatureExtractorOracle",
    "ToyGenerator",
    "ToyFeatureExtractor",
]
