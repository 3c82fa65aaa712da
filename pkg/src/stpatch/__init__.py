"""Image-like patch datasets from spatial transcriptomics slices."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    CompactGrid,
    ConfigError,
    DataError,
    GeneVocabulary,
    MaskSpec,
    ParseError,
    PatchSample,
    RawSlice,
    Spot,
    build_vocabulary,
)

__all__ = [
    "CompactGrid",
    "ConfigError",
    "DataError",
    "GeneVocabulary",
    "MaskSpec",
    "ParseError",
    "PatchSample",
    "RawSlice",
    "Spot",
    "build_vocabulary",
]
