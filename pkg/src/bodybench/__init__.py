"""Whole-body pose-and-shape evaluation and data-curation toolkit."""

from .errors import (BodyBenchError, ContainerError, DegenerateAlignmentError, DimensionError,
                     DivergenceError, SchemaError, ValidationError)

__version__ = "0.1.0"

__all__ = ["BodyBenchError", "ContainerError", "DegenerateAlignmentError", "DimensionError",
           "DivergenceError", "SchemaError", "ValidationError", "__version__"]
