"""Exception types shared across the toolkit.

Every validation failure carries a short machine-readable ``code`` so that
callers (and the CLI) can tell malformed inputs apart without parsing
messages.
"""

from __future__ import annotations


class BodyBenchError(Exception):
    """Base class for all toolkit errors."""

    code = "error"

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code

    def __str__(self) -> str:
        return f"[{self.code}] {self.args[0]}"


class ValidationError(BodyBenchError, ValueError):
    """Input violates a documented contract (shape, range, schema)."""

    code = "invalid"


class DimensionError(ValidationError):
    code = "dimension_mismatch"


class DegenerateAlignmentError(ValidationError):
    code = "degenerate_alignment"


class ContainerError(ValidationError):
    """Malformed .npy/.npz payload."""

    code = "container"


class SchemaError(ValidationError):
    """Annotation document does not match its schema."""

    code = "schema"


class DivergenceError(BodyBenchError, ArithmeticError):
    """Optimisation produced a non-finite loss."""

    code = "diverged"

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration
