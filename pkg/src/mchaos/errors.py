"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: ArgumentError -> 1, NumericError and
ResourceLimitError -> 2.
"""


class ArgumentError(ValueError):
    """Invalid parameters or inputs."""


class ContractViolation(ValueError):
    """An input broke a documented invariant (e.g. a negative layer value)."""


class NumericError(ArithmeticError):
    """A numerical certificate failed (non-PSD kernel, bad quadrature, ...)."""

    def __init__(self, message, worst=None):
        super().__init__(message)
        self.worst = worst


class ResourceLimitError(MemoryError):
    """A requested object would exceed the configured memory budget."""


class StageError(RuntimeError):
    """A pipeline stage failed; ``cause`` keeps the original error."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
