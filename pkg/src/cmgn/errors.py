"""Exception types shared across the package."""


class DegenerateInputError(ValueError):
    """Raised for inputs with no well-defined direction (zero norm)."""


class ShapeError(ValueError):
    """Raised when array dimensions do not line up."""


class NumericalFailure(ArithmeticError):
    """A non-finite value appeared where a finite one was required."""

    def __init__(self, message, sample_index=None, iteration=None):
        super().__init__(message)
        self.sample_index = sample_index
        self.iteration = iteration


class CheckpointFormatError(ValueError):
    """A checkpoint file could not be parsed."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
