class RepselError(Exception):
    """Base class for errors raised by this package."""


class DataFormatError(RepselError, ValueError):
    """Malformed dataset, image or config file."""


class ShapeError(RepselError, ValueError):
    pass


class SolverError(RepselError, ArithmeticError):
    """Raised when an iterative solver produces non-finite values."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ConvergenceError(RepselError, RuntimeError):
    pass


class ConfigError(RepselError, ValueError):
    pass


class InsufficientDataError(RepselError, ValueError):
    """Not enough images to fill a requested pool."""

    def __init__(self, deficits):
        self.deficits = list(deficits)
        shown = ", ".join(
            f"(person={p}, camera={c}: have {have}, need {need})" for p, c, have, need in self.deficits[:10]
        )
        more = "" if len(self.deficits) <= 10 else f" and {len(self.deficits) - 10} more"
        super().__init__(f"insufficient images for {len(self.deficits)} (person, camera) pairs: {shown}{more}")
