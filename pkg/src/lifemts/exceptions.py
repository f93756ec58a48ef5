class InputError(ValueError):
    """Raised when user-supplied data or parameters violate a contract."""


class NumericalError(ArithmeticError):
    """Raised when a computation produces non-finite values."""
