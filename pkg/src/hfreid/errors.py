"""Exception types shared across the package.

The CLI maps InputError / ParameterError / StructuralError / ProtocolError
(and I/O failures) to exit code 1 and NumericError to exit code 2.
"""


class InputError(ValueError):
    """Input data violates a documented precondition (bad pixels, labels, paths)."""


class ParameterError(ValueError):
    """A parameter is outside its legal range."""


class StructuralError(ValueError):
    """Shapes or dimensions of otherwise valid inputs do not line up."""


class ProtocolError(RuntimeError):
    """An operation was invoked outside its documented call sequence."""


class NumericError(ArithmeticError):
    """A numeric computation produced non-finite values."""
