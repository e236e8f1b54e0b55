"""Exception hierarchy.

Validation problems (bad inputs, violated preconditions) derive from
:class:`ValidationError`; failures of a numerical procedure on valid input
derive from :class:`NumericalError`. The CLI maps the two families to
distinct exit codes.
"""


class FracError(Exception):
    """Base class for all library errors."""


class ValidationError(FracError, ValueError):
    """Input violates a documented precondition."""


class NumericalError(FracError, ArithmeticError):
    """A numerical procedure failed on otherwise valid input.

    ``node`` and ``iteration`` locate the failure when known.
    """

    def __init__(self, message, *, node=None, iteration=None):
        super().__init__(message)
        self.node = node
        self.iteration = iteration

    def details(self):
        out = {}
        if self.node is not None:
            out["node"] = int(self.node)
        if self.iteration is not None:
            out["iteration"] = int(self.iteration)
        return out


class GammaOverflowError(NumericalError):
    """A Gamma-weighted coefficient is not representable; lower the truncation."""


class ConvergenceError(NumericalError):
    pass


class SingularSystemError(NumericalError):
    pass


class DomainFault(ValidationError):
    """Expression evaluated outside the domain of one of its operations."""


class ExprSyntaxError(ValidationError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset
