"""
Exception hierarchy for numerical failures and invalid experiment input
"""


class NumericalError(RuntimeError):
    """A computation could not be completed to the requested accuracy"""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class QuadratureError(NumericalError):
    """Non-finite integrand values or adaptive refinement that never settled"""


class PositivityError(NumericalError):
    """A Gram matrix, product or density that should be positive is not"""


class NearZeroDivisionError(NumericalError):
    """A denominator fell below the configured floor"""


class ConvergenceError(NumericalError):
    """An iterative procedure stopped without meeting its tolerance"""


class ValidationError(ValueError):
    """Invalid experiment configuration or command-line input"""
