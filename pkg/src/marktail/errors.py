"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: validation problems exit with 2,
missing solutions with 3 and numerical breakdowns with 4.
"""


class MarktailError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ValidationError(MarktailError, ValueError):
    """Input does not satisfy a documented invariant."""

    exit_code = 2


class ReducibleMatrixError(ValidationError):
    """A matrix expected to be irreducible is not.

    ``source`` cannot reach ``target`` in the support graph.
    """

    def __init__(self, message, source=None, target=None):
        super().__init__(message)
        self.source = source
        self.target = target


class OutOfDomainError(ValidationError):
    """An MGF was evaluated outside its domain of finiteness."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class NoSolutionError(MarktailError):
    """``lambda(s) = 1`` has no root on the requested side.

    ``endpoint`` is the last bracket point examined and ``lambda_value``
    the spectral radius there.
    """

    exit_code = 3

    def __init__(self, message, endpoint=None, lambda_value=None):
        super().__init__(message)
        self.endpoint = endpoint
        self.lambda_value = lambda_value


class DomainExhaustedError(NoSolutionError):
    """The MGF domain ends before ``lambda`` crosses one."""


class NoEquilibriumError(NoSolutionError):
    """Market clearing cannot be reached inside the admissible wage set."""


class NumericalError(MarktailError, ArithmeticError):
    """An iterative routine failed to reach its tolerance."""

    exit_code = 4
