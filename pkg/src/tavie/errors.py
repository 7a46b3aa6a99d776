"""Exception types raised across the package."""


class TavieError(Exception):
    """Base class for all package errors."""


class DomainError(TavieError, ValueError):
    """An argument lies outside the support or domain of an operation."""


class InvariantError(TavieError, ValueError):
    """A value violates a structural invariant (non-PD matrix, b <= 0, ...)."""


class NumericalError(TavieError, ArithmeticError):
    """A numerical routine failed (Cholesky breakdown, ELBO decrease)."""


class QuadratureError(TavieError, ArithmeticError):
    """Grid quadrature left too much mass at the grid boundary."""


class ParseError(TavieError, ValueError):
    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
