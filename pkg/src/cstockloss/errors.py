"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class CstockError(Exception):
    exit_code = 1


class InputError(CstockError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 1

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class GridError(InputError):
    pass


class EstimationError(CstockError, ValueError):
    """An estimator cannot be evaluated on the given sample (e.g. n < 2)."""

    exit_code = 2


class DegenerateModelError(EstimationError):
    """A working model cannot be fitted, typically an empty FCL class."""


class ValidationFailure(CstockError):
    exit_code = 3
