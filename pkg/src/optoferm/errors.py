"""Exception hierarchy shared by the library and the CLI."""


class OptofermError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for this failure."""

    exit_code = 1


class DataError(OptofermError, ValueError):
    exit_code = 2


class DomainError(OptofermError, ValueError):
    """Input outside the mathematical domain of an operation."""

    exit_code = 2


class NumericalError(OptofermError, ArithmeticError):
    exit_code = 3


class TrainingError(NumericalError):
    exit_code = 3


class InfeasibleError(OptofermError):
    """No point satisfying the constraints was found.

    ``report`` carries the best residuals seen so the caller can tell how far
    off the search ended up.
    """

    exit_code = 4

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


class ConfigError(OptofermError, ValueError):
    exit_code = 5


EXIT_CODES = {
    "ok": 0,
    "data": DataError.exit_code,
    "numerical": NumericalError.exit_code,
    "infeasible": InfeasibleError.exit_code,
    "config": ConfigError.exit_code,
}
