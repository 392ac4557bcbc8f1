"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, numerical failures
(DomainError, DivergenceError, NumericalError) -> 2, DataError and other
I/O problems -> 3.
"""


class ArksError(Exception):
    """Base class for all package errors."""


class ConfigError(ArksError):
    """Invalid or inconsistent configuration."""


class DataError(ArksError):
    """Malformed input data (CSV parse failures, empty files)."""


class ShapeMismatch(ArksError):
    """Operands with incompatible shapes."""


class DomainError(ArksError):
    """Input outside an operation's mathematical domain (log of <= 0, ...)."""


class DivergenceError(ArksError):
    """An inner maximization objective exceeded its divergence ceiling."""


class PossiblyUnboundedError(DivergenceError):
    """A grid envelope is still growing at the grid boundary."""


class NumericalError(ArksError):
    """A computation produced non-finite values or a solver failed."""
