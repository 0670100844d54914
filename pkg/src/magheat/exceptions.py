"""Exception hierarchy shared by all modules."""


class MagheatError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(MagheatError, ValueError):
    """Invalid user configuration (field strings, orders, grids, flags)."""


class JetEvaluationError(MagheatError, ArithmeticError):
    """A field expression could not be expanded at the requested point."""


class DomainError(MagheatError, ValueError):
    """Argument outside the mathematical domain of an operation (e.g. t <= 0)."""


class NumericalError(MagheatError, RuntimeError):
    """A numerical procedure failed to reach its tolerance."""
