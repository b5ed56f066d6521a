"""Exception hierarchy shared by all modules."""


class AKPZError(Exception):
    """Base class for library errors."""


class DomainError(AKPZError, ValueError):
    """An argument lies outside the domain of an operation."""


class CapacityError(AKPZError):
    """A chaos degree or enumeration budget would be exceeded."""


class ConfigError(AKPZError, ValueError):
    """Invalid or inconsistent configuration."""


class NumericalError(AKPZError, ArithmeticError):
    """A numerical procedure failed (non-convergence, overflow)."""


class IntegrationBlowup(NumericalError):
    """Non-finite values appeared during time integration."""


class ResolutionError(AKPZError):
    """A record does not have the time resolution an operation needs."""
