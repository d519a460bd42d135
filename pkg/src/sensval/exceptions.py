"""Exception hierarchy shared by every sensval module."""


class SensvalError(ValueError):
    """Base class for all sensval errors."""


class DomainError(SensvalError):
    """An argument lies outside the domain of a function."""


class BracketError(SensvalError):
    """A root-finding bracket does not contain a sign change."""


class IntegrationError(SensvalError):
    """Quadrature failed or met a non-finite integrand value."""


class ValidationError(SensvalError):
    """Input data violate a structural invariant."""


class SizeError(SensvalError):
    """A computation needs more observations than were supplied."""


class BudgetError(SensvalError):
    """Exact enumeration was requested for a problem that is too large."""


class DegenerateSampleError(SensvalError):
    """All scores are zero, so the signed score statistic is undefined."""


class ParseError(SensvalError):
    """An input file or text specification could not be parsed."""


class RegistryError(SensvalError):
    """An unknown simulation job was requested."""
