"""Exception hierarchy shared by all modules."""


class SqueezeError(Exception):
    """Base class for every error raised by this package."""


class DomainError(SqueezeError, ValueError):
    """Argument outside the domain of a map (zero vector, eps outside ]0, 1], ...)."""


class InvalidProfileError(SqueezeError, ValueError):
    """Thickness profile with nonpositive section measure somewhere."""


class GeometryError(SqueezeError, ValueError):
    """Thin-domain coordinate map is not a bijection."""


class ShapeError(SqueezeError, ValueError):
    """Grid function does not match the grid it is used with."""


class NumericError(SqueezeError, ArithmeticError):
    """Non-finite values produced or supplied."""


class FactorizationError(SqueezeError, ArithmeticError):
    """Mass matrix is not positive definite."""


class IntegrationError(SqueezeError, ArithmeticError):
    """Time integration blew up."""


class NotFoundError(SqueezeError, LookupError):
    """A searched-for index does not exist within the horizon."""


class CertificationError(SqueezeError, ArithmeticError):
    """A numerical spectrum violates a certified resolvent interval."""

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class DissipativityError(SqueezeError, ValueError):
    """Nonlinearity fails the finite-sample dissipativity proxy."""


class CutSelectionError(SqueezeError, LookupError):
    """No spectral cut satisfies the gap inequality in the resolved range."""


class GapViolationError(SqueezeError, ArithmeticError):
    """Lyapunov-Perron iteration failed to contract."""
