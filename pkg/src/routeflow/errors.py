"""Exception and warning types shared across the package.

The exceptions form three rough bands, mirrored by the CLI exit codes:
usage problems are ordinary ``ValueError``s raised close to the call
site, data problems derive from :class:`ValidationError`, and failures
of the numerical machinery (infeasibility, missing unimodular bases,
enumeration overflow) derive from :class:`NumericalError`.
"""


class RouteflowError(Exception):
    """Base class for all package-specific errors."""


class ParseError(RouteflowError):
    """An input file could not be parsed."""


class ValidationError(RouteflowError):
    """Parsed input violates a structural requirement."""


class DimensionError(ValidationError):
    """Two inputs that must agree in shape do not."""


class NumericalError(RouteflowError):
    """A numerical procedure could not produce a result."""


class SingularMatrixError(NumericalError):
    """A matrix required to be invertible has determinant zero."""


class CannotCompleteBasisError(NumericalError):
    """No set of columns completes an invertible basis block."""


class NoUnimodularBasisError(NumericalError):
    """The basis search exhausted its budget without finding a
    unimodular block."""


class InfeasibleError(NumericalError):
    """The constraint set has no admissible point."""


class RationallyInfeasibleError(InfeasibleError):
    """Even the rational relaxation of the constraints is empty."""


class IntegerInfeasibleError(InfeasibleError):
    """The rational relaxation is nonempty but contains no integer
    point."""


class EnumerationCapError(NumericalError):
    """Feasible-set enumeration exceeded the configured cap."""

    def __init__(self, cap, message=None):
        self.cap = cap
        super().__init__(message or f"feasible set exceeds cap of {cap} points")


class StuckChainWarning(UserWarning):
    """A sampling phase completed without changing any coordinate."""


class DegenerateInformationWarning(UserWarning):
    """The observed information matrix was singular; a pseudo-inverse
    was used for standard errors."""
