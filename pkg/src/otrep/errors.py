class OTRepError(Exception):
    """Base class for errors raised by this package."""


class InputError(OTRepError, ValueError):
    """Malformed or inconsistent input (shapes, marginals, configuration)."""


class SolverError(OTRepError, ArithmeticError):
    """A numerical routine failed or did not converge."""
