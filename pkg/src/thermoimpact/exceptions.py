"""Exception and warning types raised by thermoimpact."""


class InvalidInputError(ValueError):
    """Raised when arguments violate an operation's preconditions."""


class NonRoundTripError(InvalidInputError):
    """Raised when a round trip is required but the terminal inventory is nonzero.

    The offending terminal inventory is kept in ``residual``.
    """

    def __init__(self, residual, tol):
        self.residual = residual
        self.tol = tol
        super().__init__(
            f"strategy is not a round trip: |q_T| = {residual!r} exceeds tol={tol:.3g}"
        )


class ConvergenceError(RuntimeError):
    """Raised when a quadrature or root finder misses its tolerance."""

    def __init__(self, message, achieved=None):
        self.achieved = achieved
        super().__init__(message)


class AsymmetricImpactWarning(UserWarning):
    """Permanent-impact matrix has a nonzero antisymmetric part.

    For such matrices the round-trip permanent term does not vanish, so the
    nonnegativity of dissipated work is no longer guaranteed.
    """
