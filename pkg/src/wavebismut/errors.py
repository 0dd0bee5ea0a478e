"""Exception hierarchy shared by all modules."""


class WavebismutError(Exception):
    """Base class for all package errors."""


class InvalidParams(WavebismutError):
    """Model parameters are out of range or inconsistent."""


class DegenerateMode(InvalidParams):
    """A damped mode hits the double-eigenvalue locus 4*mu^(1-2a) = rho^2."""

    def __init__(self, n):
        self.n = n
        super().__init__(f"mode {n} has (numerically) degenerate eigenvalues")


class SingularProjection(WavebismutError):
    """Eigenvector matrix too ill-conditioned for the spectral split."""


class InvalidTime(WavebismutError):
    """Time argument outside the admissible window."""


class UnsupportedDirection(WavebismutError):
    """Direction vector not in the domain required by the control variant."""


class WindowMismatch(WavebismutError):
    """Control window and path-bundle window do not line up."""


class UnsupportedFunctional(WavebismutError):
    """Test functional lacks a property (boundedness, smoothness) the
    estimator requires."""


class NonDifferentiableDrift(WavebismutError):
    """First-variation flow requested for a drift without a gradient."""


class GirsanovOverflow(WavebismutError):
    """Log Girsanov weight left the representable range (|log w| > 700)."""


class IllConditionedRegression(WavebismutError):
    """LSMC normal equations condition number above 1e10."""


class NonLipschitzGenerator(WavebismutError):
    """Sampled generator violates its declared Lipschitz/growth constants."""


class BudgetExceeded(WavebismutError):
    """Nested Monte Carlo error bars exceed the requested tolerance."""
