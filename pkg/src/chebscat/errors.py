"""Exception types shared across the package."""


class ChebscatError(Exception):
    """Base class for all package-specific errors."""


class DegeneratePatch(ChebscatError):
    """Surface Jacobian vanished (or nearly so) at an evaluation point."""


class ParseError(ChebscatError):
    """Malformed mesh or config file."""


class DimensionError(ChebscatError):
    """Array/grid size does not match a declared shape."""


class EmptyInput(ChebscatError):
    """An operation received an empty point set."""


class DomainError(ChebscatError):
    """Parametric coordinate outside [-1, 1]."""


class SingularPoint(ChebscatError):
    """Kernel evaluated at (or too close to) its singular point."""


class NewtonDivergence(ChebscatError):
    """Closest-point Newton iteration failed to converge."""


class RankOverflow(ChebscatError):
    """ACA rank exceeded the low-rank budget for a block."""


class SingularDiagonal(ChebscatError):
    """A dense diagonal pivot block is numerically singular."""


class CapExceeded(ChebscatError):
    """Problem size exceeds the configured dense-assembly cap."""


class NoConvergence(ChebscatError):
    """Iterative solver failed to reach the requested tolerance."""


class OffSurface(ChebscatError):
    """Point handed to the sphere-series oracle does not lie on the sphere."""


class NoResonanceInInterval(ChebscatError):
    """Resonance search interval contains no interior peak."""


class TooCloseToSurface(ChebscatError):
    """Field evaluation point violates the far-quadrature standoff."""


class UnsupportedExcitation(ChebscatError):
    """Requested post-processing is undefined for this excitation."""


class ConfigError(ChebscatError):
    """Run configuration is invalid; message names the offending key."""


class TruncationWarning(UserWarning):
    """Series truncation tail estimate above the trusted threshold."""
