"""Exception types raised across the package."""


class SpectralBundleError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(SpectralBundleError, ValueError):
    """Malformed, non-finite, or dimensionally inconsistent input."""


class UnsupportedFormat(SpectralBundleError, ValueError):
    """A well-formed file that uses features outside the supported subset."""


class RankDeficient(SpectralBundleError, ValueError):
    """The constraint matrices are (numerically) linearly dependent."""


class DegenerateConversion(SpectralBundleError, ValueError):
    """A primal/dual conversion would produce an empty constraint system."""


class SubproblemStall(SpectralBundleError, RuntimeError):
    """The inner quadratic solver hit its iteration cap.

    The best iterate found so far is attached as ``best`` so callers can
    still use it.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
