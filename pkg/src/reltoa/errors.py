"""Exception and warning types raised across the package."""


class ReltoaError(Exception):
    """Base class for every error raised by this package."""


class InvalidDomain(ReltoaError, ValueError):
    """An integration domain is empty, reversed or not finite."""


class InvalidParameter(ReltoaError, ValueError):
    """A physical or numerical parameter lies outside its allowed range."""


class NonConvergence(ReltoaError, RuntimeError):
    """A numerical scheme failed to reach its tolerance and no result is usable."""


class NonConvergenceWarning(RuntimeWarning):
    """A result was returned although its error estimate exceeds the tolerance."""


class ZeroDetection(ReltoaError, ArithmeticError):
    """The total detection probability is too small to post-select on."""


class GridTooNarrow(ReltoaError, ValueError):
    """A sampling grid does not cover the support it is required to cover."""


class UnphysicalAbsorption(ReltoaError, ValueError):
    """An absorption coefficient exceeds one somewhere on the working range."""


class NegativeDensity(ReltoaError, ValueError):
    """A density matrix has an eigenvalue that is negative beyond round-off."""


class ConfigError(ReltoaError, ValueError):
    """A scenario configuration is malformed; the message names the field."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class EngineError(ReltoaError, RuntimeError):
    """An engine produced non-finite or otherwise invalid output."""


class CacheCorrupt(ReltoaError, RuntimeError):
    """A cached artifact does not match the hash recorded in its manifest."""
