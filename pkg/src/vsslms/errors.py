"""Exception types shared across the package."""


class VSSLMSError(Exception):
    """Base class for all package errors."""


class ConfigError(VSSLMSError, ValueError):
    """Invalid parameters or experiment configuration."""


class NumericalError(VSSLMSError):
    """Numerical failure: divergence or instability."""


class InstabilityError(NumericalError):
    """A recursion or steady state is not mean-square stable."""

    def __init__(self, message, radius=None):
        super().__init__(message)
        self.radius = radius


class DivergenceError(NumericalError):
    """A trajectory blew up.

    ``iteration`` is the first iteration at which the blow-up was detected and
    ``partial`` optionally carries whatever was computed before it.
    """

    def __init__(self, message, iteration=None, partial=None):
        super().__init__(message)
        self.iteration = iteration
        self.partial = partial
