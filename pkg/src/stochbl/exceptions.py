"""Exception hierarchy shared by the solvers, samplers and the CLI."""


class StochBLError(Exception):
    """Base class for all package errors."""


class ParameterError(StochBLError, ValueError):
    """Invalid physical or numerical parameter."""


class ConstructionError(StochBLError):
    """The entropy hull of the flux could not be built."""


class ConfigurationError(StochBLError):
    """A solver configuration is unusable (e.g. CFL violation)."""


class SamplingError(StochBLError):
    """Random sampling failed (e.g. rejection budget exhausted)."""


class NumericalError(StochBLError):
    """A numerical routine failed (factorization, NaN, ...)."""


class TrainingError(NumericalError):
    """Training diverged or produced non-finite values.

    ``state`` carries the last finite snapshot of whatever was being trained
    so callers can inspect or resume from it.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class FitError(StochBLError):
    """A regression could not be fitted from the supplied data."""


class ValidationError(StochBLError, ValueError):
    """Configuration document failed validation; ``errors`` lists every problem."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
