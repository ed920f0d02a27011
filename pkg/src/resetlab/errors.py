"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration/validation problems give
exit status 1, runtime failures (integration, convergence, invalid pulses
discovered mid-run) give exit status 2.
"""


class ResetLabError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ResetLabError, ValueError):
    """A configuration file or constructor argument failed validation."""


class PulseError(ResetLabError, ValueError):
    """A pulse parameter set does not define a valid trajectory."""


class ConvergenceError(ResetLabError, RuntimeError):
    """A numerical routine failed its convergence requirement."""
