"""Exception types shared across the simulator.

The CLI maps these onto exit codes: ConfigError -> 1, ModelError and
NumericalError -> 2, AuditError -> 3.
"""


class WormsimError(Exception):
    """Base class for all simulator errors."""


class InputError(WormsimError, ValueError):
    """An operation was called with arguments outside its domain."""


class ConfigError(WormsimError):
    """Scenario configuration is malformed or violates branch rules."""


class ModelError(WormsimError):
    """A model assumption (e.g. monotone link law) fails numerically."""


class NumericalError(WormsimError):
    """An iterative numerical procedure failed to converge."""


class SaturationError(WormsimError):
    """A drop probability reached 1, implying infinite delay."""


class AuditError(WormsimError):
    """A passivity audit could not be evaluated on the given trace."""
