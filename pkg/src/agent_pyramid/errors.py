"""Exception hierarchy shared by every module of the package."""


class PyramidError(Exception):
    """Base class for all errors raised by agent_pyramid."""


class ConfigurationError(PyramidError, ValueError):
    """A run, topology or generator was configured inconsistently."""


class TopologyError(PyramidError, ValueError):
    """Input does not match the wiring of the pyramid (fan-in, ids)."""


class InputError(PyramidError, ValueError):
    """A tick was driven with missing or malformed sensor input."""


class UndefinedInputError(PyramidError, ValueError):
    """A similarity was requested on inputs for which it is not defined."""


class StandbyViolation(PyramidError, RuntimeError):
    """An agent in standby was asked to process input."""
