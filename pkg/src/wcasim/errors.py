"""Exception types raised across the toolkit."""


class WcasimError(Exception):
    pass


class ParameterError(WcasimError, ValueError):
    """An argument is outside its valid domain."""


class CalibrationError(WcasimError):
    """A calibration table is missing data or violates its invariants."""


class FitError(WcasimError):
    pass


class NumericalError(WcasimError, ArithmeticError):
    """Quadrature did not converge, or an integrand diverged."""


class CoverageError(WcasimError):
    """A schedule does not cover enough of the lifetime distribution's mass."""


class ResourceError(WcasimError):
    pass


class ModelConsistencyError(WcasimError):
    """A simulated quantity violates the energy/timing accounting rules."""


class ConfigError(WcasimError, ValueError):
    pass


class FileFormatError(WcasimError, ValueError):
    """A data file failed to parse or validate.

    ``line`` is the 1-based line number the problem was found on, when known.
    """

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        self.message = message
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class DomainError(WcasimError, ValueError):
    """A function was evaluated outside the support where it is defined."""


class StateError(WcasimError):
    """An operation needs model state that has not been initialized yet."""
