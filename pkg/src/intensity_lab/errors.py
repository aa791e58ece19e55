"""Exception hierarchy shared across the package."""


class IntensityLabError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(IntensityLabError, ValueError):
    """Invalid object, policy, simulation or serving configuration."""


class InvalidLevelsError(IntensityLabError, ValueError):
    def __init__(self, message, position=None):
        super().__init__(message)
        self.position = position


class UndefinedRateError(IntensityLabError, ZeroDivisionError):
    """A factor, share or ratio whose denominator is zero."""


class DegenerateSeriesError(IntensityLabError, ValueError):
    """Series that cannot be normalized or correlated (constant, too short)."""


class CalibrationError(IntensityLabError, ValueError):
    pass


class FixtureParseError(IntensityLabError, ValueError):
    def __init__(self, message, line=None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line
