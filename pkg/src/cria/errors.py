"""Exception types raised across the package."""


class CriaError(Exception):
    """Base class for package errors."""


class DimensionError(CriaError, ValueError):
    pass


class RankError(DimensionError):
    pass


class NoTapeError(CriaError, RuntimeError):
    pass


class OracleError(CriaError, ArithmeticError):
    pass


class DegenerateVarianceError(CriaError, ArithmeticError):
    pass


class EmptySignalError(CriaError, ValueError):
    pass


class CutoffError(CriaError, ValueError):
    pass


class TooShortError(CriaError, ValueError):
    pass


class PairingError(DimensionError):
    pass


class RegistryError(CriaError, KeyError):
    pass


class ConfigError(CriaError, ValueError):
    pass


class TemperatureError(CriaError, ValueError):
    pass


class BatchSizeError(CriaError, ValueError):
    pass


class LabelError(CriaError, ValueError):
    pass


class DivergenceError(CriaError, FloatingPointError):
    def __init__(self, step, value):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value


class UndefinedMetricError(CriaError, ValueError):
    pass


class NoiseSpecError(CriaError, ValueError):
    pass


class EmptyTableError(CriaError, ValueError):
    pass


class ParseError(CriaError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataFormatError(CriaError, ValueError):
    pass


class CheckpointError(CriaError, ValueError):
    pass
