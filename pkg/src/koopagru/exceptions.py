"""Exception hierarchy shared by every stage of the pipeline."""


class KoopAGRUError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(KoopAGRUError, ValueError):
    pass


class DatasetDimensionError(KoopAGRUError, ValueError):
    pass


class IoError(KoopAGRUError, OSError):
    pass


class DataQualityError(KoopAGRUError, ValueError):
    pass


class WindowingError(KoopAGRUError, ValueError):
    pass


class SpecError(KoopAGRUError, ValueError):
    pass


class UnstableSystemError(SpecError):
    pass


class SpectralError(KoopAGRUError, ValueError):
    pass


class ShapeError(KoopAGRUError, ValueError):
    pass


class NumericalError(KoopAGRUError, ArithmeticError):
    """Non-finite values appeared in inputs, activations or the loss."""


class TrainError(KoopAGRUError, RuntimeError):
    pass


class CalibrationError(KoopAGRUError, ValueError):
    pass
