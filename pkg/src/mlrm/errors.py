"""Exception hierarchy shared by every mlrm module."""


class MlrmError(Exception):
    """Base class for all errors raised by mlrm."""


class InvalidMetric(MlrmError, ValueError):
    pass


class DirectionMismatch(MlrmError, ValueError):
    pass


class DivisionByZero(MlrmError, ZeroDivisionError):
    pass


class EmptyInput(MlrmError, ValueError):
    pass


class InvalidBins(MlrmError, ValueError):
    pass


class ShapeMismatch(MlrmError, ValueError):
    pass


class DegenerateLabels(MlrmError, ValueError):
    pass


class TooFewSamples(MlrmError, ValueError):
    pass


class InvalidSize(MlrmError, ValueError):
    pass


class CannotInterpolate(MlrmError, ValueError):
    pass


class UndefinedCorrelation(MlrmError, ValueError):
    pass


class InvalidK(MlrmError, ValueError):
    pass


class TrainingFailed(MlrmError, RuntimeError):
    pass


class DivergenceDetected(TrainingFailed):
    """Training loss became non-finite; try a lower learning rate."""


class NoOverlap(MlrmError, ValueError):
    pass


class InvalidKernel(MlrmError, ValueError):
    pass


class ClipTooShort(MlrmError, ValueError):
    pass


class NotRegistered(MlrmError, ValueError):
    pass


class NotFound(MlrmError, KeyError):
    pass


class IncomparableSubmodules(MlrmError, ValueError):
    pass


class ManifestError(MlrmError, ValueError):
    def __init__(self, message, path=None):
        super().__init__(f"{message}: {path}" if path is not None else message)
        self.path = path


class FormatError(MlrmError, ValueError):
    def __init__(self, message, path=None, offset=None):
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte {offset}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.path = path
        self.offset = offset


class ConfigError(MlrmError, ValueError):
    pass


class StageFailed(MlrmError, RuntimeError):
    pass
