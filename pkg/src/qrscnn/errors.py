"""Exception hierarchy shared by every stage of the pipeline."""


class QrsError(Exception):
    """Base class for all errors raised by :mod:`qrscnn`."""


class EmptyRecord(QrsError, ValueError):
    pass


class MalformedBinary(QrsError, ValueError):
    pass


class ParseError(QrsError, ValueError):
    def __init__(self, path, line_no, token):
        super().__init__(f"{path}:{line_no}: cannot parse {token!r}")
        self.path = path
        self.line_no = line_no
        self.token = token


class NonFiniteSample(QrsError, ValueError):
    pass


class NegativeIndex(QrsError, ValueError):
    pass


class DepthOutOfRange(QrsError, ValueError):
    pass


class ShapeMismatch(QrsError, ValueError):
    pass


class BadMagic(QrsError, ValueError):
    pass


class TruncatedFile(QrsError, ValueError):
    pass


class MissingCache(QrsError, RuntimeError):
    pass


class TilingViolation(QrsError, ValueError):
    pass


class NotEnoughSubjects(QrsError, ValueError):
    pass


class TrainingDiverged(QrsError, RuntimeError):
    """Raised when a batch or validation loss stops being finite."""

    def __init__(self, message, epoch=None, fold=None):
        super().__init__(message)
        self.epoch = epoch
        self.fold = fold
