"""Exception and warning types raised across the pipeline.

Validation problems derive from :class:`ValidationError` (a ``ValueError``),
file problems from :class:`IoError`.  The CLI maps the former to exit code 1
and the latter to exit code 2.
"""


class PainFusionError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PainFusionError, ValueError):
    pass


class IoError(PainFusionError, OSError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class MissingAu(ValidationError):
    pass


class OutOfRange(ValidationError):
    pass


class EmptyDataset(ValidationError):
    pass


class DegenerateAnchors(ValidationError):
    pass


class OutOfBounds(ValidationError):
    pass


class DegenerateAngle(ValidationError):
    pass


class BadPatch(ValidationError):
    pass


class DegenerateRegion(ValidationError):
    pass


class EmptySequence(ValidationError):
    pass


class DimMismatch(ValidationError):
    pass


class MissingFrames(ValidationError):
    def __init__(self, message, frame_ids=(), channel=None):
        super().__init__(message)
        self.frame_ids = tuple(frame_ids)
        self.channel = channel


class BadInput(ValidationError):
    pass


class NumericalFailure(PainFusionError, ArithmeticError):
    pass


class InsufficientSubjects(ValidationError):
    pass


class BadMethod(ValidationError):
    pass


class BadWindow(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class DegenerateModel(UserWarning):
    """Every basis was pruned; a bias-only model was returned instead."""


class InnerLoopInfeasible(UserWarning):
    """Fewer than two training subjects; kernel width fell back to the median heuristic."""


class DegenerateAngleWarning(UserWarning):
    pass


class UndersampleFloorWarning(UserWarning):
    pass
