"""Exception hierarchy shared by every stage of the pipeline."""


class DGRCLError(Exception):
    """Base class for all errors raised by this package."""


# numeric core
class ShapeMismatch(DGRCLError, ValueError):
    pass


class NonFinite(DGRCLError, ValueError):
    pass


class NotScalar(DGRCLError, ValueError):
    pass


class DetachedTensor(DGRCLError, RuntimeError):
    pass


# market data
class MalformedRow(DGRCLError, ValueError):
    pass


class CalendarMismatch(DGRCLError, ValueError):
    pass


class NegativePrice(DGRCLError, ValueError):
    pass


class TooShort(DGRCLError, ValueError):
    pass


class BadFractions(DGRCLError, ValueError):
    pass


class EmptySplit(BadFractions):
    """A chronological split would leave one of the ranges empty."""


class UnknownTicker(DGRCLError, KeyError):
    pass


class SelfRelation(DGRCLError, ValueError):
    pass


# graph builder / enhancer
class EmptySeries(DGRCLError, ValueError):
    pass


class NoRoot(DGRCLError, ValueError):
    pass


class Infeasible(DGRCLError, ValueError):
    pass


class UnknownMetric(DGRCLError, ValueError):
    pass


# model
class AsymmetricInput(DGRCLError, ValueError):
    pass


class Misaligned(DGRCLError, ValueError):
    pass


# evaluation / cli
class EmptyEvaluation(DGRCLError, ValueError):
    pass


class ConfigInvalid(DGRCLError, ValueError):
    pass


class StageFailed(DGRCLError, RuntimeError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
