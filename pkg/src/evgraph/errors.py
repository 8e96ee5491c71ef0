"""Exception types shared across the toolkit."""


class EvgraphError(Exception):
    """Base class for all toolkit errors."""


# --- event parsing / windowing ---

class MalformedRecord(EvgraphError):
    """An event record could not be decoded; carries line number or byte offset."""

    def __init__(self, message, *, line=None, offset=None):
        loc = f" (line {line})" if line is not None else f" (offset {offset})" if offset is not None else ""
        super().__init__(message + loc)
        self.line = line
        self.offset = offset


class CoordinateOutOfBounds(EvgraphError):
    pass


class EmptyStream(EvgraphError):
    pass


class ZeroWindow(EvgraphError):
    pass


# --- frame simulation ---

class DimensionMismatch(EvgraphError):
    pass


class TooFewFrames(EvgraphError):
    pass


class InvalidSpec(EvgraphError):
    pass


# --- graph serialization ---

class BadMagic(EvgraphError):
    pass


class TruncatedPayload(EvgraphError):
    pass


# --- autodiff ---

class ShapeMismatch(EvgraphError):
    pass


class UnsortedSegments(EvgraphError):
    pass


class NonScalarLoss(EvgraphError):
    pass


# --- network / training ---

class NonFiniteActivation(EvgraphError):
    pass


class EmptyGraph(EvgraphError):
    pass


class SingleRowTrainBatch(EvgraphError):
    pass


class BadLabel(EvgraphError):
    pass


class DivergedLoss(EvgraphError):
    pass


class EmptyTestSet(EvgraphError):
    pass


# --- benchmarking ---

class TimerTooCoarse(EvgraphError):
    pass
