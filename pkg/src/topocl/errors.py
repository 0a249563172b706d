"""Exception hierarchy shared across the package."""


class TopoCLError(Exception):
    """Base class for every error raised by topocl."""


# topology
class DisconnectedGraph(TopoCLError, ValueError):
    pass


class InvalidGraph(TopoCLError, ValueError):
    pass


class CardinalityMismatch(TopoCLError, ValueError):
    pass


class NonPositiveWeight(TopoCLError, ValueError):
    pass


class TooLarge(TopoCLError, ValueError):
    pass


# networks
class ShapeMismatch(TopoCLError, ValueError):
    pass


class InvalidLabel(TopoCLError, ValueError):
    pass


class InvalidSpec(TopoCLError, ValueError):
    pass


class InvalidEdgeId(TopoCLError, IndexError):
    pass


class CheckpointError(TopoCLError, ValueError):
    pass


# data
class IdxReadError(TopoCLError, OSError):
    """Raised when an IDX file is missing or ends early.

    ``offset`` is the byte offset at which reading failed, or None when the
    file could not be opened at all.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class BadMagic(TopoCLError, ValueError):
    pass


class CountMismatch(TopoCLError, ValueError):
    pass


class InsufficientData(TopoCLError, ValueError):
    pass


# metrics
class IncompleteMatrix(TopoCLError, ValueError):
    pass


class UndefinedForSingleTask(TopoCLError, ValueError):
    pass
