"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

from typing import Optional


class AtomNavError(RuntimeError):
    """Base class of all errors raised by the pipeline. `exit_code` is used by the CLI."""
    exit_code = 2


class DataError(AtomNavError):
    """Input data (sequences, maps, replies, scenes) cannot be used as given."""
    exit_code = 2


class TransportError(AtomNavError):
    exit_code = 3

    def __init__(self, message: str, retries: int = 0):
        super().__init__(f"{message} (after {retries} retries)")
        self.retries = retries


class NoDepth(DataError):
    pass


class DegenerateCloud(DataError):
    pass


class ParseError(DataError):

    def __init__(self, message: str, offset: Optional[int] = None):
        if offset is not None:
            message = f"{message} at byte {offset}"
        super().__init__(message)
        self.offset = offset


class NotASequence(DataError):
    pass


class FrameError(DataError):

    def __init__(self, asset: str, t: float, detail: str = ""):
        msg = f"Frame at t={t} is missing or has an invalid '{asset}' asset"
        if detail:
            msg = f"{msg}: {detail}"
        super().__init__(msg)
        self.asset = asset
        self.t = t


class OrderingError(DataError):
    pass


class OracleMismatch(DataError):
    pass


class ReplayMiss(DataError):
    pass


class UnparseableReply(DataError):

    def __init__(self, raw: str):
        super().__init__(f"No dict literal found in reply: {raw[:200]!r}")
        self.raw = raw


class InsufficientDepth(DataError):
    pass


class AmbiguousFrame(DataError):
    pass


class EmptyScene(DataError):
    pass


class NoMatch(DataError):

    def __init__(self, query: str, best: float):
        super().__init__(f"No location matches '{query}' (best score {best:.3f})")
        self.best = best


class NoParsedSigns(DataError):
    pass


class NothingToGround(DataError):
    pass


class NoSuchStructure(DataError):
    pass


class UngroundableReply(DataError):

    def __init__(self, raw: str):
        super().__init__(f"Reply selects no element of the render: {raw[:200]!r}")
        self.raw = raw


class NotDirectional(DataError):
    pass


class ChoiceDepthMissing(DataError):

    def __init__(self, answer_id: str):
        super().__init__(f"No valid depth at the pixel of choice {answer_id}")
        self.answer_id = answer_id


class InvalidAgentPose(DataError):

    def __init__(self, index: int, detail: str = ""):
        msg = f"Agent pose {index} is outside the navigable ground"
        if detail:
            msg = f"{msg}: {detail}"
        super().__init__(msg)
        self.index = index


class SceneTooSimple(DataError):
    pass
