from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

from ..episode import Clip, Episode, Question


class BackendError(RuntimeError):
    """A backend call failed. ``attempts`` is the number of requests made."""

    retryable = False

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class AuthError(BackendError):
    pass


class RateLimited(BackendError):
    retryable = True


class BackendTimeout(BackendError):
    retryable = True


class ServerError(BackendError):
    retryable = True


class MalformedResponse(BackendError):
    pass


class UnknownQuestion(KeyError):
    pass


@runtime_checkable
class MasterBackend(Protocol):
    def generate(self, messages: list[dict], stop: Sequence[str], *, question_id: str, step: int) -> str:
        """One master turn given the chat transcript so far."""


@runtime_checkable
class GroundingBackend(Protocol):
    def ground(self, question: Question, episode: Episode) -> str:
        """Return the clip id (or clip tag) localizing ``question``."""


@runtime_checkable
class VisionBackend(Protocol):
    def describe(self, query: str, clip: Clip, window_clips: list[Clip], *, question_id: str) -> str:
        """Textual observation of the frames in ``window_clips`` answering ``query``."""


@dataclass
class Backends:
    master: MasterBackend
    grounding: GroundingBackend
    vision: VisionBackend

    def start_question(self, question_id: str, rollout: int = 0) -> None:
        """Reset per-question state on backends that keep any (scripted ones do)."""
        seen = set()
        for b in (self.master, self.grounding, self.vision):
            hook = getattr(b, "start_question", None)
            if hook is not None and id(b) not in seen:
                seen.add(id(b))
                hook(question_id, rollout)

