"""Deterministic simulated backends driven by a JSON fixture file.

Fixture layout::

    {
      "grounding_error_rate": 0.0,
      "grounding_error_radius": null,
      "rng_seed": 0,
      "questions": {
        "<question_id>": {
          "gold_clip_id": "...",
          "vision_facts": [["trigger substring", "response text"], ...],
          "master_script": ["<think>...</think><request_grounding>", ...],
          "master_policy": "script" | "evidence",
          "fallback_answer": "a4",
          "grounding_script": ["clip id", ...]
        }
      }
    }
"""

from __future__ import annotations

import json
import random
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

from ..actions import ActionKind, parse_action
from ..episode import Clip, Episode, Question
from .base import Backends, UnknownQuestion

NO_VISUAL_DETAIL = "No relevant visual detail was found for this query in the localized clip."

EVIDENCE_TEMPLATE = "Clue {question_id}: the answer is (a\\d)"


@dataclass
class FixtureEntry:
    gold_clip_id: str
    vision_facts: list[tuple[str, str]] = field(default_factory=list)
    master_script: list[str] = field(default_factory=list)
    master_policy: str = "script"
    fallback_answer: str = "a0"
    grounding_script: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {
            "gold_clip_id": self.gold_clip_id,
            "vision_facts": [list(f) for f in self.vision_facts],
            "master_script": list(self.master_script),
        }
        if self.master_policy != "script":
            d["master_policy"] = self.master_policy
            d["fallback_answer"] = self.fallback_answer
        if self.grounding_script:
            d["grounding_script"] = list(self.grounding_script)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FixtureEntry":
        policy = d.get("master_policy", "script")
        if policy not in ("script", "evidence"):
            raise ValueError(f"unknown master_policy {policy!r}")
        return cls(
            gold_clip_id=d["gold_clip_id"],
            vision_facts=[(str(t), str(r)) for t, r in d.get("vision_facts", [])],
            master_script=list(d.get("master_script", [])),
            master_policy=policy,
            fallback_answer=d.get("fallback_answer", "a0"),
            grounding_script=list(d.get("grounding_script", [])),
        )


@dataclass
class ScriptedFixture:
    questions: dict[str, FixtureEntry]
    grounding_error_rate: float = 0.0
    grounding_error_radius: Optional[int] = None
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.grounding_error_rate <= 1.0:
            raise ValueError("grounding_error_rate must lie in [0, 1]")

    def entry(self, question_id: str) -> FixtureEntry:
        try:
            return self.questions[question_id]
        except KeyError:
            raise UnknownQuestion(question_id) from None

    def problems(self) -> list[str]:
        """Entries whose master script does not end with an answer turn."""
        out = []
        for qid, e in sorted(self.questions.items()):
            if e.master_policy == "script":
                last = parse_action(e.master_script[-1]) if e.master_script else None
                if last is None or last.kind is not ActionKind.ANSWER:
                    out.append(f"{qid}: master_script does not end with an <answer> turn")
        return out

    def to_dict(self) -> dict:
        return {
            "grounding_error_rate": self.grounding_error_rate,
            "grounding_error_radius": self.grounding_error_radius,
            "rng_seed": self.rng_seed,
            "questions": {qid: e.to_dict() for qid, e in self.questions.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScriptedFixture":
        return cls(
            questions={qid: FixtureEntry.from_dict(e) for qid, e in d["questions"].items()},
            grounding_error_rate=float(d.get("grounding_error_rate", 0.0)),
            grounding_error_radius=d.get("grounding_error_radius"),
            rng_seed=int(d.get("rng_seed", 0)),
        )

    def with_noise(self, **changes) -> "ScriptedFixture":
        d = self.to_dict()
        d.update(changes)
        return ScriptedFixture.from_dict(d)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ScriptedFixture":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def backends(self) -> Backends:
        sim = ScriptedBackend(self)
        return Backends(sim, sim, sim)


class _QuestionState:
    def __init__(self, seed: str):
        self.rng = random.Random(seed)
        self.consumed_facts: set[int] = set()
        self.grounding_calls = 0


class ScriptedBackend:
    """Implements the master, grounding and vision contracts from one fixture.

    State (rng, consumed vision facts) is kept per question and reset by
    :meth:`start_question`, so distinct questions may run concurrently.
    """

    def __init__(self, fixture: ScriptedFixture):
        self.fixture = fixture
        self._states: dict[str, _QuestionState] = {}
        self._lock = threading.Lock()

    def start_question(self, question_id: str, rollout: int = 0) -> None:
        self.fixture.entry(question_id)
        with self._lock:
            self._states[question_id] = _QuestionState(f"{self.fixture.rng_seed}:{question_id}:{rollout}")

    def _state(self, question_id: str) -> _QuestionState:
        with self._lock:
            if question_id not in self._states:
                self._states[question_id] = _QuestionState(f"{self.fixture.rng_seed}:{question_id}:0")
            return self._states[question_id]

    # -- master -------------------------------------------------------------------

    def scripted_master(self, question_id: str, turn_index: int) -> str:
        script = self.fixture.entry(question_id).master_script
        if not script:
            raise UnknownQuestion(f"{question_id} has no master_script")
        if turn_index < len(script):
            return script[turn_index]
        final = parse_action(script[-1])
        if final is not None and final.kind is ActionKind.ANSWER:
            return f"<answer>{final.payload}</answer>"
        return script[-1]

    def _evidence_turn(self, entry: FixtureEntry, question_id: str, messages: list[dict]) -> str:
        # messages[1] carries the whole episode; only later injections count as localized evidence
        injected = [m["content"] for m in messages[2:] if m["role"] == "user" and isinstance(m["content"], str)]
        if not any(text.startswith("<") for text in injected):
            return "<request_grounding>"
        pattern = re.compile(EVIDENCE_TEMPLATE.format(question_id=re.escape(question_id)))
        for text in reversed(injected):
            m = pattern.search(text)
            if m:
                return f"<answer>{m.group(1)}</answer>"
        return f"<answer>{entry.fallback_answer}</answer>"

    def generate(self, messages: list[dict], stop: Sequence[str], *, question_id: str, step: int) -> str:
        entry = self.fixture.entry(question_id)
        if entry.master_policy == "evidence":
            return self._evidence_turn(entry, question_id, messages)
        return self.scripted_master(question_id, step)

    # -- grounding ----------------------------------------------------------------

    def scripted_ground(self, question_id: str, clip_ids: Sequence[str]) -> str:
        entry = self.fixture.entry(question_id)
        state = self._state(question_id)
        n = state.grounding_calls
        state.grounding_calls += 1
        if entry.grounding_script:
            return entry.grounding_script[min(n, len(entry.grounding_script) - 1)]
        p = self.fixture.grounding_error_rate
        if state.rng.random() >= p:
            return entry.gold_clip_id
        gold = clip_ids.index(entry.gold_clip_id)
        radius = self.fixture.grounding_error_radius
        candidates = [
            cid for i, cid in enumerate(clip_ids) if i != gold and (radius is None or abs(i - gold) <= radius)
        ]
        if not candidates:
            return entry.gold_clip_id
        return state.rng.choice(candidates)

    def ground(self, question: Question, episode: Episode) -> str:
        return self.scripted_ground(question.question_id, [c.clip_id for c in episode.clips])

    # -- vision -------------------------------------------------------------------

    def scripted_describe(self, question_id: str, query: str) -> str:
        entry = self.fixture.entry(question_id)
        state = self._state(question_id)
        q = query.lower()
        for i, (trigger, response) in enumerate(entry.vision_facts):
            if i not in state.consumed_facts and trigger.lower() in q:
                state.consumed_facts.add(i)
                return response
        return NO_VISUAL_DETAIL

    def describe(self, query: str, clip: Clip, window_clips: list[Clip], *, question_id: str) -> str:
        return self.scripted_describe(question_id, query)
