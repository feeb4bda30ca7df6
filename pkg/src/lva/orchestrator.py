"""Bounded multi-turn master loop coordinating the grounding and vision agents."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence, Union

from .actions import (
    DEFAULT_EOS,
    ActionKind,
    ParsedAction,
    StructuralVerdict,
    normalize_answer,
    parse_action,
    stop_markers,
    structural_validity,
    truncate_turn,
)
from .backends.base import BackendError, Backends
from .backends.scripted import FixtureEntry, ScriptedFixture
from .episode import Episode, Question, UnknownClip, subtitles_for
from .prompts import (
    ANSWER_PREFIX,
    FORCE_ANSWER_MESSAGE,
    MASTER_SYSTEM_PROMPT,
    NO_GROUNDING_NOTICE,
    RETHINK_MESSAGE,
    VISION_PREFIX,
    master_user_message,
)

TERMINATED_ANSWER = "Answer"
TERMINATED_STEP_LIMIT = "StepLimit"


@dataclass(frozen=True)
class RunConfig:
    max_steps: int = 5
    window: int = 1
    eos_marker: str = DEFAULT_EOS
    system_prompt: str = MASTER_SYSTEM_PROMPT
    answer_prefix: str = ANSWER_PREFIX
    rethink_message: str = RETHINK_MESSAGE
    force_answer: bool = False

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(frozen=True)
class TurnRecord:
    step: int
    master_text: str
    action: Optional[ParsedAction]
    verdict: StructuralVerdict
    injected: Optional[str] = None
    current_clip: Optional[str] = None
    tool_call: Optional[str] = None  # "grounding" | "vision" when a backend was actually called

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "master_text": self.master_text,
            "action": self.action.to_dict() if self.action else None,
            "verdict": self.verdict.to_dict(),
            "injected": self.injected,
            "current_clip": self.current_clip,
            "tool_call": self.tool_call,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TurnRecord":
        return cls(
            step=d["step"],
            master_text=d["master_text"],
            action=ParsedAction.from_dict(d["action"]) if d.get("action") else None,
            verdict=StructuralVerdict.from_dict(d["verdict"]),
            injected=d.get("injected"),
            current_clip=d.get("current_clip"),
            tool_call=d.get("tool_call"),
        )


@dataclass
class Trajectory:
    question_id: str
    episode_id: str
    config: RunConfig
    turns: list[TurnRecord] = field(default_factory=list)
    final_answer: Optional[str] = None
    terminated_by: str = TERMINATED_STEP_LIMIT
    grounded_clips: list[str] = field(default_factory=list)
    final_response: Optional[str] = None
    forced_answer: Optional[str] = None

    @property
    def answer(self) -> Optional[str]:
        """The answer used for scoring: the terminal one, else a forced one."""
        return self.final_answer if self.final_answer is not None else self.forced_answer

    @property
    def n_vision_calls(self) -> int:
        return sum(t.tool_call == "vision" for t in self.turns)

    @property
    def n_grounding_calls(self) -> int:
        return sum(t.tool_call == "grounding" for t in self.turns)

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "episode_id": self.episode_id,
            "config": self.config.to_dict(),
            "turns": [t.to_dict() for t in self.turns],
            "final_answer": self.final_answer,
            "terminated_by": self.terminated_by,
            "grounded_clips": list(self.grounded_clips),
            "final_response": self.final_response,
            "forced_answer": self.forced_answer,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(
            question_id=d["question_id"],
            episode_id=d["episode_id"],
            config=RunConfig.from_dict(d["config"]),
            turns=[TurnRecord.from_dict(t) for t in d["turns"]],
            final_answer=d.get("final_answer"),
            terminated_by=d["terminated_by"],
            grounded_clips=list(d.get("grounded_clips", [])),
            final_response=d.get("final_response"),
            forced_answer=d.get("forced_answer"),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Trajectory":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def index_record(self) -> dict:
        return {
            "question_id": self.question_id,
            "final_answer": self.final_answer,
            "terminated_by": self.terminated_by,
            "n_turns": len(self.turns),
            "grounded_clips": list(self.grounded_clips),
        }


class BackendFailure(RuntimeError):
    """A backend call failed mid-trajectory; the partial trajectory is kept."""

    def __init__(self, step: int, backend: str, cause: Exception, trajectory: Trajectory):
        super().__init__(f"{backend} backend failed at step {step}: {cause}")
        self.step = step
        self.backend = backend
        self.cause = cause
        self.trajectory = trajectory


def assemble_context(
    episode: Episode, question: Question, turns: list[TurnRecord], config: RunConfig
) -> list[dict]:
    messages = [
        {"role": "system", "content": config.system_prompt},
        {"role": "user", "content": master_user_message(episode, question)},
    ]
    for turn in turns:
        messages.append({"role": "assistant", "content": turn.master_text})
        if turn.injected is not None:
            messages.append({"role": "user", "content": turn.injected})
    return messages


def grounding_injection(episode: Episode, clip_id: str, window: int) -> str:
    subs = subtitles_for(episode, clip_id, window)
    return f"<{clip_id}>\n{subs}" if subs else f"<{clip_id}>"


def run_trajectory(
    episode: Episode,
    question: Question,
    backends: Backends,
    config: RunConfig = RunConfig(),
    *,
    rollout: int = 0,
) -> Trajectory:
    traj = Trajectory(question.question_id, episode.episode_id, config)
    backends.start_question(question.question_id, rollout)
    stop = stop_markers(config.eos_marker)
    current: Optional[str] = None

    t = 0
    while t < config.max_steps:
        messages = assemble_context(episode, question, traj.turns, config)
        try:
            raw = backends.master.generate(messages, stop, question_id=question.question_id, step=t)
        except BackendError as exc:
            raise BackendFailure(t, "master", exc, traj) from exc
        text = truncate_turn(raw, config.eos_marker)
        verdict = structural_validity(text)
        action = parse_action(text)
        tool = None

        if action is None:
            injected = config.rethink_message
        elif action.kind is ActionKind.ANSWER:
            answer = normalize_answer(action.payload)
            traj.turns.append(TurnRecord(t, text, action, verdict, None, current))
            traj.final_answer = answer
            traj.final_response = config.answer_prefix + answer
            traj.terminated_by = TERMINATED_ANSWER
            return traj
        elif action.kind is ActionKind.REQUEST_GROUNDING:
            try:
                reply = backends.grounding.ground(question, episode)
                clip_id = episode.clip(reply).clip_id
            except (BackendError, UnknownClip) as exc:
                raise BackendFailure(t, "grounding", exc, traj) from exc
            current = clip_id
            traj.grounded_clips.append(clip_id)
            injected = grounding_injection(episode, clip_id, config.window)
            tool = "grounding"
        elif current is None:
            injected = NO_GROUNDING_NOTICE
        else:
            try:
                desc = backends.vision.describe(
                    action.payload.strip(),
                    episode.clip(current),
                    episode.window_clips(current, config.window),
                    question_id=question.question_id,
                )
            except BackendError as exc:
                raise BackendFailure(t, "vision", exc, traj) from exc
            injected = VISION_PREFIX + desc
            tool = "vision"

        traj.turns.append(TurnRecord(t, text, action, verdict, injected, current, tool))
        t += 1

    if config.force_answer:
        traj.forced_answer = force_answer(traj, episode, question, backends)
    return traj


def force_answer(trajectory: Trajectory, episode: Episode, question: Question, backends: Backends) -> Optional[str]:
    """One extra master call demanding an answer after step exhaustion.

    Off unless ``config.force_answer`` is set; without it a step-limited run
    simply has no answer and scores as wrong.
    """
    config = trajectory.config
    if not config.force_answer or trajectory.terminated_by != TERMINATED_STEP_LIMIT:
        return None
    messages = assemble_context(episode, question, trajectory.turns, config)
    messages.append({"role": "user", "content": FORCE_ANSWER_MESSAGE})
    step = len(trajectory.turns)
    try:
        raw = backends.master.generate(
            messages, stop_markers(config.eos_marker), question_id=question.question_id, step=step
        )
    except BackendError as exc:
        raise BackendFailure(step, "master", exc, trajectory) from exc
    action = parse_action(truncate_turn(raw, config.eos_marker))
    if action is None or action.kind is not ActionKind.ANSWER:
        return None
    return normalize_answer(action.payload)


def replay_fixture(trajectories: Sequence[Trajectory], gold_clips: dict[str, str], rng_seed: int = 0) -> ScriptedFixture:
    """Scripted fixture that re-emits recorded turns, groundings and vision replies.

    Running the recorded questions through ``fixture.backends()`` with the same
    config reproduces the recorded trajectories field for field.
    """
    entries = {}
    for traj in trajectories:
        script = [t.master_text for t in traj.turns]
        if traj.forced_answer is not None:
            script.append(f"<answer>{traj.forced_answer}</answer>")
        facts = [
            (t.action.payload.strip(), t.injected[len(VISION_PREFIX) :])
            for t in traj.turns
            if t.tool_call == "vision"
        ]
        entries[traj.question_id] = FixtureEntry(
            gold_clip_id=gold_clips[traj.question_id],
            vision_facts=facts,
            master_script=script,
            grounding_script=list(traj.grounded_clips),
        )
    return ScriptedFixture(entries, rng_seed=rng_seed)
