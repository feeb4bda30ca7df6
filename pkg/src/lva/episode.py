"""Episode-level data model: clips re-indexed onto one hour-scale timeline."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

SCHEMA_VERSION = 1
N_CHOICES = 5

_CLIP_ALIAS_RE = re.compile(r"^clip_?(\d+)$")


class EpisodeError(ValueError):
    """Raised when clip-level records cannot be aggregated into an episode."""


class DuplicateClipId(EpisodeError):
    pass


class MissingDuration(EpisodeError):
    pass


class DanglingGoldClip(EpisodeError):
    pass


class MixedEpisodes(EpisodeError):
    pass


class UnknownClip(KeyError):
    pass


@dataclass(frozen=True)
class SubtitleLine:
    start: float
    end: float
    text: str
    speaker: Optional[str] = None

    def shifted(self, offset: float) -> "SubtitleLine":
        return SubtitleLine(self.start + offset, self.end + offset, self.text, self.speaker)

    def render(self) -> str:
        return f"{self.speaker}: {self.text}" if self.speaker else self.text


@dataclass(frozen=True)
class Clip:
    clip_id: str
    index: int
    duration: float
    offset: float
    subtitle_range: tuple[int, int] = (0, 0)
    frame_refs: tuple[Union[str, int], ...] = ()

    @property
    def tag(self) -> str:
        return f"<{self.clip_id}>"


@dataclass(frozen=True)
class BoxAnnotation:
    clip_id: str
    frame_index: int
    entity: str
    box: tuple[float, float, float, float]


@dataclass(frozen=True)
class Question:
    question_id: str
    episode_id: str
    text: str
    choices: tuple[str, ...]
    gold_index: int
    gold_clip_id: str

    @property
    def gold_label(self) -> str:
        return f"a{self.gold_index}"

    def choice_lines(self) -> list[str]:
        return [f"a{i}: {c}" for i, c in enumerate(self.choices)]


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str

    def __str__(self) -> str:
        return f"{self.code}: {self.detail}"


@dataclass(frozen=True)
class Episode:
    episode_id: str
    clips: tuple[Clip, ...]
    subtitles: tuple[SubtitleLine, ...] = ()
    questions: tuple[Question, ...] = ()
    boxes: tuple[BoxAnnotation, ...] = ()
    _by_id: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "_by_id", {c.clip_id: c for c in self.clips})

    @property
    def duration(self) -> float:
        return sum(c.duration for c in self.clips)

    def clip(self, clip_ref: str) -> Clip:
        """Look up a clip by id, ``<id>`` tag, or the ``<clip_X>`` index alias."""
        ref = clip_ref.strip()
        if ref.startswith("<") and ref.endswith(">"):
            ref = ref[1:-1].strip()
        if ref in self._by_id:
            return self._by_id[ref]
        m = _CLIP_ALIAS_RE.match(ref)
        if m and int(m.group(1)) < len(self.clips):
            return self.clips[int(m.group(1))]
        raise UnknownClip(clip_ref)

    def clip_subtitles(self, clip: Clip) -> tuple[SubtitleLine, ...]:
        lo, hi = clip.subtitle_range
        return self.subtitles[lo:hi]

    def question(self, question_id: str) -> Question:
        for q in self.questions:
            if q.question_id == question_id:
                return q
        raise KeyError(question_id)

    def window_clips(self, clip_id: str, window: int) -> list[Clip]:
        clip = self.clip(clip_id)
        lo, hi = window_run(clip.index, window, len(self.clips))
        return list(self.clips[lo : hi + 1])


def window_run(index: int, window: int, n_clips: int) -> tuple[int, int]:
    """Inclusive clip-index range of a ``window``-long run centred on ``index``.

    Even windows put the extra clip after the centre. The run is truncated,
    not shifted, at episode boundaries.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    lo = index - (window - 1) // 2
    hi = index + window // 2
    return max(lo, 0), min(hi, n_clips - 1)


def subtitles_for(episode: Episode, clip_id: str, window: int = 1) -> str:
    lines = []
    for clip in episode.window_clips(clip_id, window):
        lines.extend(s.render() for s in episode.clip_subtitles(clip))
    return "\n".join(lines)


def validate_episode(episode: Episode) -> list[Violation]:
    out: list[Violation] = []
    seen_clips = set()
    expected_offset = 0.0
    for pos, clip in enumerate(episode.clips):
        if clip.clip_id in seen_clips:
            out.append(Violation("DuplicateClipId", clip.clip_id))
        seen_clips.add(clip.clip_id)
        if clip.index != pos:
            out.append(Violation("BadClipIndex", f"{clip.clip_id} has index {clip.index}, position {pos}"))
        if not clip.duration > 0:
            out.append(Violation("NonPositiveDuration", f"{clip.clip_id} duration {clip.duration}"))
        if clip.offset != expected_offset:
            out.append(
                Violation("NonCumulativeOffset", f"{clip.clip_id} offset {clip.offset}, expected {expected_offset}")
            )
        expected_offset += clip.duration
        lo, hi = clip.subtitle_range
        if not 0 <= lo <= hi <= len(episode.subtitles):
            out.append(Violation("BadSubtitleRange", f"{clip.clip_id} range {clip.subtitle_range}"))

    prev = None
    for i, sub in enumerate(episode.subtitles):
        if not 0 <= sub.start < sub.end:
            out.append(Violation("InvalidSubtitleTiming", f"line {i}: {sub.start}-{sub.end}"))
        if prev is not None and sub.start < prev:
            out.append(Violation("UnsortedSubtitles", f"line {i} starts at {sub.start} after {prev}"))
        prev = sub.start

    seen_q = set()
    for q in episode.questions:
        if q.question_id in seen_q:
            out.append(Violation("DuplicateQuestionId", q.question_id))
        seen_q.add(q.question_id)
        if q.episode_id != episode.episode_id:
            out.append(Violation("QuestionEpisodeMismatch", f"{q.question_id} belongs to {q.episode_id}"))
        if len(q.choices) != N_CHOICES:
            out.append(Violation("BadChoiceCount", f"{q.question_id} has {len(q.choices)} choices"))
        if not 0 <= q.gold_index < N_CHOICES:
            out.append(Violation("BadGoldIndex", f"{q.question_id} gold_index {q.gold_index}"))
        if q.gold_clip_id not in seen_clips:
            out.append(Violation("DanglingGoldClip", f"{q.question_id} -> {q.gold_clip_id}"))

    by_id = {c.clip_id: c for c in episode.clips}
    for b in episode.boxes:
        clip = by_id.get(b.clip_id)
        if clip is None:
            out.append(Violation("DanglingBoxClip", b.clip_id))
        elif clip.frame_refs and not 0 <= b.frame_index < len(clip.frame_refs):
            out.append(Violation("BoxFrameOutOfRange", f"{b.clip_id} frame {b.frame_index}"))
    return out


# -- manifest (one episode per JSON file) -------------------------------------------


def episode_to_dict(episode: Episode) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "episode_id": episode.episode_id,
        "clips": [
            {
                "clip_id": c.clip_id,
                "index": c.index,
                "duration_s": c.duration,
                "offset_s": c.offset,
                "subtitle_range": list(c.subtitle_range),
                "frame_refs": list(c.frame_refs),
            }
            for c in episode.clips
        ],
        "subtitles": [
            {"start_s": s.start, "end_s": s.end, "speaker": s.speaker, "text": s.text} for s in episode.subtitles
        ],
        "questions": [
            {
                "question_id": q.question_id,
                "text": q.text,
                "choices": list(q.choices),
                "gold_index": q.gold_index,
                "gold_clip_id": q.gold_clip_id,
            }
            for q in episode.questions
        ],
        "boxes": [
            {"clip_id": b.clip_id, "frame_index": b.frame_index, "entity": b.entity, "box": list(b.box)}
            for b in episode.boxes
        ],
    }


def episode_from_dict(d: dict) -> Episode:
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise EpisodeError(f"unsupported schema_version {version!r}")
    episode_id = d["episode_id"]
    clips = tuple(
        Clip(
            clip_id=c["clip_id"],
            index=int(c["index"]),
            duration=float(c["duration_s"]),
            offset=float(c["offset_s"]),
            subtitle_range=tuple(c.get("subtitle_range", (0, 0))),
            frame_refs=tuple(c.get("frame_refs", ())),
        )
        for c in d["clips"]
    )
    subtitles = tuple(
        SubtitleLine(float(s["start_s"]), float(s["end_s"]), s["text"], s.get("speaker")) for s in d["subtitles"]
    )
    questions = tuple(
        Question(
            question_id=q["question_id"],
            episode_id=episode_id,
            text=q["text"],
            choices=tuple(q["choices"]),
            gold_index=int(q["gold_index"]),
            gold_clip_id=q["gold_clip_id"],
        )
        for q in d.get("questions", ())
    )
    boxes = tuple(
        BoxAnnotation(b["clip_id"], int(b["frame_index"]), b["entity"], tuple(float(x) for x in b["box"]))
        for b in d.get("boxes", ())
    )
    return Episode(episode_id, clips, subtitles, questions, boxes)


def dumps_episode(episode: Episode) -> str:
    return json.dumps(episode_to_dict(episode), indent=2, ensure_ascii=False) + "\n"


def save_episode(episode: Episode, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_episode(episode), encoding="utf-8")
    return path


def load_episode(path: Union[str, Path]) -> Episode:
    return episode_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class Dataset:
    """A set of episodes, e.g. one directory of manifests."""

    dataset_id: str
    episodes: tuple[Episode, ...]

    def __post_init__(self):
        index = {}
        for ep in self.episodes:
            for q in ep.questions:
                if q.question_id in index:
                    raise EpisodeError(f"question id {q.question_id} appears in more than one episode")
                index[q.question_id] = (ep, q)
        object.__setattr__(self, "_index", index)

    def items(self) -> list[tuple[Episode, Question]]:
        return [(ep, q) for ep in self.episodes for q in ep.questions]

    def lookup(self, question_id: str) -> tuple[Episode, Question]:
        return self._index[question_id]

    def episode(self, episode_id: str) -> Episode:
        for ep in self.episodes:
            if ep.episode_id == episode_id:
                return ep
        raise KeyError(episode_id)

    def __len__(self) -> int:
        return len(self._index)


def load_dataset(path: Union[str, Path], dataset_id: Optional[str] = None) -> Dataset:
    """Load every ``*.json`` episode manifest in a directory (or a single file)."""
    path = Path(path)
    files: Iterable[Path] = sorted(path.glob("*.json")) if path.is_dir() else [path]
    episodes = tuple(load_episode(f) for f in files)
    return Dataset(dataset_id or (path.name if path.is_dir() else path.stem), episodes)


def save_dataset(dataset: Dataset, out_dir: Union[str, Path]) -> list[Path]:
    out_dir = Path(out_dir)
    return [save_episode(ep, out_dir / f"{ep.episode_id}.json") for ep in dataset.episodes]


def make_episode(episode_id: str, clip_specs: Sequence[tuple], questions: Sequence[Question] = (), boxes=()) -> Episode:
    """Assemble an already-aggregated episode from ``(clip_id, duration, lines[, frame_refs])``.

    ``lines`` hold clip-local :class:`SubtitleLine` objects; offsets and subtitle
    ranges are filled in. Handy for fixtures and synthetic data.
    """
    clips, subs = [], []
    offset = 0.0
    for i, spec in enumerate(clip_specs):
        clip_id, duration, lines = spec[:3]
        frame_refs = tuple(spec[3]) if len(spec) > 3 else ()
        lo = len(subs)
        subs.extend(line.shifted(offset) for line in lines)
        clips.append(Clip(clip_id, i, float(duration), offset, (lo, len(subs)), frame_refs))
        offset += float(duration)
    return Episode(episode_id, tuple(clips), tuple(subs), tuple(questions), tuple(boxes))
