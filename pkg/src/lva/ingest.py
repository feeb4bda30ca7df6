"""Aggregate clip-level TVQA-style records into episode manifests.

Input directory layout (all files optional except the clip records)::

    <in>/clips/<clip_id>.json   one record per clip
    <in>/clips/<clip_id>.srt    subtitles, used when the JSON record has none
    <in>/qa.jsonl               questions, TVQA field names accepted
    <in>/boxes.jsonl            TVQA+-style frame-level boxes

Clip record fields: ``clip_id`` (or ``vid_name``), ``duration_s`` (or
``duration``), optional ``episode_id``, ``frame_refs`` and ``subtitles``
(``start_s``/``end_s``/``speaker``/``text`` in clip-local seconds).
"""

from __future__ import annotations

import json
import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import srt

from .episode import (
    N_CHOICES,
    BoxAnnotation,
    Clip,
    DanglingGoldClip,
    DuplicateClipId,
    Episode,
    EpisodeError,
    MissingDuration,
    MixedEpisodes,
    Question,
    SubtitleLine,
    save_episode,
)

logger = logging.getLogger(__name__)

_SEG_CLIP_RE = re.compile(r"seg(\d+)_clip_(\d+)$")
_SPEAKER_RE = re.compile(r"^\(?\s*([^\s:()\d][^:()\d]{0,29}?)\s*:\s*\)?\s*(.*)$", re.DOTALL)


@dataclass
class ClipRecord:
    clip_id: str
    duration: Optional[float]
    subtitles: list[SubtitleLine] = field(default_factory=list)
    frame_refs: list = field(default_factory=list)
    episode_id: Optional[str] = None

    def __post_init__(self):
        if self.episode_id is None:
            self.episode_id = episode_id_of(self.clip_id)


def episode_id_of(clip_id: str) -> str:
    """``s05e06_seg02_clip_15`` -> ``s05e06``; ids without a segment suffix map to themselves."""
    head, sep, _ = clip_id.partition("_seg")
    return head if sep else clip_id


def clip_sort_key(clip_id: str):
    m = _SEG_CLIP_RE.search(clip_id)
    if m:
        return (0, int(m.group(1)), int(m.group(2)), clip_id)
    return (1, 0, 0, clip_id)


def split_speaker(text: str) -> tuple[Optional[str], str]:
    """Heuristic ``"Name: words"`` / ``"(Name:) words"`` split on the first colon.

    Prefixes with digits or more than three words are left alone, so
    ``"Meet at 10:30"`` keeps its colon.
    """
    m = _SPEAKER_RE.match(text.strip())
    if not m or len(m.group(1).split()) > 3:
        return None, text.strip()
    return m.group(1).strip(), m.group(2).strip()


def parse_srt(content: str) -> list[SubtitleLine]:
    lines = []
    for sub in srt.parse(content):
        body = " ".join(sub.content.split())
        speaker, text = split_speaker(body)
        lines.append(SubtitleLine(sub.start.total_seconds(), sub.end.total_seconds(), text, speaker))
    return lines


def _subtitle_from_record(d: dict) -> SubtitleLine:
    speaker = d.get("speaker")
    text = d["text"]
    if speaker is None and d.get("split_speaker", True):
        speaker, text = split_speaker(text)
    return SubtitleLine(float(d["start_s"]), float(d["end_s"]), text, speaker)


def clip_record_from_dict(d: dict, srt_text: Optional[str] = None) -> ClipRecord:
    clip_id = d.get("clip_id") or d.get("vid_name")
    if not clip_id:
        raise EpisodeError(f"clip record without clip_id: {d!r}")
    duration = d.get("duration_s", d.get("duration"))
    if "subtitles" in d:
        subs = [_subtitle_from_record(s) for s in d["subtitles"]]
    elif srt_text is not None:
        subs = parse_srt(srt_text)
    else:
        subs = []
    return ClipRecord(
        clip_id=clip_id,
        duration=None if duration is None else float(duration),
        subtitles=subs,
        frame_refs=list(d.get("frame_refs", [])),
        episode_id=d.get("episode_id"),
    )


def _choices_of(qa: dict) -> list[str]:
    if "choices" in qa:
        return [str(c) for c in qa["choices"]]
    return [str(qa[f"a{i}"]) for i in range(N_CHOICES) if f"a{i}" in qa]


def _box_of(b: dict) -> tuple[str, int, str, tuple]:
    clip_id = b.get("clip_id") or b.get("vid_name")
    frame = int(b.get("frame_index", b.get("frame", 0)))
    if "box" in b:
        box = tuple(float(x) for x in b["box"])
        entity = b.get("entity") or b.get("label", "")
    else:
        bb = b["bbox"]
        box = (float(bb["left"]), float(bb["top"]), float(bb["width"]), float(bb["height"]))
        entity = b.get("entity") or bb.get("label", "")
    return clip_id, frame, entity, box


def build_episode(
    clip_records: Sequence[ClipRecord],
    qa_records: Sequence[dict] = (),
    box_records: Sequence[dict] = (),
) -> Episode:
    """Merge one episode's clips onto a single timeline.

    Clips are ordered by their ``segNN_clip_MM`` numbering, offsets are the
    running sum of durations, and every subtitle is shifted by its clip's
    offset. Questions point at the clip they were annotated on.
    """
    if not clip_records:
        raise EpisodeError("no clip records")
    episode_ids = {r.episode_id for r in clip_records}
    if len(episode_ids) != 1:
        raise MixedEpisodes(f"records span episodes {sorted(episode_ids)}")
    episode_id = episode_ids.pop()

    seen = set()
    for r in clip_records:
        if r.clip_id in seen:
            raise DuplicateClipId(r.clip_id)
        seen.add(r.clip_id)
        if r.duration is None:
            raise MissingDuration(r.clip_id)

    clips, subtitles = [], []
    offset = 0.0
    for index, r in enumerate(sorted(clip_records, key=lambda r: clip_sort_key(r.clip_id))):
        lo = len(subtitles)
        local = sorted(r.subtitles, key=lambda s: s.start)
        subtitles.extend(s.shifted(offset) for s in local)
        clips.append(Clip(r.clip_id, index, r.duration, offset, (lo, len(subtitles)), tuple(r.frame_refs)))
        offset += r.duration

    questions = []
    for qa in qa_records:
        gold_clip = qa.get("gold_clip_id") or qa.get("clip_id") or qa.get("vid_name")
        qid = str(qa.get("question_id", qa.get("qid")))
        if gold_clip not in seen:
            raise DanglingGoldClip(f"question {qid} references {gold_clip!r}")
        questions.append(
            Question(
                question_id=qid,
                episode_id=episode_id,
                text=qa.get("text", qa.get("q", qa.get("question", ""))),
                choices=tuple(_choices_of(qa)),
                gold_index=int(qa.get("gold_index", qa.get("answer_idx", -1))),
                gold_clip_id=gold_clip,
            )
        )

    boxes = []
    for b in box_records:
        clip_id, frame, entity, box = _box_of(b)
        boxes.append(BoxAnnotation(clip_id, frame, entity, box))

    return Episode(episode_id, tuple(clips), tuple(subtitles), tuple(questions), tuple(boxes))


def _read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        return []
    if path.suffix == ".json":
        data = json.loads(path.read_text(encoding="utf-8"))
        return data if isinstance(data, list) else [data]
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def _first_existing(root: Path, names: Iterable[str]) -> Path:
    for n in names:
        if (root / n).exists():
            return root / n
    return root / next(iter(names))


def load_clip_records(in_dir: Union[str, Path]) -> list[ClipRecord]:
    in_dir = Path(in_dir)
    clip_dir = in_dir / "clips" if (in_dir / "clips").is_dir() else in_dir
    records = []
    for path in sorted(clip_dir.glob("*.json")):
        d = json.loads(path.read_text(encoding="utf-8"))
        srt_path = path.with_suffix(".srt")
        srt_text = srt_path.read_text(encoding="utf-8") if srt_path.exists() else None
        records.append(clip_record_from_dict(d, srt_text))
    return records


def build_dataset(in_dir: Union[str, Path], out_dir: Union[str, Path]) -> list[Path]:
    """Build one manifest per episode found under ``in_dir``; returns written paths."""
    in_dir = Path(in_dir)
    clips_by_ep: dict[str, list[ClipRecord]] = defaultdict(list)
    for rec in load_clip_records(in_dir):
        clips_by_ep[rec.episode_id].append(rec)
    if not clips_by_ep:
        raise EpisodeError(f"no clip records found under {in_dir}")

    clip_to_ep = {r.clip_id: ep for ep, recs in clips_by_ep.items() for r in recs}
    qa_by_ep: dict[str, list[dict]] = defaultdict(list)
    for qa in _read_jsonl(_first_existing(in_dir, ("qa.jsonl", "qa.json"))):
        clip = qa.get("gold_clip_id") or qa.get("clip_id") or qa.get("vid_name")
        ep = clip_to_ep.get(clip, episode_id_of(clip or ""))
        qa_by_ep[ep].append(qa)
    box_by_ep: dict[str, list[dict]] = defaultdict(list)
    for b in _read_jsonl(_first_existing(in_dir, ("boxes.jsonl", "boxes.json"))):
        clip = b.get("clip_id") or b.get("vid_name")
        box_by_ep[clip_to_ep.get(clip, episode_id_of(clip or ""))].append(b)

    orphans = (set(qa_by_ep) | set(box_by_ep)) - set(clips_by_ep)
    if orphans:
        raise DanglingGoldClip(f"annotations reference unknown episodes {sorted(orphans)}")

    out_dir = Path(out_dir)
    written = []
    for ep_id in sorted(clips_by_ep):
        episode = build_episode(clips_by_ep[ep_id], qa_by_ep.get(ep_id, []), box_by_ep.get(ep_id, []))
        written.append(save_episode(episode, out_dir / f"{ep_id}.json"))
        logger.info("built %s: %d clips, %d questions", ep_id, len(episode.clips), len(episode.questions))
    return written
