"""Action-token protocol emitted by the master agent.

The master produces exactly one of three tags per turn::

    <visual_query>...</visual_query>
    <request_grounding>            (bare)  or  <request_grounding>...</request_grounding>
    <answer>...</answer>

optionally preceded by one ``<think>...</think>`` block. Everything here is a
pure function of the input text.
"""

from __future__ import annotations

import enum
import re
import string
import unicodedata
from dataclasses import dataclass
from typing import Optional

DEFAULT_EOS = "<eos>"

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"


class ActionKind(str, enum.Enum):
    VISUAL_QUERY = "visual_query"
    REQUEST_GROUNDING = "request_grounding"
    ANSWER = "answer"

    @property
    def open_tag(self) -> str:
        return f"<{self.value}>"

    @property
    def close_tag(self) -> str:
        return f"</{self.value}>"


class Violation(str, enum.Enum):
    NO_TAG = "NoTag"
    MULTIPLE_TAGS = "MultipleTags"
    UNCLOSED_TAG = "UnclosedTag"
    EXTRANEOUS_TEXT = "ExtraneousText"
    EMPTY_PAYLOAD = "EmptyPayload"


# Every action-tag marker, opening and closing. Payloads may not contain any of them.
_MARKERS = {kind.open_tag: (kind, True) for kind in ActionKind}
_MARKERS.update({kind.close_tag: (kind, False) for kind in ActionKind})
_MARKER_RE = re.compile("|".join(re.escape(m) for m in _MARKERS))

CLOSING_TAGS = tuple(kind.close_tag for kind in ActionKind)


@dataclass(frozen=True)
class ParsedAction:
    kind: ActionKind
    payload: str
    raw_span: tuple[int, int]
    preceding_think: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "payload": self.payload,
            "raw_span": list(self.raw_span),
            "preceding_think": self.preceding_think,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParsedAction":
        return cls(
            kind=ActionKind(d["kind"]),
            payload=d["payload"],
            raw_span=(int(d["raw_span"][0]), int(d["raw_span"][1])),
            preceding_think=d.get("preceding_think"),
        )


@dataclass(frozen=True)
class StructuralVerdict:
    valid: bool
    violation: Optional[Violation] = None

    def __post_init__(self):
        if self.valid != (self.violation is None):
            raise ValueError("valid must be True exactly when violation is None")

    def to_dict(self) -> dict:
        return {"valid": self.valid, "violation": self.violation.value if self.violation else None}

    @classmethod
    def from_dict(cls, d: dict) -> "StructuralVerdict":
        v = d.get("violation")
        return cls(valid=bool(d["valid"]), violation=Violation(v) if v else None)


def stop_markers(eos: str = DEFAULT_EOS) -> list[str]:
    """Stop sequences for one master turn: the three closing tags plus ``eos``."""
    return [*CLOSING_TAGS, eos]


def scan_stop(generated_text: str, eos: str = DEFAULT_EOS) -> Optional[int]:
    """End offset of the earliest stop marker in ``generated_text``, or None.

    "Earliest" means the shortest prefix that ends with a marker, which is where
    a streaming generator would halt.
    """
    best = None
    for marker in stop_markers(eos):
        if not marker:
            continue
        i = generated_text.find(marker)
        if i >= 0:
            end = i + len(marker)
            if best is None or end < best:
                best = end
    return best


def truncate_turn(generated_text: str, eos: str = DEFAULT_EOS) -> str:
    """Cut a turn at its first stop marker; a trailing ``eos`` is dropped."""
    end = scan_stop(generated_text, eos)
    if end is None:
        return generated_text
    text = generated_text[:end]
    if eos and text.endswith(eos):
        text = text[: -len(eos)]
    return text


@dataclass(frozen=True)
class _Segment:
    kind: ActionKind
    start: int
    end: int
    payload: str
    closed: bool


def _split_think(text: str) -> tuple[Optional[str], int, bool]:
    """Return (think content, offset where the remainder starts, think unclosed)."""
    lead = len(text) - len(text.lstrip())
    if not text.startswith(THINK_OPEN, lead):
        return None, 0, False
    body_start = lead + len(THINK_OPEN)
    close = text.find(THINK_CLOSE, body_start)
    if close < 0:
        return None, 0, True
    return text[body_start:close], close + len(THINK_CLOSE), False


def _segments(text: str, start: int) -> tuple[list[_Segment], list[tuple[int, int]]]:
    """Split ``text[start:]`` into top-level action segments and the gaps between them.

    An opening tag is closed only if the very next marker is its own closing
    tag. ``<request_grounding>`` without its closer is a complete bare tag.
    Stray closing tags fall into the gaps.
    """
    markers = [(m.start(), m.end(), *_MARKERS[m.group()]) for m in _MARKER_RE.finditer(text, start)]
    segments: list[_Segment] = []
    gaps: list[tuple[int, int]] = []
    cursor = start
    i = 0
    while i < len(markers):
        m_start, m_end, kind, is_open = markers[i]
        if not is_open:
            i += 1
            continue
        gaps.append((cursor, m_start))
        nxt = markers[i + 1] if i + 1 < len(markers) else None
        if nxt is not None and nxt[2] is kind and not nxt[3]:
            segments.append(_Segment(kind, m_start, nxt[1], text[m_end:nxt[0]], True))
            cursor = nxt[1]
            i += 2
        elif kind is ActionKind.REQUEST_GROUNDING:
            segments.append(_Segment(kind, m_start, m_end, "", True))
            cursor = m_end
            i += 1
        else:
            segments.append(_Segment(kind, m_start, m_end, "", False))
            cursor = m_end
            i += 1
    gaps.append((cursor, len(text)))
    return segments, gaps


def _needs_payload(kind: ActionKind) -> bool:
    return kind is not ActionKind.REQUEST_GROUNDING


def parse_action(turn_text: str) -> Optional[ParsedAction]:
    """Return the first complete, non-empty action tag in ``turn_text``.

    A leading ``<think>`` block is captured as ``preceding_think``. Unclosed
    tags and tags with a blank payload are skipped.
    """
    think, rest, _ = _split_think(turn_text)
    segments, _ = _segments(turn_text, rest)
    for seg in segments:
        if not seg.closed:
            continue
        if _needs_payload(seg.kind) and not seg.payload.strip():
            continue
        payload = seg.payload if _needs_payload(seg.kind) else ""
        return ParsedAction(seg.kind, payload, (seg.start, seg.end), think)
    return None


def structural_validity(turn_text: str) -> StructuralVerdict:
    """Judge whether a turn is exactly one well-formed action tag.

    One leading think block and surrounding whitespace are allowed. When several
    problems coexist the reported reason follows the precedence
    NoTag, UnclosedTag, MultipleTags, ExtraneousText, EmptyPayload.
    """
    _, rest, think_unclosed = _split_think(turn_text)
    if think_unclosed:
        return StructuralVerdict(False, Violation.UNCLOSED_TAG)
    segments, gaps = _segments(turn_text, rest)
    if not segments:
        return StructuralVerdict(False, Violation.NO_TAG)
    if any(not s.closed for s in segments):
        return StructuralVerdict(False, Violation.UNCLOSED_TAG)
    if len(segments) > 1:
        return StructuralVerdict(False, Violation.MULTIPLE_TAGS)
    if any(turn_text[a:b].strip() for a, b in gaps):
        return StructuralVerdict(False, Violation.EXTRANEOUS_TEXT)
    seg = segments[0]
    if _needs_payload(seg.kind) and not seg.payload.strip():
        return StructuralVerdict(False, Violation.EMPTY_PAYLOAD)
    return StructuralVerdict(True)


def _is_trim_char(ch: str) -> bool:
    return ch.isspace() or ch in string.punctuation or unicodedata.category(ch).startswith("P")


_LABEL_RE = re.compile(r"^(a\d)(?::|(?=\s)|$)")


def normalize_answer(raw: str) -> str:
    """Lowercase, trim whitespace and punctuation at both ends, collapse inner spaces."""
    start, end = 0, len(raw)
    while start < end and _is_trim_char(raw[start]):
        start += 1
    while end > start and _is_trim_char(raw[end - 1]):
        end -= 1
    return " ".join(raw[start:end].split()).lower()


def answer_label(raw: str) -> Optional[str]:
    """Choice label such as ``"a3"`` when the answer starts with one."""
    m = _LABEL_RE.match(normalize_answer(raw))
    return m.group(1) if m else None
