"""Independent reference implementations used as test oracles.

None of these import the package; they restate the rules directly so that
agreement is evidence, not tautology.
"""

from __future__ import annotations

import itertools
import random
import re
import unicodedata
from fractions import Fraction

KINDS = ("visual_query", "request_grounding", "answer")
OPENERS = tuple(f"<{k}>" for k in KINDS)
CLOSERS = tuple(f"</{k}>" for k in KINDS)
ACTION_MARKERS = OPENERS + CLOSERS

_NO_MARKER = "(?:(?!" + "|".join(re.escape(m) for m in ACTION_MARKERS) + ").)"
_PAYLOAD = rf"{_NO_MARKER}*(?=\S){_NO_MARKER}{_NO_MARKER}*"  # marker-free with a non-space char
_ANY_PAYLOAD = rf"{_NO_MARKER}*"
_TAG = (
    rf"<visual_query>{_PAYLOAD}</visual_query>"
    rf"|<answer>{_PAYLOAD}</answer>"
    rf"|<request_grounding>(?:{_ANY_PAYLOAD}</request_grounding>)?"
)
_VALID_TURN = re.compile(rf"\s*(?:<think>(?:(?!</think>).)*</think>)?\s*(?:{_TAG})\s*", re.DOTALL)


def grammar_oracle(text: str) -> bool:
    """A turn is valid iff it fully matches [think] TAG with optional surrounding whitespace."""
    return _VALID_TURN.fullmatch(text) is not None


_FRAGMENTS = ACTION_MARKERS + (
    "<think>",
    "</think>",
    "what color is the car",
    "a3: A Bus Stop",
    "x",
    " ",
    "  ",
    "\n",
    "<",
    ">",
    "</",
    "answer",
    "<eos>",
    "ok.",
    "<visual_query",
    "request_grounding>",
)


def random_turn(rng: random.Random) -> str:
    """Random strings biased toward near-valid turns so both outcomes are common."""
    mode = rng.random()
    if mode < 0.4:
        return "".join(rng.choice(_FRAGMENTS) for _ in range(rng.randint(0, 7)))
    kind = rng.choice(KINDS)
    payload = rng.choice(["", " ", "where is the window", " a3 ", "x<think>y", "two\nlines"])
    parts = []
    if rng.random() < 0.5:
        parts.append(rng.choice(["<think>plan</think>", "<think></think>", " <think>a<answer>b</think>", "<think>open"]))
    parts.append(rng.choice(["", " ", "\n"]))
    if kind == "request_grounding" and rng.random() < 0.5:
        parts.append("<request_grounding>")
    else:
        parts.append(f"<{kind}>{payload}")
        if rng.random() < 0.85:
            parts.append(f"</{kind}>")
    if rng.random() < 0.3:
        parts.append(rng.choice(_FRAGMENTS))
    parts.append(rng.choice(["", " ", "\n"]))
    return "".join(parts)


def scan_stop_oracle(text: str, eos: str = "<eos>"):
    """Shortest prefix length that ends with any stop marker."""
    markers = CLOSERS + (eos,)
    for k in range(len(text) + 1):
        if any(text[:k].endswith(m) for m in markers):
            return k
    return None


def normalize_oracle(raw: str) -> str:
    """Character-level restatement: drop edge whitespace/punctuation, collapse, lowercase."""

    def trimmable(c: str) -> bool:
        return c.isspace() or unicodedata.category(c).startswith("P") or c in "$+<=>^`|~"

    chars = list(raw)
    while chars and trimmable(chars[0]):
        chars.pop(0)
    while chars and trimmable(chars[-1]):
        chars.pop()
    out, prev_space = [], False
    for c in chars:
        if c.isspace():
            if not prev_space:
                out.append(" ")
            prev_space = True
        else:
            out.append(c.lower())
            prev_space = False
    return "".join(out)


def reward_cases():
    """Every trajectory with at most three turns.

    Each of three turn slots is valid (1), invalid (0) or absent (None), crossed
    with r_ans in {0, 1}: 3**3 * 2 = 54 cases.
    """
    for slots in itertools.product((1, 0, None), repeat=3):
        for r_ans in (0, 1):
            yield [s for s in slots if s is not None], r_ans


def reward_oracle(per_step_fmt, r_ans, alpha) -> float:
    """R = alpha * sum r_fmt + r_ans, written out as a loop in exact arithmetic."""
    total = Fraction(0)
    for r in per_step_fmt:
        total += Fraction(str(alpha)) * r
    return float(total + r_ans)


def advantage_oracle(returns):
    n = len(returns)
    mean = sum(returns) / n
    var = sum((r - mean) ** 2 for r in returns) / n
    std = max(var**0.5, 1e-6)
    return [(r - mean) / std for r in returns]


# Hand-computed -min(r*A, clip(r, 0.8, 1.2)*A) for epsilon = 0.2.
SURROGATE_GRID = {
    (0.5, 1.0): -0.5,
    (1.0, 1.0): -1.0,
    (1.5, 1.0): -1.2,
    (0.5, -1.0): 0.8,
    (1.0, -1.0): 1.0,
    (1.5, -1.0): 1.5,
    (0.5, 0.0): 0.0,
    (1.0, 0.0): 0.0,
    (1.5, 0.0): 0.0,
}


def window_oracle(index: int, window: int, n: int) -> set[int]:
    """Clips within the run, found by enumerating every offset."""
    before = (window - 1) // 2
    return {index + d for d in range(-before, window - before) if 0 <= index + d < n}


def binomial_interval(p: float, n: int, z: float = 2.5758293035489004):
    """Normal-approximation two-sided interval for a binomial proportion, in percent."""
    half = z * (p * (1 - p) / n) ** 0.5
    return 100 * (p - half), 100 * (p + half)
