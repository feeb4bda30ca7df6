"""Rule-based trajectory rewards and GRPO rollout math.

Nothing here touches model weights: log-probabilities come from an external
policy, and :func:`export_batch` hands scored rollouts to an external trainer.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .actions import answer_label, normalize_answer, structural_validity
from .episode import Question
from .orchestrator import Trajectory, TurnRecord

DEFAULT_ALPHA = 0.5

# Training hyperparameters recorded alongside exported batches.
TRAINING_DEFAULTS = {
    "lr": 5e-6,
    "max_steps_opt": 2000,
    "kl_coeff": 1e-3,
    "batch_size": 4,
    "n_rollouts": 4,
    "temperature": 1.0,
}


class LengthMismatch(ValueError):
    pass


def score_format(turn: Union[TurnRecord, str]) -> int:
    text = turn if isinstance(turn, str) else turn.master_text
    return int(structural_validity(text).valid)


def score_answer(trajectory: Trajectory, question: Question) -> int:
    """1 when the answer's choice label or its full text matches the gold option."""
    answer = trajectory.answer
    if answer is None:
        return 0
    if answer_label(answer) == question.gold_label:
        return 1
    gold_text = normalize_answer(question.choices[question.gold_index])
    return int(normalize_answer(answer) == gold_text)


@dataclass(frozen=True)
class RewardBreakdown:
    per_step_fmt: tuple[int, ...]
    answer_reward: int
    alpha: float
    total: float

    def to_dict(self) -> dict:
        return {
            "per_step_fmt": list(self.per_step_fmt),
            "answer_reward": self.answer_reward,
            "alpha": self.alpha,
            "total": self.total,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RewardBreakdown":
        return cls(tuple(d["per_step_fmt"]), d["answer_reward"], d["alpha"], d["total"])


def trajectory_return(per_step_fmt: Sequence[int], answer_reward: int, alpha: float = DEFAULT_ALPHA) -> RewardBreakdown:
    """R = alpha * sum(per-step format rewards) + answer reward.

    Alpha is read as the decimal it prints as and the sum is evaluated in
    rational arithmetic, rounded once: alpha=0.1 with three valid steps and a
    correct answer yields exactly 1.3.
    """
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    fmt = tuple(int(x) for x in per_step_fmt)
    if any(x not in (0, 1) for x in fmt) or answer_reward not in (0, 1):
        raise ValueError("format and answer rewards must be 0 or 1")
    total = Fraction(repr(float(alpha))) * sum(fmt) + answer_reward
    return RewardBreakdown(fmt, int(answer_reward), alpha, float(total))


def score_trajectory(trajectory: Trajectory, question: Question, alpha: float = DEFAULT_ALPHA) -> RewardBreakdown:
    return trajectory_return([score_format(t) for t in trajectory.turns], score_answer(trajectory, question), alpha)


# -- GRPO ------------------------------------------------------------------------


@dataclass(frozen=True)
class GrpoConfig:
    clip_epsilon: float = 0.2
    kl_coeff: float = 1e-3
    entropy_coeff: float = 0.0
    std_floor: float = 1e-6
    baseline: str = "group_mean"

    def __post_init__(self):
        if self.clip_epsilon <= 0:
            raise ValueError("clip_epsilon must be > 0")
        if self.kl_coeff < 0:
            raise ValueError("kl_coeff must be >= 0")
        if self.baseline not in ("group_mean", "none"):
            raise ValueError(f"unknown baseline {self.baseline!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def group_advantages(returns: Sequence[float], std_floor: float = 1e-6, baseline: str = "group_mean") -> np.ndarray:
    """Sequence-level advantages for one group of rollouts.

    ``group_mean``: (R - mean) / max(population std, std_floor).
    ``none``: the raw returns.
    """
    r = np.asarray(returns, dtype=np.float64)
    if r.size < 2:
        raise ValueError("a rollout group needs at least two rollouts")
    if baseline == "none":
        return r.copy()
    return (r - r.mean()) / max(float(r.std()), std_floor)


@dataclass
class SurrogateTerms:
    per_token: np.ndarray
    policy: np.ndarray
    kl: np.ndarray
    entropy: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.per_token.mean()) if self.per_token.size else 0.0


def kl_estimate(logp_new, logp_ref) -> np.ndarray:
    """Non-negative per-token KL estimate exp(d) - d - 1 with d = ref - new."""
    d = np.asarray(logp_ref, dtype=np.float64) - np.asarray(logp_new, dtype=np.float64)
    # clamp guards against expm1 rounding a hair below d for tiny |d|
    return np.maximum(np.expm1(d) - d, 0.0)


def clipped_surrogate(
    logp_new: Sequence[float],
    logp_old: Sequence[float],
    advantage: float,
    config: GrpoConfig = GrpoConfig(),
    *,
    logp_ref: Optional[Sequence[float]] = None,
    entropy: Optional[Sequence[float]] = None,
) -> SurrogateTerms:
    """Per-token GRPO loss: clipped policy term, plus beta * KL, minus entropy bonus."""
    new = np.asarray(logp_new, dtype=np.float64)
    old = np.asarray(logp_old, dtype=np.float64)
    if new.shape != old.shape:
        raise LengthMismatch(f"logp_new has {new.size} tokens, logp_old has {old.size}")
    ratio = np.exp(new - old)
    clipped = np.clip(ratio, 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon)
    policy = -np.minimum(ratio * advantage, clipped * advantage)

    kl = np.zeros_like(new)
    if logp_ref is not None:
        ref = np.asarray(logp_ref, dtype=np.float64)
        if ref.shape != new.shape:
            raise LengthMismatch(f"logp_ref has {ref.size} tokens, expected {new.size}")
        kl = kl_estimate(new, ref)
    ent = np.zeros_like(new)
    if entropy is not None:
        ent = np.asarray(entropy, dtype=np.float64)
        if ent.shape != new.shape:
            raise LengthMismatch(f"entropy has {ent.size} tokens, expected {new.size}")
    per_token = policy + config.kl_coeff * kl - config.entropy_coeff * ent
    return SurrogateTerms(per_token, policy, kl, ent)


@dataclass
class Rollout:
    trajectory: Trajectory
    breakdown: RewardBreakdown
    transcript: list[dict] = field(default_factory=list)
    logp_new: Optional[list[float]] = None
    logp_old: Optional[list[float]] = None
    logp_ref: Optional[list[float]] = None


@dataclass
class RolloutGroup:
    context_id: str
    rollouts: list[Rollout]

    def __post_init__(self):
        ids = {f"{r.trajectory.episode_id}/{r.trajectory.question_id}" for r in self.rollouts}
        if ids and ids != {self.context_id}:
            raise ValueError(f"rollouts from {sorted(ids)} do not share context {self.context_id}")

    @property
    def returns(self) -> list[float]:
        return [r.breakdown.total for r in self.rollouts]

    def advantages(self, config: GrpoConfig = GrpoConfig()) -> np.ndarray:
        return group_advantages(self.returns, config.std_floor, config.baseline)

    def loss(self, config: GrpoConfig = GrpoConfig()) -> float:
        """Mean per-token loss over rollouts that carry log-probabilities."""
        adv = self.advantages(config)
        terms = [
            clipped_surrogate(r.logp_new, r.logp_old, a, config, logp_ref=r.logp_ref).per_token
            for r, a in zip(self.rollouts, adv)
            if r.logp_new is not None and r.logp_old is not None
        ]
        if not terms:
            raise ValueError("no rollout in the group carries log-probabilities")
        return float(np.concatenate(terms).mean())


def context_id(trajectory: Trajectory) -> str:
    return f"{trajectory.episode_id}/{trajectory.question_id}"


def group_rollouts(rollouts: Iterable[Rollout]) -> list[RolloutGroup]:
    by_ctx: dict[str, list[Rollout]] = {}
    for r in rollouts:
        by_ctx.setdefault(context_id(r.trajectory), []).append(r)
    return [RolloutGroup(ctx, rs) for ctx, rs in sorted(by_ctx.items())]


def batch_metadata(grpo: GrpoConfig = GrpoConfig(), alpha: float = DEFAULT_ALPHA, **overrides) -> dict:
    meta = {"type": "metadata", **TRAINING_DEFAULTS, "alpha": alpha, "grpo": grpo.to_dict()}
    meta["kl_coeff"] = grpo.kl_coeff
    meta.update(overrides)
    return meta


def rollout_record(rollout: Rollout, group: RolloutGroup, advantage: float) -> dict:
    traj = rollout.trajectory
    return {
        "type": "rollout",
        "context_id": group.context_id,
        "question_id": traj.question_id,
        "episode_id": traj.episode_id,
        "transcript": rollout.transcript,
        "turns": [t.master_text for t in traj.turns],
        "r_fmt": list(rollout.breakdown.per_step_fmt),
        "r_ans": rollout.breakdown.answer_reward,
        "R": rollout.breakdown.total,
        "advantage": float(advantage),
        "config": traj.config.to_dict(),
    }


def export_batch(
    groups: Sequence[RolloutGroup],
    path: Union[str, Path],
    grpo: GrpoConfig = GrpoConfig(),
    metadata: Optional[dict] = None,
) -> Path:
    """Write a JSONL batch: one metadata line, then one line per rollout."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = metadata if metadata is not None else batch_metadata(grpo)
    lines = [json.dumps(meta, ensure_ascii=False)]
    for g in groups:
        for r, a in zip(g.rollouts, g.advantages(grpo)):
            lines.append(json.dumps(rollout_record(r, g, a), ensure_ascii=False))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_batch(path: Union[str, Path]) -> tuple[dict, list[dict]]:
    meta, records = None, []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("type") == "metadata":
            meta = rec
        else:
            records.append(rec)
    if meta is None:
        raise ValueError(f"{path} has no metadata record")
    return meta, records
