"""Batch evaluation: Answer Accuracy, Grounding Accuracy and ablation sweeps."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

from .actions import answer_label
from .backends.base import Backends
from .episode import Dataset, Episode, Question, window_run
from .orchestrator import BackendFailure, RunConfig, Trajectory, run_trajectory
from .rewards import score_answer

logger = logging.getLogger(__name__)


class EvalAborted(RuntimeError):
    """A question errored while running in strict mode."""


def grounding_correct(
    trajectory: Trajectory, question: Question, episode: Episode, window: int = 1, metric: str = "last"
) -> bool:
    """Whether the gold clip lies in the window run around the grounded clip.

    ``last`` judges only the final grounding call (re-grounding supersedes
    earlier ones); ``any`` accepts a hit from any call.
    """
    if not trajectory.grounded_clips:
        return False
    gold = episode.clip(question.gold_clip_id).index
    n = len(episode.clips)
    candidates = trajectory.grounded_clips[-1:] if metric == "last" else trajectory.grounded_clips
    for clip_id in candidates:
        lo, hi = window_run(episode.clip(clip_id).index, window, n)
        if lo <= gold <= hi:
            return True
    return False


@dataclass(frozen=True)
class QuestionResult:
    question_id: str
    episode_id: str
    predicted_label: Optional[str]
    correct: bool
    grounding_correct: bool
    n_turns: int
    n_vision_calls: int
    n_grounding_calls: int
    terminated_by: Optional[str]
    error: Optional[str] = None

    @property
    def errored(self) -> bool:
        return self.error is not None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "QuestionResult":
        return cls(**d)


@dataclass(frozen=True)
class EvalConfig:
    run: RunConfig = RunConfig()
    grounding_metric: str = "last"
    parallelism: int = 4
    strict: bool = False

    def __post_init__(self):
        if self.grounding_metric not in ("last", "any"):
            raise ValueError(f"unknown grounding metric {self.grounding_metric!r}")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    def to_dict(self) -> dict:
        # parallelism does not affect results, so it stays out of the persisted snapshot
        return {"run": self.run.to_dict(), "grounding_metric": self.grounding_metric, "strict": self.strict}


@dataclass
class EvalReport:
    dataset_id: str
    config: dict
    results: list[QuestionResult]
    answer_accuracy: float
    grounding_accuracy: float
    mean_turns: float
    wall_time: float = 0.0
    warnings: list[str] = field(default_factory=list)
    label: str = ""
    trajectories: list[Trajectory] = field(default_factory=list, repr=False)

    @property
    def errored(self) -> list[QuestionResult]:
        return [r for r in self.results if r.errored]

    def to_dict(self) -> dict:
        """Persistable form; wall time is left out so re-runs are byte-identical."""
        return {
            "dataset_id": self.dataset_id,
            "label": self.label,
            "config": self.config,
            "n_questions": len(self.results),
            "n_errored": len(self.errored),
            "errored": [r.question_id for r in self.errored],
            "answer_accuracy": self.answer_accuracy,
            "grounding_accuracy": self.grounding_accuracy,
            "mean_turns": self.mean_turns,
            "warnings": list(self.warnings),
            "results": [r.to_dict() for r in self.results],
        }


def aggregate(
    dataset_id: str, config: dict, results: Sequence[QuestionResult], label: str = ""
) -> EvalReport:
    """Accuracies over non-errored results, as percentages."""
    results = sorted(results, key=lambda r: r.question_id)
    scored = [r for r in results if not r.errored]
    warnings = []
    if not scored:
        warnings.append("no scored questions; accuracies reported as 0")
        acc = gacc = mean_turns = 0.0
    else:
        n = len(scored)
        acc = 100.0 * sum(r.correct for r in scored) / n
        gacc = 100.0 * sum(r.grounding_correct for r in scored) / n
        mean_turns = sum(r.n_turns for r in scored) / n
    if len(scored) < len(results):
        warnings.append(f"{len(results) - len(scored)} question(s) errored and were excluded")
    return EvalReport(dataset_id, config, list(results), acc, gacc, mean_turns, warnings=warnings, label=label)


def evaluate_question(
    episode: Episode, question: Question, backends: Backends, config: EvalConfig, rollout: int = 0
) -> tuple[QuestionResult, Trajectory]:
    try:
        traj = run_trajectory(episode, question, backends, config.run, rollout=rollout)
    except BackendFailure as exc:
        if config.strict:
            raise EvalAborted(f"{question.question_id}: {exc}") from exc
        logger.warning("question %s errored: %s", question.question_id, exc)
        traj = exc.trajectory
        result = QuestionResult(
            question.question_id,
            episode.episode_id,
            None,
            False,
            False,
            len(traj.turns),
            traj.n_vision_calls,
            traj.n_grounding_calls,
            None,
            error=str(exc),
        )
        return result, traj
    correct = bool(score_answer(traj, question))
    result = QuestionResult(
        question.question_id,
        episode.episode_id,
        answer_label(traj.answer) if traj.answer is not None else None,
        correct,
        grounding_correct(traj, question, episode, config.run.window, config.grounding_metric),
        len(traj.turns),
        traj.n_vision_calls,
        traj.n_grounding_calls,
        traj.terminated_by,
    )
    # a correct free-text answer without a choice label still counts as a prediction
    if correct and result.predicted_label is None:
        result = dataclasses.replace(result, predicted_label=question.gold_label)
    return result, traj


def run_eval(
    dataset: Dataset,
    backends: Backends,
    config: EvalConfig = EvalConfig(),
    out_dir: Union[str, Path, None] = None,
    label: str = "",
) -> EvalReport:
    t0 = time.perf_counter()
    items = dataset.items()
    if not items:
        logger.warning("dataset %s has no questions", dataset.dataset_id)

    def work(item):
        return evaluate_question(item[0], item[1], backends, config)

    if config.parallelism == 1:
        pairs = [work(item) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            pairs = list(pool.map(work, items))

    report = aggregate(dataset.dataset_id, config.to_dict(), [p[0] for p in pairs], label)
    report.trajectories = sorted((p[1] for p in pairs), key=lambda t: t.question_id)
    report.wall_time = time.perf_counter() - t0
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def summary_table(reports: Sequence[EvalReport], method: str = "LongVideoAgent", input_kind: str = "Subtitle+Frame") -> str:
    rows = [("Method", "Input", "Setting", "Grounding Acc (%)", "Accuracy (%)", "Mean turns", "N")]
    for r in reports:
        rows.append(
            (
                method,
                input_kind,
                r.label or "-",
                f"{r.grounding_accuracy:.2f}",
                f"{r.answer_accuracy:.2f}",
                f"{r.mean_turns:.2f}",
                str(len(r.results) - len(r.errored)),
            )
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = [" | ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, out_dir: Union[str, Path]) -> Path:
    out = Path(out_dir)
    (out / "trajectories").mkdir(parents=True, exist_ok=True)
    for traj in report.trajectories:
        traj.save(out / "trajectories" / f"{traj.question_id}.json")
    (out / "index.jsonl").write_text(
        "".join(json.dumps(t.index_record(), ensure_ascii=False) + "\n" for t in report.trajectories),
        encoding="utf-8",
    )
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    (out / "results.jsonl").write_text(
        "".join(json.dumps(r.to_dict(), ensure_ascii=False) + "\n" for r in report.results), encoding="utf-8"
    )
    (out / "summary.txt").write_text(summary_table([report]), encoding="utf-8")
    (out / "run_log.json").write_text(
        json.dumps({"wall_time_s": report.wall_time, "finished_at": time.time()}) + "\n", encoding="utf-8"
    )
    return out


def load_results(path: Union[str, Path]) -> list[QuestionResult]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [QuestionResult.from_dict(json.loads(line)) for line in lines if line.strip()]


AXES = {"max-steps": "max_steps", "max_steps": "max_steps", "k": "max_steps", "window": "window"}


def parse_axis(spec: str) -> tuple[str, list[int]]:
    """``"max-steps=2,5,10"`` -> ("max_steps", [2, 5, 10])."""
    name, _, values = spec.partition("=")
    key = AXES.get(name.strip().lower())
    if key is None:
        raise ValueError(f"unknown sweep axis {name!r}; expected max-steps or window")
    try:
        vals = [int(v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise ValueError(f"sweep values must be integers: {values!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise ValueError("sweep values must be positive integers")
    return key, vals


def sweep(
    dataset: Dataset,
    backends: Union[Backends, Callable[[], Backends]],
    axis: str,
    values: Sequence[int],
    base: EvalConfig = EvalConfig(),
    out_dir: Union[str, Path, None] = None,
) -> list[EvalReport]:
    """One report per axis value; everything else (fixtures, seeds) held fixed."""
    if axis not in ("max_steps", "window"):
        raise ValueError(f"unknown sweep axis {axis!r}")
    reports = []
    for v in values:
        cfg = dataclasses.replace(base, run=dataclasses.replace(base.run, **{axis: v}))
        b = backends() if callable(backends) else backends
        point_dir = None if out_dir is None else Path(out_dir) / f"{axis}={v}"
        reports.append(run_eval(dataset, b, cfg, point_dir, label=f"{axis}={v}"))
    if out_dir is not None:
        (Path(out_dir) / "comparison.txt").write_text(summary_table(reports), encoding="utf-8")
    return reports
