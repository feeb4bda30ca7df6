"""Multi-agent long-video question answering: a master LLM loop that calls
grounding and vision agents through structured action tags, plus rule-based
rewards, GRPO rollout math and an evaluation harness."""

from __future__ import annotations

from .actions import (
    ActionKind,
    ParsedAction,
    StructuralVerdict,
    Violation,
    answer_label,
    normalize_answer,
    parse_action,
    scan_stop,
    structural_validity,
    truncate_turn,
)
from .backends import Backends, FixtureEntry, ScriptedBackend, ScriptedFixture
from .episode import (
    Clip,
    Dataset,
    Episode,
    Question,
    SubtitleLine,
    load_dataset,
    load_episode,
    save_episode,
    validate_episode,
    window_run,
)
from .evaluation import EvalConfig, EvalReport, run_eval, sweep
from .ingest import build_dataset, build_episode
from .orchestrator import BackendFailure, RunConfig, Trajectory, TurnRecord, run_trajectory
from .rewards import (
    GrpoConfig,
    RewardBreakdown,
    clipped_surrogate,
    export_batch,
    group_advantages,
    score_trajectory,
    trajectory_return,
)
from .synthetic import make_synthetic

__version__ = "0.1.0"

__all__ = [
    "ActionKind",
    "BackendFailure",
    "Backends",
    "Clip",
    "Dataset",
    "Episode",
    "EvalConfig",
    "EvalReport",
    "FixtureEntry",
    "GrpoConfig",
    "ParsedAction",
    "Question",
    "RewardBreakdown",
    "RunConfig",
    "ScriptedBackend",
    "ScriptedFixture",
    "StructuralVerdict",
    "SubtitleLine",
    "Trajectory",
    "TurnRecord",
    "Violation",
    "answer_label",
    "build_dataset",
    "build_episode",
    "clipped_surrogate",
    "export_batch",
    "group_advantages",
    "load_dataset",
    "load_episode",
    "make_synthetic",
    "normalize_answer",
    "parse_action",
    "run_eval",
    "run_trajectory",
    "save_episode",
    "scan_stop",
    "score_trajectory",
    "structural_validity",
    "sweep",
    "trajectory_return",
    "truncate_turn",
    "validate_episode",
    "window_run",
]
