"""Command-line entry point: ``lva <subcommand> ...``.

Exit status: 0 success, 1 usage or config error, 2 runtime failure,
3 aborted ``--strict`` evaluation.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .backends import Backends, ChatClient, RemoteGrounding, RemoteMaster, RemoteVision, ScriptedFixture
from .config import ROLES, AppConfig, ConfigError, load_config
from .episode import Dataset, EpisodeError, load_dataset, load_episode, save_dataset, validate_episode
from .evaluation import EvalAborted, parse_axis, run_eval, summary_table, sweep
from .ingest import build_dataset
from .orchestrator import BackendFailure, Trajectory, assemble_context, run_trajectory
from .rewards import Rollout, batch_metadata, export_batch, group_rollouts, score_trajectory
from .synthetic import MODES, make_synthetic

logger = logging.getLogger("lva")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_STRICT = 0, 1, 2, 3


class UsageError(Exception):
    def __init__(self, message: str, usage: str = ""):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}", self.format_help())


def _add_common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", help="TOML or JSON config file (default: $LVA_CONFIG)")
    p.add_argument("--out", required=out_required, help="output directory")


def _add_backend(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=("scripted", "remote"))
    p.add_argument("--fixtures", help="fixture JSON for the scripted backend")
    p.add_argument("--seed", type=int, help="rng seed for scripted noise / retry jitter")


def _add_run(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-steps", type=int, help="step budget K")
    p.add_argument("--window", type=int, help="evidence window in clips")
    p.add_argument("--alpha", type=float, help="weight of per-step format rewards")
    p.add_argument("--force-answer", action="store_true", default=None, help="demand an answer after step exhaustion")


def _add_eval(p: argparse.ArgumentParser) -> None:
    p.add_argument("--parallelism", type=int)
    p.add_argument("--strict", action="store_true", default=None)
    p.add_argument("--grounding-metric", choices=("last", "any"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lva", description="Multi-agent long-video QA orchestration.", allow_abbrev=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="answer one question", allow_abbrev=False)
    _add_common(p)
    p.add_argument("--episode", required=True)
    p.add_argument("--question", required=True)
    _add_backend(p)
    _add_run(p)

    for name, help_ in (("eval", "evaluate a dataset"), ("sweep", "ablation sweep over K or window")):
        p = sub.add_parser(name, help=help_, allow_abbrev=False)
        _add_common(p)
        p.add_argument("--dataset", required=True)
        _add_backend(p)
        _add_run(p)
        _add_eval(p)
        p.add_argument("--axis", required=name == "sweep", help="e.g. max-steps=2,5,10 or window=1,2,3")

    p = sub.add_parser("build-dataset", help="aggregate clip-level records into episodes", allow_abbrev=False)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")

    p = sub.add_parser("score-rollouts", help="score trajectories and export a GRPO batch", allow_abbrev=False)
    _add_common(p)
    p.add_argument("--in", dest="in_dir", required=True, help="directory of trajectory JSON files")
    p.add_argument("--dataset", required=True)
    p.add_argument("--alpha", type=float)

    p = sub.add_parser("simulate", help="synthetic dataset + scripted backends end to end", allow_abbrev=False)
    _add_common(p)
    p.add_argument("--mode", choices=MODES, default="oracle")
    p.add_argument("--questions", type=int, default=200)
    p.add_argument("--clips", type=int, default=10, help="clips per episode")
    p.add_argument("--error-rate", type=float, default=0.0, help="scripted grounding error rate")
    p.add_argument("--error-radius", type=int, help="wrong groundings land within this many clips of gold")
    p.add_argument("--rollouts", type=int, default=1, help="rollouts per question; >1 exports a GRPO batch")
    p.add_argument("--seed", type=int)
    p.add_argument("--axis", help="optional sweep axis, e.g. window=1,2,3")
    _add_run(p)
    _add_eval(p)

    p = sub.add_parser("validate", help="check episode manifests (and fixtures)", allow_abbrev=False)
    p.add_argument("--config")
    p.add_argument("--dataset")
    p.add_argument("--episode")
    p.add_argument("--fixtures")
    return parser


def resolve_config(args: argparse.Namespace) -> AppConfig:
    """Layer CLI flags over the config file (or $LVA_CONFIG) and defaults."""
    cfg = load_config(getattr(args, "config", None))
    run_changes = {}
    if getattr(args, "max_steps", None) is not None:
        run_changes["max_steps"] = args.max_steps
    if getattr(args, "window", None) is not None:
        run_changes["window"] = args.window
    if getattr(args, "force_answer", None):
        run_changes["force_answer"] = True
    try:
        cfg.run = dataclasses.replace(cfg.run, **run_changes)
        eval_changes = {"run": cfg.run}
        if getattr(args, "parallelism", None) is not None:
            eval_changes["parallelism"] = args.parallelism
        if getattr(args, "strict", None):
            eval_changes["strict"] = True
        if getattr(args, "grounding_metric", None):
            eval_changes["grounding_metric"] = args.grounding_metric
        cfg.eval = dataclasses.replace(cfg.eval, **eval_changes)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if getattr(args, "alpha", None) is not None:
        if args.alpha < 0:
            raise UsageError("--alpha must be non-negative")
        cfg.alpha = args.alpha
    if getattr(args, "backend", None):
        cfg.backend = args.backend
    if getattr(args, "fixtures", None):
        cfg.fixtures = args.fixtures
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def make_backends(cfg: AppConfig) -> Backends:
    if cfg.backend == "scripted":
        if not cfg.fixtures:
            raise UsageError("the scripted backend needs --fixtures (or backend.fixtures in the config)")
        fixture = ScriptedFixture.load(cfg.fixtures)
        if cfg.seed is not None:
            fixture = fixture.with_noise(rng_seed=cfg.seed)
        return fixture.backends()
    for role in ROLES:
        if role not in cfg.endpoints:
            raise ConfigError(f"endpoints.{role}", "missing; the remote backend needs all three endpoints")
    client = lambda role: ChatClient(cfg.endpoints[role], seed=cfg.seed)  # noqa: E731
    return Backends(RemoteMaster(client("master")), RemoteGrounding(client("grounding")), RemoteVision(client("vision")))


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, ensure_ascii=False))


def cmd_run(args, cfg: AppConfig) -> int:
    episode = load_episode(args.episode)
    try:
        question = episode.question(args.question)
    except KeyError:
        raise UsageError(f"question {args.question!r} is not in episode {episode.episode_id}") from None
    out = Path(args.out)
    backends = make_backends(cfg)
    try:
        traj = run_trajectory(episode, question, backends, cfg.run)
    except BackendFailure as exc:
        exc.trajectory.save(out / "trajectories" / f"{question.question_id}.json")
        logger.error("%s", exc)
        return EXIT_RUNTIME
    traj.save(out / "trajectories" / f"{question.question_id}.json")
    breakdown = score_trajectory(traj, question, cfg.alpha)
    _print_json(
        {
            "question_id": question.question_id,
            "final_answer": traj.answer,
            "final_response": traj.final_response,
            "terminated_by": traj.terminated_by,
            "grounded_clips": traj.grounded_clips,
            "reward": breakdown.to_dict(),
        }
    )
    return EXIT_OK


def cmd_eval(args, cfg: AppConfig) -> int:
    dataset = load_dataset(args.dataset)
    backends = make_backends(cfg)
    if args.command == "sweep" or args.axis:
        axis, values = _axis(args.axis)
        reports = sweep(dataset, lambda: make_backends(cfg), axis, values, cfg.eval, args.out)
        print(summary_table(reports), end="")
        return EXIT_OK
    report = run_eval(dataset, backends, cfg.eval, args.out)
    print(summary_table([report]), end="")
    for w in report.warnings:
        logger.warning("%s", w)
    return EXIT_OK


def _axis(spec: str) -> tuple[str, list[int]]:
    try:
        return parse_axis(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_build_dataset(args, cfg: AppConfig) -> int:
    paths = build_dataset(args.in_dir, args.out)
    for p in paths:
        print(p)
    return EXIT_OK


def load_trajectories(root: Path) -> list[Trajectory]:
    trajs = []
    for path in sorted(root.rglob("*.json")):
        data = json.loads(path.read_text(encoding="utf-8"))
        if isinstance(data, dict) and "turns" in data and "question_id" in data:
            trajs.append(Trajectory.from_dict(data))
    return trajs


def score_and_export(trajs: Sequence[Trajectory], dataset: Dataset, cfg: AppConfig, out: Path) -> Path:
    rollouts = []
    for traj in trajs:
        episode, question = dataset.lookup(traj.question_id)
        rollouts.append(
            Rollout(traj, score_trajectory(traj, question, cfg.alpha), assemble_context(episode, question, traj.turns, traj.config))
        )
    groups = []
    for g in group_rollouts(rollouts):
        if len(g.rollouts) < 2:
            logger.warning("context %s has a single rollout; skipped (groups need >= 2)", g.context_id)
            continue
        groups.append(g)
    meta = batch_metadata(cfg.grpo, cfg.alpha)
    if groups:
        meta["n_rollouts"] = max(len(g.rollouts) for g in groups)
    path = export_batch(groups, out / "batch.jsonl", cfg.grpo, meta)
    n = sum(len(g.rollouts) for g in groups)
    print(f"exported {n} rollouts in {len(groups)} groups to {path}")
    return path


def cmd_score_rollouts(args, cfg: AppConfig) -> int:
    dataset = load_dataset(args.dataset)
    trajs = load_trajectories(Path(args.in_dir))
    if not trajs:
        raise UsageError(f"no trajectory files under {args.in_dir}")
    score_and_export(trajs, dataset, cfg, Path(args.out))
    return EXIT_OK


def cmd_simulate(args, cfg: AppConfig) -> int:
    out = Path(args.out)
    seed = cfg.seed if cfg.seed is not None else 0
    dataset, fixture = make_synthetic(
        args.questions,
        mode=args.mode,
        clips_per_episode=args.clips,
        grounding_error_rate=args.error_rate,
        grounding_error_radius=args.error_radius,
        seed=seed,
    )
    save_dataset(dataset, out / "dataset")
    fixture.save(out / "fixtures.json")

    if args.rollouts > 1:
        backends = fixture.backends()
        trajs = []
        for _, question in dataset.items():
            episode, _ = dataset.lookup(question.question_id)
            for i in range(args.rollouts):
                traj = run_trajectory(episode, question, backends, cfg.run, rollout=i)
                traj.save(out / "rollouts" / question.question_id / f"{i}.json")
                trajs.append(traj)
        score_and_export(trajs, dataset, cfg, out)
        return EXIT_OK

    if args.axis:
        axis, values = _axis(args.axis)
        reports = sweep(dataset, fixture.backends, axis, values, cfg.eval, out / "eval")
    else:
        reports = [run_eval(dataset, fixture.backends(), cfg.eval, out / "eval")]
    print(summary_table(reports), end="")
    return EXIT_OK


def cmd_validate(args, cfg: AppConfig) -> int:
    if not args.dataset and not args.episode:
        raise UsageError("validate needs --dataset or --episode")
    episodes = list(load_dataset(args.dataset).episodes) if args.dataset else [load_episode(args.episode)]
    problems = 0
    for ep in episodes:
        violations = validate_episode(ep)
        problems += len(violations)
        for v in violations:
            print(f"{ep.episode_id}: {v}")
    fixture_path = args.fixtures or cfg.fixtures
    if fixture_path:
        fixture = ScriptedFixture.load(fixture_path)
        known = {q.question_id for ep in episodes for q in ep.questions}
        issues = fixture.problems() + [f"{qid}: not in the dataset" for qid in sorted(set(fixture.questions) - known)]
        problems += len(issues)
        for issue in issues:
            print(f"fixtures: {issue}")
    n_q = sum(len(ep.questions) for ep in episodes)
    print(f"{len(episodes)} episode(s), {n_q} question(s), {problems} violation(s)")
    return EXIT_OK if problems == 0 else EXIT_RUNTIME


COMMANDS = {
    "run": cmd_run,
    "eval": cmd_eval,
    "sweep": cmd_eval,
    "build-dataset": cmd_build_dataset,
    "score-rollouts": cmd_score_rollouts,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        print(exc.usage, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"lva {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EvalAborted as exc:
        print(f"lva {args.command}: aborted: {exc}", file=sys.stderr)
        return EXIT_STRICT
    except (EpisodeError, BackendFailure, OSError, KeyError, ValueError) as exc:
        print(f"lva {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
