from __future__ import annotations

import random

import pytest

from lva.actions import ActionKind, Violation
from lva.backends import BackendError, Backends, FixtureEntry, ScriptedFixture
from lva.cases import BEDSIDE_QUESTION, SHELDON_QUESTION, load_cases
from lva.episode import Question, SubtitleLine, make_episode
from lva.orchestrator import (
    BackendFailure,
    RunConfig,
    Trajectory,
    assemble_context,
    replay_fixture,
    run_trajectory,
)
from lva.prompts import FORCE_ANSWER_MESSAGE, NO_GROUNDING_NOTICE, RETHINK_MESSAGE, VISION_PREFIX
from scenarios import random_script

CHOICES = ("zero", "one", "two", "three", "four")


def small_episode(n=5):
    specs = [(f"t_seg01_clip_{i:02d}", 60, [SubtitleLine(1, 2, f"line {i}", "Amy")], list(range(4))) for i in range(n)]
    q = Question("q", "t", "Which?", CHOICES, 2, "t_seg01_clip_02")
    return make_episode("t", specs, [q])


def run(script, *, k=5, window=1, ground=None, force=False, facts=()):
    ep = small_episode()
    entry = FixtureEntry("t_seg01_clip_02", vision_facts=list(facts), master_script=script, grounding_script=ground or [])
    fx = ScriptedFixture({"q": entry})
    traj = run_trajectory(ep, ep.questions[0], fx.backends(), RunConfig(max_steps=k, window=window, force_answer=force))
    return ep, traj


class TestCaseTraces:
    @pytest.mark.parametrize(
        "qid, kinds, label",
        [
            (SHELDON_QUESTION, ["request_grounding", "visual_query", "answer"], "a3"),
            (BEDSIDE_QUESTION, ["request_grounding", "visual_query", "visual_query", "answer"], "a0"),
        ],
    )
    def test_action_sequence(self, qid, kinds, label):
        dataset, fixture = load_cases()
        ep, q = dataset.lookup(qid)
        traj = run_trajectory(ep, q, fixture.backends(), RunConfig())
        assert [t.action.kind.value for t in traj.turns] == kinds
        assert traj.answer.startswith(label) and traj.terminated_by == "Answer"
        assert traj.grounded_clips == [q.gold_clip_id]
        assert all(t.verdict.valid for t in traj.turns)

    def test_bedside_second_look_resolves(self):
        dataset, fixture = load_cases()
        ep, q = dataset.lookup(BEDSIDE_QUESTION)
        traj = run_trajectory(ep, q, fixture.backends(), RunConfig())
        first, second = traj.turns[1].injected, traj.turns[2].injected
        assert "not specified" in first and "left side" in second
        assert traj.final_response == "The answer is: a0: the left side"


class TestContext:
    def test_zero_turns(self):
        ep = small_episode()
        msgs = assemble_context(ep, ep.questions[0], [], RunConfig())
        assert [m["role"] for m in msgs] == ["system", "user"]
        assert "[61.00-62.00] Amy: line 1" in msgs[1]["content"]
        assert msgs[1]["content"].endswith("a4: four")

    def test_grounding_turn_injects_tag_and_subtitles(self):
        ep, traj = run(["<request_grounding>", "<answer>a2</answer>"])
        msgs = assemble_context(ep, ep.questions[0], traj.turns[:1], traj.config)
        assert msgs[-1] == {"role": "user", "content": "<t_seg01_clip_02>\nAmy: line 2"}

    def test_invalid_turn_gets_rethink(self):
        ep, traj = run(["just chatting", "<answer>a2</answer>"])
        assert traj.turns[0].injected == RETHINK_MESSAGE
        assert traj.turns[0].verdict.violation is Violation.NO_TAG

    def test_context_monotonic(self):
        ep, traj = run(["<request_grounding>", "<visual_query>q</visual_query>", "x", "<answer>a2</answer>"])
        q = ep.questions[0]
        for t in range(len(traj.turns)):
            before = assemble_context(ep, q, traj.turns[:t], traj.config)
            after = assemble_context(ep, q, traj.turns[: t + 1], traj.config)
            turn = traj.turns[t]
            extra = [{"role": "assistant", "content": turn.master_text}]
            if turn.injected is not None:
                extra.append({"role": "user", "content": turn.injected})
            assert after == before + extra

    def test_window_injection(self):
        ep, traj = run(["<request_grounding>", "<answer>a2</answer>"], window=3)
        assert traj.turns[0].injected == "<t_seg01_clip_02>\nAmy: line 1\nAmy: line 2\nAmy: line 3"


class TestLoop:
    def test_answer_first_turn(self):
        _, traj = run(["<answer> A2: Two! </answer>"])
        assert traj.final_answer == "a2: two" and len(traj.turns) == 1 and not traj.grounded_clips

    def test_visual_query_before_grounding(self):
        _, traj = run(["<visual_query>color?</visual_query>", "<answer>a1</answer>"])
        assert traj.turns[0].injected == NO_GROUNDING_NOTICE and traj.turns[0].tool_call is None
        assert traj.n_vision_calls == 0

    def test_vision_reply_injected(self):
        _, traj = run(
            ["<request_grounding>", "<visual_query>what COLOR</visual_query>", "<answer>a2</answer>"],
            facts=[("color", "Red.")],
        )
        assert traj.turns[1].injected == VISION_PREFIX + "Red."
        assert traj.turns[1].current_clip == "t_seg01_clip_02" and traj.n_vision_calls == 1

    def test_step_limit(self):
        _, traj = run(["<request_grounding>"], k=3)
        assert traj.terminated_by == "StepLimit" and len(traj.turns) == 3 and traj.answer is None

    def test_regrounding_updates_current_clip(self):
        _, traj = run(
            ["<request_grounding>", "<request_grounding>", "<visual_query>x</visual_query>", "<answer>a2</answer>"],
            ground=["t_seg01_clip_00", "<clip_4>"],
        )
        assert traj.grounded_clips == ["t_seg01_clip_00", "t_seg01_clip_04"]
        assert traj.turns[2].current_clip == "t_seg01_clip_04"

    def test_truncates_after_stop_marker(self):
        _, traj = run(["<answer>a2</answer> and more text"])
        assert traj.turns[0].master_text == "<answer>a2</answer>" and traj.turns[0].verdict.valid

    def test_unknown_grounded_clip_fails(self):
        with pytest.raises(BackendFailure) as info:
            run(["<request_grounding>"], ground=["<nowhere>"])
        assert info.value.backend == "grounding" and info.value.trajectory.turns == []

    def test_backend_error_keeps_partial(self):
        class Flaky:
            def __init__(self):
                self.n = 0

            def generate(self, messages, stop, *, question_id, step):
                self.n += 1
                if self.n > 1:
                    raise BackendError("down", attempts=3)
                return "<request_grounding>"

        ep = small_episode()
        fx = ScriptedFixture({"q": FixtureEntry("t_seg01_clip_02")}).backends()
        backends = Backends(Flaky(), fx.grounding, fx.vision)
        with pytest.raises(BackendFailure) as info:
            run_trajectory(ep, ep.questions[0], backends, RunConfig())
        assert info.value.step == 1 and len(info.value.trajectory.turns) == 1


class TestForceAnswer:
    def test_off_by_default(self):
        _, traj = run(["<request_grounding>", "<request_grounding>", "<answer>a2</answer>"], k=2)
        assert traj.forced_answer is None and traj.answer is None

    def test_forced_answer_recorded(self):
        _, traj = run(["<request_grounding>", "<request_grounding>", "<answer>a2</answer>"], k=2, force=True)
        assert traj.terminated_by == "StepLimit" and traj.forced_answer == "a2" and traj.answer == "a2"
        assert traj.final_answer is None

    def test_force_message_sent(self):
        seen = []

        class Master:
            def generate(self, messages, stop, *, question_id, step):
                seen.append(messages[-1]["content"])
                return "hmm"

        ep = small_episode()
        fx = ScriptedFixture({"q": FixtureEntry("t_seg01_clip_02")}).backends()
        traj = run_trajectory(ep, ep.questions[0], Backends(Master(), fx.grounding, fx.vision), RunConfig(max_steps=1, force_answer=True))
        assert seen[-1] == FORCE_ANSWER_MESSAGE and traj.forced_answer is None


class TestPersistence:
    def test_round_trip(self, tmp_path):
        dataset, fixture = load_cases()
        ep, q = dataset.lookup(BEDSIDE_QUESTION)
        traj = run_trajectory(ep, q, fixture.backends(), RunConfig(window=2))
        path = traj.save(tmp_path / "t.json")
        loaded = Trajectory.load(path)
        assert loaded == traj and loaded.dumps() == path.read_text(encoding="utf-8")
        assert loaded.turns[0].action.kind is ActionKind.REQUEST_GROUNDING

    def test_config_round_trip_and_validation(self):
        cfg = RunConfig(max_steps=7, window=3, force_answer=True)
        assert RunConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ValueError):
            RunConfig(max_steps=0)
        with pytest.raises(ValueError):
            RunConfig(window=0)


class TestInvariants:
    def test_random_runs(self):
        rng = random.Random(99)
        for i in range(300):
            k = rng.randint(1, 8)
            script = random_script(rng)
            _, traj = run(script, k=k, facts=[("visible", "A lamp.")])
            _, again = run(script, k=k, facts=[("visible", "A lamp.")])
            assert len(traj.turns) <= k
            grounded = False
            for t in traj.turns:
                if t.tool_call == "vision":
                    assert grounded and t.current_clip is not None
                grounded = grounded or t.tool_call == "grounding"
            assert traj == again

    def test_replay_fixture_reproduces_noisy_runs(self):
        ep = small_episode()
        q = ep.questions[0]
        fx = ScriptedFixture(
            {"q": FixtureEntry("t_seg01_clip_02", [("visible", "A lamp.")], ["<request_grounding>", "<visual_query>visible?</visual_query>", "<answer>a1</answer>"])},
            grounding_error_rate=0.6,
            rng_seed=3,
        )
        for rollout in range(5):
            traj = run_trajectory(ep, q, fx.backends(), RunConfig(), rollout=rollout)
            replay = replay_fixture([traj], {"q": q.gold_clip_id})
            assert run_trajectory(ep, q, replay.backends(), RunConfig()).dumps() == traj.dumps()
