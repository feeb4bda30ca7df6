"""Synthetic episodes and matching fixtures for desk-scale simulation.

Each question's gold clip carries a clue subtitle line
(``Clue <qid>: the answer is aN``) that the evidence-following scripted
master can only use once grounding has surfaced that clip.
"""

from __future__ import annotations

import random
from typing import Optional

from .backends.scripted import FixtureEntry, ScriptedFixture
from .episode import Dataset, Question, SubtitleLine, make_episode

SPEAKERS = ("Sheldon", "Leonard", "Penny", "Howard", "Raj", "Amy", "Bernadette")
FILLER = (
    "Did you see where I left the keys?",
    "We should get going before it rains.",
    "That is not what I meant at all.",
    "Hold on, let me think about it.",
    "I told you this would happen.",
    "Can we talk about something else?",
)
MODES = ("oracle", "evidence", "steps")


def _episode_clips(rng: random.Random, episode_id: str, n_clips: int, clues: dict[int, list[tuple[str, int]]]):
    specs = []
    for i in range(n_clips):
        clip_id = f"{episode_id}_seg01_clip_{i:02d}"
        duration = rng.choice(range(120, 181)) / 2  # 60-90 s in half-second steps
        lines = []
        t = 1.0
        for _ in range(3):
            lines.append(SubtitleLine(t, t + 2.5, rng.choice(FILLER), rng.choice(SPEAKERS)))
            t += 4.0
        for qid, gold in clues.get(i, []):
            lines.append(SubtitleLine(t, t + 2.0, f"Clue {qid}: the answer is a{gold}", "Narrator"))
            t += 2.5
        frames = [f"frames/{clip_id}/{j:05d}.jpg" for j in range(6)]
        specs.append((clip_id, duration, lines, frames))
    return specs


def make_synthetic(
    n_questions: int,
    *,
    mode: str = "oracle",
    clips_per_episode: int = 10,
    questions_per_episode: int = 10,
    grounding_error_rate: float = 0.0,
    grounding_error_radius: Optional[int] = None,
    long_fraction: float = 0.5,
    seed: int = 0,
    dataset_id: Optional[str] = None,
) -> tuple[Dataset, ScriptedFixture]:
    """Build a dataset plus fixture.

    Modes: ``oracle`` scripts ground -> visual query -> correct answer;
    ``evidence`` uses the evidence-following master, correct iff the clue was
    surfaced; ``steps`` scripts correct answers needing 4 turns for a
    ``long_fraction`` share of questions and 2 turns for the rest.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    rng = random.Random(f"synthetic:{seed}")
    episodes, entries = [], {}
    n_episodes = -(-n_questions // questions_per_episode)
    qn = 0
    for e in range(n_episodes):
        episode_id = f"syn{seed}_s01e{e + 1:02d}"
        plan = []
        for _ in range(min(questions_per_episode, n_questions - qn)):
            qid = f"q{qn:05d}"
            plan.append((qid, rng.randrange(clips_per_episode), rng.randrange(5)))
            qn += 1
        clues: dict[int, list[tuple[str, int]]] = {}
        for qid, clip_idx, gold in plan:
            clues.setdefault(clip_idx, []).append((qid, gold))
        specs = _episode_clips(rng, episode_id, clips_per_episode, clues)

        questions = []
        for qid, clip_idx, gold in plan:
            choices = tuple(f"option {k} for {qid}" for k in range(5))
            gold_clip = specs[clip_idx][0]
            questions.append(Question(qid, episode_id, f"Which option is right for {qid}?", choices, gold, gold_clip))
            answer = f"<answer>a{gold}: {choices[gold]}</answer>"
            if mode == "evidence":
                entries[qid] = FixtureEntry(gold_clip, master_policy="evidence", fallback_answer=f"a{(gold + 1) % 5}")
                continue
            facts = [("what is visible", f"The frame shows the scene relevant to {qid}.")]
            if mode == "oracle":
                script = [
                    "<think>Localize first.</think><request_grounding>",
                    "<think>Need a visual read.</think><visual_query>what is visible in this clip</visual_query>",
                    answer,
                ]
            elif rng.random() < long_fraction:
                facts.append(("look closer", f"A closer look confirms option {gold} for {qid}."))
                script = [
                    "<request_grounding>",
                    "<visual_query>what is visible in this clip</visual_query>",
                    "<visual_query>look closer at the detail</visual_query>",
                    answer,
                ]
            else:
                script = ["<request_grounding>", answer]
            entries[qid] = FixtureEntry(gold_clip, vision_facts=facts, master_script=script)
        episodes.append(make_episode(episode_id, specs, questions))

    fixture = ScriptedFixture(entries, grounding_error_rate, grounding_error_radius, seed)
    return Dataset(dataset_id or f"synthetic-{mode}-{n_questions}", tuple(episodes)), fixture
