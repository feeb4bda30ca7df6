"""Prompt text for the master, grounding and vision agents."""

from __future__ import annotations

from .episode import Episode, Question

MASTER_SYSTEM_PROMPT = """\
You are an agent that answers questions about a long video episode. You may use two tools: a grounding agent to \
localize relevant segments and a vision agent to extract visual facts from the localized segment. Produce concise, \
direct answers.

Context you may receive. All subtitles and the user question q. When a segment has been localized, you will also \
have a tag <clipX> (e.g., <clip2>). When the vision agent has been called, you will see its textual response.

Available actions (choose exactly one per turn).
A - Visual query: If current visual information is insufficient, or you need visual details conditioned on the \
subtitles for the current <clipX>, call the vision engine with <visual_query> query </visual_query>.
B - (Re)Grounding: If the current text/visual evidence conflicts with the question, or the current location cannot \
support a confident answer, call the grounding agent with <request_grounding>.
C - Answer: If evidence is sufficient, return the final answer with <answer> ... </answer>. The answer must be \
concise and direct.

Guidelines. (1) Be conservative with tool calls; answer when sufficient. (2) Do not hallucinate visual details; only \
use the vision agent for facts not inferable from subtitles. (3) Each turn targets the current <clipX> (if any); if \
none exists, prefer (re)grounding before visual query."""

RETHINK_MESSAGE = "The action is not correct. Only <visual_query>, <request_grounding>, or <answer>."
ANSWER_PREFIX = "The answer is: "
VISION_PREFIX = "Visual description: "
NO_GROUNDING_NOTICE = "No segment grounded yet; request grounding first."
FORCE_ANSWER_MESSAGE = "You must answer now with <answer>…</answer>."

GROUNDING_SYSTEM_PROMPT = (
    "You localize the part of a TV episode that answers a question. The episode subtitles are given clip by clip, "
    "each clip introduced by its tag. Reply with exactly one clip tag copied from the list, for example <{example}>, "
    "and nothing else."
)
GROUNDING_RETRY_MESSAGE = "That reply did not contain a valid clip tag. Reply with exactly one tag such as <{example}>."

VISION_SYSTEM_PROMPT = (
    "You describe frames from a TV episode. Answer the query with concrete visual facts (objects, people, "
    "attributes, actions, on-screen text, scene layout) observed in the frames. Do not guess beyond what is visible."
)


def format_timestamp(seconds: float) -> str:
    return f"{seconds:.2f}"


def render_subtitles(episode: Episode) -> str:
    return "\n".join(
        f"[{format_timestamp(s.start)}-{format_timestamp(s.end)}] {s.render()}" for s in episode.subtitles
    )


def render_question(question: Question) -> str:
    return "\n".join([f"Question: {question.text}", "Choices:", *question.choice_lines()])


def master_user_message(episode: Episode, question: Question) -> str:
    return f"Subtitles:\n{render_subtitles(episode)}\n\n{render_question(question)}"


def grounding_messages(episode: Episode, question: Question) -> list[dict]:
    blocks = []
    for clip in episode.clips:
        lines = "\n".join(s.render() for s in episode.clip_subtitles(clip))
        blocks.append(f"{clip.tag}\n{lines}" if lines else clip.tag)
    example = episode.clips[0].clip_id if episode.clips else "clip_0"
    return [
        {"role": "system", "content": GROUNDING_SYSTEM_PROMPT.format(example=example)},
        {"role": "user", "content": "Subtitles by clip:\n" + "\n\n".join(blocks) + "\n\n" + render_question(question)},
    ]
