"""OpenAI-compatible chat-completion clients for the three agents."""

from __future__ import annotations

import base64
import logging
import mimetypes
import os
import random
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import httpx

from ..actions import ActionKind
from ..episode import Clip, Episode, Question, UnknownClip
from ..prompts import GROUNDING_RETRY_MESSAGE, VISION_SYSTEM_PROMPT, grounding_messages
from .base import AuthError, BackendError, BackendTimeout, MalformedResponse, RateLimited, ServerError

logger = logging.getLogger(__name__)

API_KEY_ENV = {
    "master": "LVA_MASTER_API_KEY",
    "grounding": "LVA_GROUNDING_API_KEY",
    "vision": "LVA_VISION_API_KEY",
}

MAX_BACKOFF_S = 30.0


@dataclass
class EndpointConfig:
    base_url: str
    model: str
    api_key_env: str
    temperature: float = 0.0
    max_tokens: int = 1024
    timeout_s: float = 60.0
    max_attempts: int = 3
    backoff_base_s: float = 0.5
    frames: int = 8
    extra_body: dict = field(default_factory=dict)

    @property
    def url(self) -> str:
        return self.base_url.rstrip("/") + "/chat/completions"


def backoff_delay(attempt: int, base: float, rng: random.Random, retry_after: Optional[float] = None) -> float:
    """Jittered exponential delay before retry number ``attempt`` (1-based)."""
    delay = base * 2 ** (attempt - 1) * rng.uniform(0.5, 1.0)
    if retry_after is not None:
        delay = max(delay, retry_after)
    return min(delay, MAX_BACKOFF_S)


def _retry_after(resp: httpx.Response) -> Optional[float]:
    try:
        return float(resp.headers["retry-after"])
    except (KeyError, ValueError):
        return None


class ChatClient:
    """One endpoint; retries 429/5xx/timeouts with jittered exponential backoff."""

    def __init__(
        self,
        config: EndpointConfig,
        *,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
        seed: Optional[int] = None,
    ):
        self.config = config
        self._client = httpx.Client(timeout=config.timeout_s, transport=transport)
        self._sleep = sleep
        self._rng = random.Random(seed)

    def close(self) -> None:
        self._client.close()

    def _headers(self) -> dict:
        key = os.environ.get(self.config.api_key_env)
        if not key:
            raise AuthError(f"environment variable {self.config.api_key_env} is not set", attempts=0)
        return {"Authorization": f"Bearer {key}"}

    def complete(
        self,
        messages: list[dict],
        stop: Sequence[str] = (),
        *,
        temperature: Optional[float] = None,
    ) -> tuple[str, Optional[str]]:
        """POST one chat completion; returns (assistant text, finish_reason)."""
        if not messages:
            raise ValueError("empty transcript")
        cfg = self.config
        body = {
            "model": cfg.model,
            "messages": messages,
            "temperature": cfg.temperature if temperature is None else temperature,
            "max_tokens": cfg.max_tokens,
            **cfg.extra_body,
        }
        if stop:
            body["stop"] = list(stop)
        headers = self._headers()

        last: Optional[BackendError] = None
        for attempt in range(1, cfg.max_attempts + 1):
            retry_after = None
            try:
                resp = self._client.post(cfg.url, json=body, headers=headers)
            except httpx.TimeoutException as exc:
                last = BackendTimeout(f"{cfg.url}: {exc}", attempts=attempt)
            except httpx.TransportError as exc:
                last = ServerError(f"{cfg.url}: {exc}", attempts=attempt)
            else:
                if resp.status_code == 200:
                    return self._parse(resp, attempt)
                if resp.status_code in (401, 403):
                    raise AuthError(f"{cfg.url} rejected credentials ({resp.status_code})", attempts=attempt)
                if resp.status_code == 429:
                    last = RateLimited(f"{cfg.url} rate limited", attempts=attempt)
                    retry_after = _retry_after(resp)
                elif resp.status_code >= 500:
                    last = ServerError(f"{cfg.url} returned {resp.status_code}", attempts=attempt)
                else:
                    raise BackendError(f"{cfg.url} returned {resp.status_code}: {resp.text[:200]}", attempts=attempt)
            if attempt < cfg.max_attempts:
                delay = backoff_delay(attempt, cfg.backoff_base_s, self._rng, retry_after)
                logger.warning("%s (attempt %d/%d); retrying in %.2fs", last, attempt, cfg.max_attempts, delay)
                self._sleep(delay)
        assert last is not None
        raise last

    def _parse(self, resp: httpx.Response, attempt: int) -> tuple[str, Optional[str]]:
        try:
            choice = resp.json()["choices"][0]
            content = choice["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected response body: {resp.text[:200]}", attempts=attempt) from exc
        if not isinstance(content, str):
            raise MalformedResponse("assistant content is not text", attempts=attempt)
        return content, choice.get("finish_reason")


def remote_generate(client: ChatClient, messages: list[dict], stop: Sequence[str] = ()) -> str:
    return client.complete(messages, stop)[0]


def restore_closing_tag(text: str) -> str:
    """Re-append the closing tag a server swallowed as a stop sequence.

    Chat APIs drop the matched stop string from the output, so ``<answer>a3``
    comes back without ``</answer>``. Only the last opened action tag is
    considered, and a bare ``<request_grounding>`` is left as is.
    """
    last_kind, last_pos = None, -1
    for kind in ActionKind:
        pos = text.rfind(kind.open_tag)
        if pos > last_pos:
            last_kind, last_pos = kind, pos
    if last_kind is None:
        return text
    tail = text[last_pos + len(last_kind.open_tag) :]
    if last_kind.close_tag in tail:
        return text
    if last_kind is ActionKind.REQUEST_GROUNDING and not tail.strip():
        return text
    return text + last_kind.close_tag


class RemoteMaster:
    def __init__(self, client: ChatClient):
        self.client = client

    def generate(self, messages: list[dict], stop: Sequence[str], *, question_id: str, step: int) -> str:
        text, finish = self.client.complete(messages, stop)
        if finish == "stop":
            text = restore_closing_tag(text)
        return text


_TAG_RE = re.compile(r"<([^<>\s/][^<>\s]*)>")


class RemoteGrounding:
    """Asks an LLM for one clip tag given the question and clip-tagged subtitles."""

    def __init__(self, client: ChatClient):
        self.client = client

    @staticmethod
    def parse_clip(text: str, episode: Episode) -> Optional[str]:
        for m in _TAG_RE.finditer(text):
            try:
                return episode.clip(m.group(1)).clip_id
            except UnknownClip:
                continue
        return None

    def ground(self, question: Question, episode: Episode) -> str:
        messages = grounding_messages(episode, question)
        reply = self.client.complete(messages)[0]
        clip_id = self.parse_clip(reply, episode)
        if clip_id is None:
            example = episode.clips[0].clip_id if episode.clips else "clip_0"
            messages = messages + [
                {"role": "assistant", "content": reply},
                {"role": "user", "content": GROUNDING_RETRY_MESSAGE.format(example=example)},
            ]
            reply = self.client.complete(messages)[0]
            clip_id = self.parse_clip(reply, episode)
        if clip_id is None:
            raise MalformedResponse(f"grounding reply has no valid clip tag: {reply[:200]!r}")
        return clip_id


def sample_evenly(items: Sequence, k: int) -> list:
    n = len(items)
    if k <= 0:
        return []
    if n <= k:
        return list(items)
    if k == 1:
        return [items[n // 2]]
    return [items[round(i * (n - 1) / (k - 1))] for i in range(k)]


def frame_url(ref) -> Optional[str]:
    """URL for an image attachment; frames are passed through, never decoded."""
    if isinstance(ref, str):
        if ref.startswith(("http://", "https://", "data:")):
            return ref
        path = Path(ref)
        if path.is_file():
            mime = mimetypes.guess_type(path.name)[0] or "image/jpeg"
            return f"data:{mime};base64," + base64.b64encode(path.read_bytes()).decode("ascii")
    return None


class RemoteVision:
    def __init__(self, client: ChatClient):
        self.client = client

    def describe(self, query: str, clip: Clip, window_clips: list[Clip], *, question_id: str) -> str:
        refs = [r for c in window_clips for r in c.frame_refs]
        parts: list[dict] = [
            {"type": "text", "text": f"Clips: {' '.join(c.tag for c in window_clips)}\nQuery: {query}"}
        ]
        for ref in sample_evenly(refs, self.client.config.frames):
            url = frame_url(ref)
            if url is None:
                logger.debug("frame reference %r has no attachable image", ref)
                continue
            parts.append({"type": "image_url", "image_url": {"url": url}})
        messages = [
            {"role": "system", "content": VISION_SYSTEM_PROMPT},
            {"role": "user", "content": parts},
        ]
        text = self.client.complete(messages)[0].strip()
        if not text:
            raise MalformedResponse("vision agent returned an empty description")
        return text
