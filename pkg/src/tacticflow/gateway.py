"""Pluggable completion providers: HTTP-backed chat models and deterministic
scripted/replay providers for offline runs.

Credentials come only from environment variables; retries live in the engine,
not here.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Protocol, runtime_checkable

import httpx


@dataclass(frozen=True)
class CompletionParams:
    temperature: float = 0.0
    max_output_tokens: int = 4096
    stop: tuple[str, ...] = ()


@dataclass(frozen=True)
class Completion:
    text: str
    truncated: bool = False


class GatewayError(Exception):
    """Base class for provider transport failures."""


class AuthError(GatewayError):
    pass


class RateLimitError(GatewayError):
    pass


class TimeoutError_(GatewayError):
    pass


class TransportError(GatewayError):
    pass


class ScriptExhausted(GatewayError):
    pass


class ReplayMismatch(GatewayError):
    pass


@runtime_checkable
class CompletionProvider(Protocol):
    provider_id: str

    def complete(self, messages: list[dict], params: CompletionParams) -> Completion: ...


def fingerprint_messages(messages: list[dict]) -> str:
    """Stable hash of a prompt, used to guard replay fixtures against drift."""
    canonical = json.dumps(messages, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


class TokenBucket:
    """Per-provider rate limiter; the single synchronized element here."""

    def __init__(self, rps: float, burst: int = 1):
        self.rps = rps
        self.capacity = max(1, burst)
        self._tokens = float(self.capacity)
        self._last = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if self.rps <= 0:
            return
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rps)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rps
            time.sleep(wait)


@dataclass(frozen=True)
class HttpEndpoint:
    """Configuration block for an OpenAI-compatible chat-completions endpoint."""

    url: str
    model: str
    api_key_env: str
    rps: float = 0.0
    timeout_s: float = 60.0


class HttpProvider:
    """Chat-completions client behind the CompletionProvider interface.

    Maps provider wire errors to typed exceptions; does not retry (the engine
    owns the retry policy).
    """

    def __init__(self, endpoint: HttpEndpoint, provider_id: Optional[str] = None, client: Optional[httpx.Client] = None):
        self.endpoint = endpoint
        self.provider_id = provider_id or endpoint.model
        self._client = client or httpx.Client(timeout=endpoint.timeout_s)
        self._bucket = TokenBucket(endpoint.rps)

    def complete(self, messages: list[dict], params: CompletionParams) -> Completion:
        key = os.environ.get(self.endpoint.api_key_env, "")
        if not key:
            raise AuthError(f"missing credential env var {self.endpoint.api_key_env}")
        self._bucket.acquire()
        payload = {
            "model": self.endpoint.model,
            "messages": messages,
            "temperature": params.temperature,
            "max_tokens": params.max_output_tokens,
        }
        if params.stop:
            payload["stop"] = list(params.stop)
        try:
            resp = self._client.post(
                self.endpoint.url,
                json=payload,
                headers={"Authorization": f"Bearer {key}"},
            )
        except httpx.TimeoutException as exc:
            raise TimeoutError_(str(exc)) from exc
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"HTTP {resp.status_code} from {self.endpoint.url}")
        if resp.status_code == 429:
            raise RateLimitError(f"HTTP 429 from {self.endpoint.url}")
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code} from {self.endpoint.url}")
        try:
            body = resp.json()
            choice = body["choices"][0]
            text = choice["message"]["content"]
            truncated = choice.get("finish_reason") == "length"
        except (KeyError, IndexError, ValueError) as exc:
            raise TransportError(f"malformed completion body: {exc}") from exc
        return Completion(text=text, truncated=truncated)


@dataclass(frozen=True)
class ReplayEntry:
    response: str
    match: Optional[str] = None  # prompt fingerprint


class ReplayProvider:
    """Deterministic provider consuming a recorded script in order.

    Exhaustion is an error; a fingerprinted entry fails loudly when the live
    prompt drifted from the recorded one.
    """

    def __init__(self, script: Iterable[ReplayEntry], provider_id: str = "replay"):
        self.provider_id = provider_id
        self._entries = list(script)
        self._cursor = 0
        self._lock = threading.Lock()

    @staticmethod
    def from_jsonl(path: Path | str, provider_id: str = "replay") -> "ReplayProvider":
        entries = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                entries.append(ReplayEntry(response=d["response"], match=d.get("match")))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed replay entry: {exc}") from exc
        return ReplayProvider(entries, provider_id=provider_id)

    def remaining(self) -> int:
        return len(self._entries) - self._cursor

    def complete(self, messages: list[dict], params: CompletionParams) -> Completion:
        with self._lock:
            if self._cursor >= len(self._entries):
                raise ScriptExhausted(
                    f"replay script exhausted after {len(self._entries)} responses"
                )
            entry = self._entries[self._cursor]
            self._cursor += 1
        if entry.match is not None:
            got = fingerprint_messages(messages)
            if got != entry.match:
                raise ReplayMismatch(
                    f"prompt fingerprint {got} does not match recorded {entry.match} "
                    f"(entry {self._cursor}); last message starts: "
                    f"{messages[-1]['content'][:120]!r}"
                )
        return Completion(text=entry.response)


class CallableProvider:
    """Wraps a plain function as a provider; handy for scripted judges and
    deterministic blending in tests and offline data builds."""

    def __init__(self, fn: Callable[[list[dict], CompletionParams], str], provider_id: str = "callable"):
        self.provider_id = provider_id
        self._fn = fn

    def complete(self, messages: list[dict], params: CompletionParams) -> Completion:
        return Completion(text=self._fn(messages, params))


def write_replay_jsonl(path: Path | str, entries: Iterable[ReplayEntry]) -> None:
    lines = []
    for e in entries:
        d = {"response": e.response}
        if e.match is not None:
            d["match"] = e.match
        lines.append(json.dumps(d))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
