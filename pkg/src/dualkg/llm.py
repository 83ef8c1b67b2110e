"""Chat-completion gateway: an OpenAI-compatible HTTP backend and a scripted test double.

Both backends record call counts and token usage per agent role in a shared
:class:`UsageMeter`.
"""

from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Protocol, Sequence, Union

import httpx

log = logging.getLogger(__name__)

API_KEY_ENV = "R2KG_API_KEY"

DEFAULT_TOP_P = 0.95
DEFAULT_TEMPERATURE = 0.95
MAX_TOKENS_SHORT = 8192  # temporal QA and fact verification
MAX_TOKENS_LONG = 16384  # multi-hop QA

# (top_p, temperature) pairs used by the sampling-variation strategy
SAMPLING_VARIATIONS = ((0.3, 0.5), (0.7, 1.0), (0.95, 0.95))

MESSAGE_ROLES = ("system", "user", "assistant")
TRANSIENT_STATUS = frozenset({408, 409, 425, 429, 500, 502, 503, 504})


class GatewayError(RuntimeError):
    def __init__(self, message: str, status: int | None = None, body: str = ""):
        super().__init__(message)
        self.status = status
        self.body = body


class ScriptError(RuntimeError):
    """A scripted backend was driven off its script (mismatch or exhaustion)."""


@dataclass(frozen=True)
class Message:
    role: str
    content: str


@dataclass(frozen=True)
class SamplingParams:
    top_p: float = DEFAULT_TOP_P
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self) -> None:
        if not 0 < self.top_p <= 1:
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")


@dataclass(frozen=True)
class CompletionRequest:
    model_id: str
    messages: tuple[Message, ...]
    top_p: float = DEFAULT_TOP_P
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = MAX_TOKENS_LONG

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("a completion request needs at least one message")
        for msg in self.messages:
            if msg.role not in MESSAGE_ROLES:
                raise ValueError(f"unknown message role {msg.role!r}")
        if self.messages[0].role not in ("system", "user"):
            raise ValueError("first message must be a system or user message")
        SamplingParams(self.top_p, self.temperature)
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be positive, got {self.max_tokens}")

    @property
    def prompt_text(self) -> str:
        return "\n".join(m.content for m in self.messages)

    @property
    def last_content(self) -> str:
        return self.messages[-1].content

    def to_body(self) -> dict[str, Any]:
        # key order is part of the wire contract: keep it stable
        return {
            "model": self.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_body(), ensure_ascii=False)


@dataclass(frozen=True)
class Completion:
    text: str
    truncated: bool = False
    prompt_tokens: int = 0
    completion_tokens: int = 0
    exact_usage: bool = False


def approx_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


@dataclass
class RoleUsage:
    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0


class UsageMeter:
    """Thread-safe per-role call and token counters."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._usage: dict[str, RoleUsage] = {}

    def record(self, role: str, completion: Completion) -> None:
        with self._lock:
            usage = self._usage.setdefault(role, RoleUsage())
            usage.calls += 1
            usage.prompt_tokens += completion.prompt_tokens
            usage.completion_tokens += completion.completion_tokens

    def calls(self, role: str) -> int:
        with self._lock:
            return self._usage.get(role, RoleUsage()).calls

    def snapshot(self) -> dict[str, dict[str, int]]:
        with self._lock:
            return {
                role: {"calls": u.calls, "prompt_tokens": u.prompt_tokens, "completion_tokens": u.completion_tokens}
                for role, u in sorted(self._usage.items())
            }


class Backend(Protocol):
    role: str
    model_id: str

    def complete(self, req: CompletionRequest) -> Completion: ...


class HTTPBackend:
    """OpenAI-compatible ``/chat/completions`` client with bounded retries.

    Transport errors and 408/409/425/429/5xx responses are retried with capped
    exponential backoff, up to ``max_attempts`` total attempts.
    """

    def __init__(
        self,
        endpoint: str,
        model_id: str,
        *,
        role: str = "operator",
        meter: UsageMeter | None = None,
        api_key: str | None = None,
        timeout: float = 120.0,
        max_attempts: int = 3,
        backoff: float = 1.0,
        max_backoff: float = 8.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.endpoint = endpoint
        self.model_id = model_id
        self.role = role
        self.meter = meter
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.max_backoff = max_backoff
        self._sleep = sleep
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    def close(self) -> None:
        self._client.close()

    def _delay(self, attempt: int) -> float:
        return min(self.max_backoff, self.backoff * 2 ** (attempt - 1))

    def complete(self, req: CompletionRequest) -> Completion:
        content = req.to_json().encode("utf-8")
        status, body = None, ""
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = self._client.post(self.endpoint, content=content)
            except httpx.TransportError as exc:
                status, body = None, f"{type(exc).__name__}: {exc}"
                log.warning("transport error on attempt %d/%d: %s", attempt, self.max_attempts, body)
            else:
                if resp.is_success:
                    completion = self._parse(resp, req)
                    if self.meter is not None:
                        self.meter.record(self.role, completion)
                    return completion
                status, body = resp.status_code, resp.text[:500]
                if status not in TRANSIENT_STATUS:
                    break
                log.warning("HTTP %d on attempt %d/%d", status, attempt, self.max_attempts)
            if attempt < self.max_attempts:
                self._sleep(self._delay(attempt))
        raise GatewayError(f"completion failed (status={status}): {body[:200]}", status=status, body=body)

    @staticmethod
    def _parse(resp: httpx.Response, req: CompletionRequest) -> Completion:
        try:
            data = resp.json()
            choice = data["choices"][0]
            text = choice["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise GatewayError(
                f"malformed completion response: {exc!r}", status=resp.status_code, body=resp.text[:500]
            ) from None
        usage = data.get("usage") or {}
        exact = "prompt_tokens" in usage and "completion_tokens" in usage
        completion_tokens = usage["completion_tokens"] if exact else approx_tokens(text)
        truncated = choice.get("finish_reason") == "length" or completion_tokens > req.max_tokens
        return Completion(
            text=text,
            truncated=truncated,
            prompt_tokens=usage["prompt_tokens"] if exact else approx_tokens(req.prompt_text),
            completion_tokens=completion_tokens,
            exact_usage=exact,
        )


Predicate = Union[None, str, Callable[[CompletionRequest], bool]]


@dataclass(frozen=True)
class ScriptStep:
    response: str
    expect: Predicate = None

    def describe(self) -> str:
        if self.expect is None:
            return "<any prompt>"
        if isinstance(self.expect, str):
            return f"last message containing {self.expect!r}"
        return getattr(self.expect, "__name__", repr(self.expect))

    def matches(self, req: CompletionRequest) -> bool:
        if self.expect is None:
            return True
        if isinstance(self.expect, str):
            return self.expect in req.last_content
        return bool(self.expect(req))


def script_steps(items: Iterable[str | dict | ScriptStep]) -> list[ScriptStep]:
    """Build steps from plain strings or ``{"response": ..., "expect": ...}`` mappings."""
    steps = []
    for item in items:
        if isinstance(item, ScriptStep):
            steps.append(item)
        elif isinstance(item, str):
            steps.append(ScriptStep(item))
        else:
            steps.append(ScriptStep(item["response"], item.get("expect")))
    return steps


class ScriptedBackend:
    """Replays canned responses in order; one session at a time."""

    def __init__(
        self,
        script: Sequence[str | dict | ScriptStep],
        *,
        role: str = "operator",
        meter: UsageMeter | None = None,
        model_id: str = "scripted",
    ):
        self.script = script_steps(script)
        self.cursor = 0
        self.role = role
        self.meter = meter
        self.model_id = model_id
        self.requests: list[CompletionRequest] = []

    @property
    def remaining(self) -> int:
        return len(self.script) - self.cursor

    def complete(self, req: CompletionRequest) -> Completion:
        if self.cursor >= len(self.script):
            raise ScriptError(f"{self.role} script exhausted after {len(self.script)} responses")
        step = self.script[self.cursor]
        if not step.matches(req):
            raise ScriptError(
                f"{self.role} script step {self.cursor} expected {step.describe()}; "
                f"got {req.last_content[:120]!r}"
            )
        self.cursor += 1
        self.requests.append(req)
        tokens = approx_tokens(step.response)
        completion = Completion(
            text=step.response,
            truncated=tokens > req.max_tokens,
            prompt_tokens=approx_tokens(req.prompt_text),
            completion_tokens=tokens,
        )
        if self.meter is not None:
            self.meter.record(self.role, completion)
        return completion


@dataclass
class BackendConfig:
    """Per-role backend settings from an experiment manifest.

    Credentials never live here; the HTTP backend reads ``R2KG_API_KEY``.
    """

    kind: str = "scripted"
    model: str = "scripted"
    endpoint: str | None = None
    top_p: float = DEFAULT_TOP_P
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int | None = None
    timeout: float = 120.0
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ("http", "scripted"):
            raise ValueError(f"backend kind must be 'http' or 'scripted', got {self.kind!r}")
        if self.kind == "http" and not self.endpoint:
            raise ValueError("http backend needs an endpoint URL")
        SamplingParams(self.top_p, self.temperature)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> BackendConfig:
        if "api_key" in data:
            raise ValueError(f"API keys are read from ${API_KEY_ENV}, not from config files")
        known = {k: data[k] for k in ("kind", "model", "endpoint", "top_p", "temperature", "max_tokens", "timeout") if k in data}
        extra = {k: v for k, v in data.items() if k not in known}
        return cls(**known, extra=extra)

    @property
    def sampling(self) -> SamplingParams:
        return SamplingParams(self.top_p, self.temperature)
