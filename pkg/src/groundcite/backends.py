"""Generator and NLI-scorer backends.

Two pluggable roles: a text generator (the LLM being adapted) and an
NLI scorer that rates whether a premise supports a hypothesis, in
[0, 1]. Each role has a JSON-over-HTTP client and a deterministic test
double (scripted generator, substring-oracle scorer with a per-pair
override table).

Wire protocol:
    generator request  {"prompt", "temperature", "top_p", "n", "max_tokens"[, "seed"]}
    generator reply    {"texts": [...][, "prompt_tokens", "completion_tokens"]}
    scorer request     {"premise", "hypothesis"}
    scorer reply       {"score"}

Remote calls retry on transport failures (connection errors, timeouts,
HTTP 5xx) up to 3 attempts with exponential backoff starting at 500 ms;
the payload is never mutated between retries.
"""

from __future__ import annotations

import json
import math
import threading
import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

import requests

from .textutil import normalize

DEFAULT_MAX_ATTEMPTS = 3
DEFAULT_BACKOFF_SECONDS = 0.5

# Sampling defaults: data generation samples 4 responses at temperature
# 0.5; evaluation decodes a single response at temperature 0.25; nucleus
# sampling uses p = 0.95.
DATAGEN_TEMPERATURE = 0.5
DATAGEN_NUM_SAMPLES = 4
EVAL_TEMPERATURE = 0.25
EVAL_NUM_SAMPLES = 1
DEFAULT_TOP_P = 0.95


class BackendError(Exception):
    """Base class for backend failures."""


class TransportError(BackendError):
    """Transport-level failure that persisted across retries."""


class ProtocolError(BackendError):
    """The backend replied, but not in the agreed format."""


class ScriptExhaustedError(BackendError):
    """A scripted mock ran out of entries (test-configuration error)."""


def estimate_tokens(text: str) -> int:
    """Token-count estimate used when a backend reports no usage: ceil(chars / 4)."""
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int
    completion_tokens: int
    estimated: bool = False

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens


@dataclass(frozen=True)
class UsageEvent:
    kind: str  # "llm" or "nli"
    tokens: int
    estimated: bool

    def to_dict(self) -> dict:
        return {"kind": self.kind, "tokens": self.tokens, "estimated": self.estimated}


class UsageMeter:
    """Thread-safe accumulator of per-call token usage."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.events: list[UsageEvent] = []

    def record(self, kind: str, tokens: int, estimated: bool) -> None:
        with self._lock:
            self.events.append(UsageEvent(kind=kind, tokens=tokens, estimated=estimated))

    def total(self, kind: str) -> int:
        with self._lock:
            return sum(e.tokens for e in self.events if e.kind == kind)

    def count(self, kind: str) -> int:
        with self._lock:
            return sum(1 for e in self.events if e.kind == kind)


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    temperature: float = DATAGEN_TEMPERATURE
    top_p: float = DEFAULT_TOP_P
    num_samples: int = 1
    max_tokens: int = 512
    seed: int | None = None

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class GenerationResult:
    texts: tuple[str, ...]
    usage: TokenUsage


class Generator(Protocol):
    def generate(self, request: GenerationRequest) -> GenerationResult: ...


class Scorer(Protocol):
    def score(self, premise: str, hypothesis: str) -> float: ...


def generate(backend: Generator, request: GenerationRequest) -> GenerationResult:
    """Call a generator backend; the request validates itself on construction."""
    return backend.generate(request)


def nli_score(scorer: Scorer, premise: str, hypothesis: str) -> float:
    """Score one premise/hypothesis pair, enforcing the [0, 1] contract."""
    if not premise:
        raise ValueError("premise must be non-empty")
    if not hypothesis:
        raise ValueError("hypothesis must be non-empty")
    value = scorer.score(premise, hypothesis)
    if not 0.0 <= value <= 1.0:
        raise ProtocolError(f"scorer returned {value!r}, outside [0, 1]")
    return value


def nli_score_batch(scorer: Scorer, pairs: Sequence[tuple[str, str]]) -> list[float]:
    """Score pairs element-wise, in order; a failure names the failing index."""
    scores: list[float] = []
    for i, (premise, hypothesis) in enumerate(pairs):
        try:
            scores.append(nli_score(scorer, premise, hypothesis))
        except Exception as exc:
            raise type(exc)(f"pair {i}: {exc}") from exc
    return scores


def _post_json(
    session: requests.Session,
    url: str,
    payload: dict,
    headers: dict[str, str],
    timeout: float,
    max_attempts: int,
    backoff: float,
) -> dict:
    body = json.dumps(payload)  # built once; identical across retries
    last_exc: Exception | None = None
    for attempt in range(max_attempts):
        if attempt:
            time.sleep(backoff * (2 ** (attempt - 1)))
        try:
            response = session.post(
                url, data=body, headers={"Content-Type": "application/json", **headers}, timeout=timeout
            )
        except (requests.ConnectionError, requests.Timeout) as exc:
            last_exc = exc
            continue
        if response.status_code >= 500:
            last_exc = TransportError(f"{url} returned HTTP {response.status_code}")
            continue
        if response.status_code != 200:
            raise ProtocolError(f"{url} returned HTTP {response.status_code}: {response.text[:200]}")
        try:
            reply = response.json()
        except ValueError as exc:
            raise ProtocolError(f"{url} returned non-JSON body") from exc
        if not isinstance(reply, dict):
            raise ProtocolError(f"{url} returned {type(reply).__name__}, expected object")
        return reply
    raise TransportError(f"{url} unreachable after {max_attempts} attempts: {last_exc}")


class HttpGenerator:
    """JSON-over-HTTP generator client."""

    def __init__(
        self,
        url: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        max_attempts: int = DEFAULT_MAX_ATTEMPTS,
        backoff: float = DEFAULT_BACKOFF_SECONDS,
        meter: UsageMeter | None = None,
        session: requests.Session | None = None,
    ) -> None:
        self.url = url
        self._headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._timeout = timeout
        self._max_attempts = max_attempts
        self._backoff = backoff
        self._meter = meter
        self._session = session or requests.Session()

    def generate(self, request: GenerationRequest) -> GenerationResult:
        payload = {
            "prompt": request.prompt,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "n": request.num_samples,
            "max_tokens": request.max_tokens,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        reply = _post_json(
            self._session, self.url, payload, self._headers, self._timeout, self._max_attempts, self._backoff
        )
        texts = reply.get("texts")
        if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
            raise ProtocolError(f"{self.url}: reply 'texts' must be a list of strings")
        if len(texts) != request.num_samples:
            raise ProtocolError(
                f"{self.url}: expected {request.num_samples} texts, got {len(texts)}"
            )
        usage = _usage_from_reply(reply, request.prompt, texts)
        if self._meter is not None:
            self._meter.record("llm", usage.total, usage.estimated)
        return GenerationResult(texts=tuple(texts), usage=usage)


def _usage_from_reply(reply: dict, prompt: str, texts: list[str]) -> TokenUsage:
    prompt_tokens = reply.get("prompt_tokens")
    completion_tokens = reply.get("completion_tokens")
    if isinstance(prompt_tokens, int) and isinstance(completion_tokens, int):
        return TokenUsage(prompt_tokens=prompt_tokens, completion_tokens=completion_tokens)
    return TokenUsage(
        prompt_tokens=estimate_tokens(prompt),
        completion_tokens=sum(estimate_tokens(t) for t in texts),
        estimated=True,
    )


class HttpScorer:
    """JSON-over-HTTP NLI scorer client."""

    def __init__(
        self,
        url: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        max_attempts: int = DEFAULT_MAX_ATTEMPTS,
        backoff: float = DEFAULT_BACKOFF_SECONDS,
        meter: UsageMeter | None = None,
        session: requests.Session | None = None,
    ) -> None:
        self.url = url
        self._headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._timeout = timeout
        self._max_attempts = max_attempts
        self._backoff = backoff
        self._meter = meter
        self._session = session or requests.Session()

    def score(self, premise: str, hypothesis: str) -> float:
        payload = {"premise": premise, "hypothesis": hypothesis}
        reply = _post_json(
            self._session, self.url, payload, self._headers, self._timeout, self._max_attempts, self._backoff
        )
        value = reply.get("score")
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ProtocolError(f"{self.url}: reply 'score' must be a number")
        if self._meter is not None:
            self._meter.record("nli", estimate_tokens(premise) + estimate_tokens(hypothesis), True)
        return float(value)


class MockGenerator:
    """Scripted generator: serves texts strictly in order until exhausted.

    Access is serialized internally, so consumption order is
    deterministic even under concurrent callers; tests that depend on
    per-query scripts should still run single-worker.
    """

    def __init__(self, script: Iterable[str], meter: UsageMeter | None = None) -> None:
        self._script = list(script)
        self._cursor = 0
        self._lock = threading.Lock()
        self._meter = meter

    @property
    def remaining(self) -> int:
        with self._lock:
            return len(self._script) - self._cursor

    def generate(self, request: GenerationRequest) -> GenerationResult:
        with self._lock:
            left = len(self._script) - self._cursor
            if left < request.num_samples:
                raise ScriptExhaustedError(
                    f"script exhausted: {request.num_samples} samples requested, {left} left"
                )
            texts = tuple(self._script[self._cursor : self._cursor + request.num_samples])
            self._cursor += request.num_samples
        usage = TokenUsage(
            prompt_tokens=estimate_tokens(request.prompt),
            completion_tokens=sum(estimate_tokens(t) for t in texts),
            estimated=True,
        )
        if self._meter is not None:
            self._meter.record("llm", usage.total, usage.estimated)
        return GenerationResult(texts=texts, usage=usage)


@dataclass
class OracleScorer:
    """Deterministic entailment oracle for tests and offline runs.

    Returns 1.0 when the normalized hypothesis (lowercased, punctuation
    stripped, whitespace collapsed) is a contiguous substring of the
    normalized premise, else 0.0. A per-pair override table, keyed by
    the normalized (premise, hypothesis), takes precedence and supports
    threshold-band scenarios. Not symmetric: score(p, h) is unrelated
    to score(h, p).
    """

    overrides: Mapping[tuple[str, str], float] | None = None
    meter: UsageMeter | None = None
    _table: dict[tuple[str, str], float] = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        for (premise, hypothesis), value in (self.overrides or {}).items():
            self._table[(normalize(premise), normalize(hypothesis))] = value

    def score(self, premise: str, hypothesis: str) -> float:
        norm_premise = normalize(premise)
        norm_hypothesis = normalize(hypothesis)
        if self.meter is not None:
            self.meter.record("nli", estimate_tokens(premise) + estimate_tokens(hypothesis), True)
        key = (norm_premise, norm_hypothesis)
        if key in self._table:
            return self._table[key]
        if norm_hypothesis and norm_hypothesis in norm_premise:
            return 1.0
        return 0.0
