"""Uniform access to an ensemble of language models.

Per-sample settings, tag-schema response parsing, retry with backoff, and
cost accounting behind one gateway.  Transports are pluggable: a scripted
mock (fixture file or responder callable) for tests and offline runs, and an
OpenAI-compatible HTTP transport for real providers.
"""

from __future__ import annotations

import json
import logging
import os
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

logger = logging.getLogger(__name__)

REASONING_EFFORTS = ("auto", "low", "medium", "high")

PURPOSE_CUDA = "cuda"
PURPOSE_VERIFIER = "verifier"
PURPOSE_SUMMARIZER = "summarizer"
PURPOSE_TUNER = "tuner"
PURPOSES = (PURPOSE_CUDA, PURPOSE_VERIFIER, PURPOSE_SUMMARIZER, PURPOSE_TUNER)

# Model ids treated as reasoning-class unless the caller says otherwise.
_REASONING_PREFIXES = ("o1", "o3", "o4", "azure-o")


class TransportError(RuntimeError):
    """The transport failed after exhausting retries."""


class ContextTooLong(TransportError):
    """The prompt exceeds the model's context window; never retried."""


class EmptyPool(ValueError):
    """Ensemble drawing requires at least one model id."""


class UnknownModelPrice(KeyError):
    """No price-table entry for the model being charged."""


class ParseError(ValueError):
    """A response is missing a required tag; names the first absent tag."""

    def __init__(self, missing_tag: str):
        super().__init__(f"response missing <{missing_tag}> tag")
        self.missing_tag = missing_tag


@dataclass(frozen=True, slots=True)
class SamplerSettings:
    model_id: str
    temperature: float | None = None
    reasoning_effort: str | None = None
    max_tokens: int = 8192

    def __post_init__(self):
        if self.temperature is not None and not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")
        if self.reasoning_effort is not None and self.reasoning_effort not in REASONING_EFFORTS:
            raise ValueError(f"reasoning_effort must be one of {REASONING_EFFORTS}")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")


@dataclass(frozen=True, slots=True)
class TokenUsage:
    prompt_tokens: int
    completion_tokens: int

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("usage counts must be >= 0")


@dataclass(frozen=True, slots=True)
class ChatExchange:
    system: str
    messages: tuple[tuple[str, str], ...]
    response: str
    usage: TokenUsage
    settings: SamplerSettings


@dataclass(frozen=True, slots=True)
class LedgerEntry:
    purpose: str
    model_id: str
    usage: TokenUsage
    dollars: float
    call_index: int = 0


@dataclass
class CostLedger:
    """Append-only log of per-call spend; dollars follow the price table."""

    price_table: dict[str, tuple[float, float]]
    entries: list[LedgerEntry] = field(default_factory=list)

    def total(self) -> float:
        return sum(e.dollars for e in self.entries)

    def total_by_purpose(self) -> dict[str, float]:
        totals: dict[str, float] = {}
        for e in self.entries:
            totals[e.purpose] = totals.get(e.purpose, 0.0) + e.dollars
        return totals


def record_cost(
    ledger: CostLedger,
    purpose: str,
    usage: TokenUsage,
    model_id: str,
    call_index: int = 0,
) -> LedgerEntry:
    """Append one priced entry to the ledger."""
    if model_id not in ledger.price_table:
        raise UnknownModelPrice(model_id)
    p_in, p_out = ledger.price_table[model_id]
    entry = LedgerEntry(
        purpose=purpose,
        model_id=model_id,
        usage=usage,
        dollars=usage.prompt_tokens * p_in + usage.completion_tokens * p_out,
        call_index=call_index,
    )
    ledger.entries.append(entry)
    return entry


def load_price_table(path: str | Path) -> dict[str, tuple[float, float]]:
    """Price table file: model_id -> {"prompt": $/token, "completion": $/token}."""
    data = json.loads(Path(path).read_text())
    return {
        model: (float(rates["prompt"]), float(rates["completion"]))
        for model, rates in data.items()
    }


# ---------------------------------------------------------------------------
# Transports


class Transport(Protocol):
    def complete(
        self,
        settings: SamplerSettings,
        system: str,
        messages: list[tuple[str, str]],
        purpose: str,
        call_index: int,
    ) -> tuple[str, TokenUsage]: ...


def _approx_tokens(text: str) -> int:
    return max(1, len(text) // 4)


class MockTransport:
    """Scripted transport for offline runs and tests.

    Responses come either from a ``responder`` callable or from per-purpose
    script lists consumed by call index.  A script entry may be a plain
    response string or ``{"error": "transient"}`` (always raises); add
    ``"times": n`` and ``"then": "text"`` to fail the first n attempts of
    that call and then answer.  ``{"error": "context_too_long"}`` raises
    ContextTooLong.
    """

    def __init__(
        self,
        scripts: dict[str, list] | None = None,
        responder: Callable[..., str] | None = None,
    ):
        self.scripts = {k: list(v) for k, v in (scripts or {}).items()}
        self.responder = responder
        self.calls: list[tuple[str, int]] = []
        self._attempts: dict[tuple[str, int], int] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "MockTransport":
        """Fixture file: JSON object mapping purpose -> list of responses."""
        return cls(scripts=json.loads(Path(path).read_text()))

    def complete(self, settings, system, messages, purpose, call_index):
        with self._lock:
            self.calls.append((purpose, call_index))
            attempt = self._attempts.get((purpose, call_index), 0)
            self._attempts[(purpose, call_index)] = attempt + 1
        if self.responder is not None:
            text = self.responder(purpose, call_index, settings, system, messages)
        else:
            script = self.scripts.get(purpose)
            if not script or call_index >= len(script):
                raise TransportError(
                    f"mock script exhausted for purpose {purpose!r} at call {call_index}"
                )
            text = script[call_index]
        if isinstance(text, dict):
            times = text.get("times")
            if times is None or attempt < times:
                kind = text.get("error", "transient")
                if kind == "context_too_long":
                    raise ContextTooLong("scripted context overflow")
                raise TransportError(f"scripted transport failure: {kind}")
            text = text.get("then", "")
        prompt_text = system + "".join(t for _, t in messages)
        return text, TokenUsage(_approx_tokens(prompt_text), _approx_tokens(text))


class OpenAICompatTransport:
    """Minimal chat-completions client for OpenAI-compatible endpoints.

    Credentials come from the environment (OPENAI_API_KEY / OPENAI_BASE_URL).
    """

    def __init__(self, base_url: str | None = None, api_key: str | None = None, timeout: float = 300.0):
        self.base_url = (base_url or os.environ.get("OPENAI_BASE_URL", "https://api.openai.com/v1")).rstrip("/")
        self.api_key = api_key or os.environ.get("OPENAI_API_KEY", "")
        self.timeout = timeout

    def complete(self, settings, system, messages, purpose, call_index):
        import httpx

        chat = [{"role": "system", "content": system}] if system else []
        chat += [{"role": role, "content": text} for role, text in messages]
        body: dict = {"model": settings.model_id, "messages": chat, "max_tokens": settings.max_tokens}
        if settings.temperature is not None:
            body["temperature"] = settings.temperature
        if settings.reasoning_effort is not None and settings.reasoning_effort != "auto":
            body["reasoning_effort"] = settings.reasoning_effort
        try:
            response = httpx.post(
                f"{self.base_url}/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.timeout,
            )
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if response.status_code == 400 and "context" in response.text.lower():
            raise ContextTooLong(response.text[:500])
        if response.status_code >= 400:
            raise TransportError(f"HTTP {response.status_code}: {response.text[:500]}")
        data = response.json()
        usage = data.get("usage", {})
        return (
            data["choices"][0]["message"]["content"] or "",
            TokenUsage(usage.get("prompt_tokens", 0), usage.get("completion_tokens", 0)),
        )


# ---------------------------------------------------------------------------
# Gateway


MAX_ATTEMPTS = 4  # one initial try plus up to three retries


class LlmGateway:
    """Thread-safe sampling front-end with retries and cost recording.

    Call indices are reserved per purpose at submission time, so scripted
    transports see a deterministic numbering even under concurrency.  The
    ledger is single-writer: only the gateway appends.
    """

    def __init__(
        self,
        transport: Transport,
        ledger: CostLedger | None = None,
        retry_wait_s: float = 0.5,
    ):
        self.transport = transport
        self.ledger = ledger
        self.retry_wait_s = retry_wait_s
        self._counters: dict[str, int] = {}
        self._lock = threading.Lock()

    def _reserve(self, purpose: str, n: int = 1) -> int:
        with self._lock:
            start = self._counters.get(purpose, 0)
            self._counters[purpose] = start + n
            return start

    def sample(
        self,
        settings: SamplerSettings,
        system: str,
        messages: list[tuple[str, str]],
        purpose: str = PURPOSE_CUDA,
        _call_index: int | None = None,
    ) -> ChatExchange:
        """One completion; transient transport failures retried with backoff."""
        call_index = self._reserve(purpose) if _call_index is None else _call_index
        last: Exception | None = None
        for attempt in range(MAX_ATTEMPTS):
            try:
                text, usage = self.transport.complete(
                    settings, system, list(messages), purpose, call_index
                )
                break
            except ContextTooLong:
                raise
            except TransportError as exc:
                last = exc
                if attempt + 1 < MAX_ATTEMPTS and self.retry_wait_s > 0:
                    time.sleep(self.retry_wait_s * 2**attempt)
        else:
            raise TransportError(
                f"transport failed after {MAX_ATTEMPTS} attempts: {last}"
            ) from last
        with self._lock:
            if self.ledger is not None:
                record_cost(self.ledger, purpose, usage, settings.model_id, call_index)
        return ChatExchange(
            system=system,
            messages=tuple(messages),
            response=text,
            usage=usage,
            settings=settings,
        )

    def sample_many(
        self,
        requests: list[tuple[SamplerSettings, str, list[tuple[str, str]]]],
        purpose: str,
    ) -> list[ChatExchange | Exception]:
        """Concurrent samples; result i corresponds to request i.

        Failures come back as exception objects so one bad sample cannot sink
        the batch.
        """
        if not requests:
            return []
        base = self._reserve(purpose, len(requests))

        def run(i: int) -> ChatExchange | Exception:
            settings, system, messages = requests[i]
            try:
                return self.sample(settings, system, messages, purpose, _call_index=base + i)
            except Exception as exc:
                return exc

        with ThreadPoolExecutor(max_workers=min(len(requests), 16)) as pool:
            return list(pool.map(run, range(len(requests))))


# ---------------------------------------------------------------------------
# Ensemble drawing


def is_reasoning_model(model_id: str, reasoning_models: set[str] | None = None) -> bool:
    if reasoning_models is not None:
        return model_id in reasoning_models
    return model_id.startswith(_REASONING_PREFIXES)


def draw_ensemble_settings(
    pool: list[str],
    temps: list[float],
    efforts: list[str],
    n: int,
    rng_seed: int,
    reasoning_models: set[str] | None = None,
    max_tokens: int = 8192,
) -> list[SamplerSettings]:
    """Draw n sampler settings uniformly over the ensemble.

    The model is drawn first; reasoning-class models then draw a reasoning
    effort and ignore temperature, conventional models the reverse.
    Deterministic for a fixed seed.
    """
    if not pool:
        raise EmptyPool("model pool is empty")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = random.Random(rng_seed)
    drawn = []
    for _ in range(n):
        model = rng.choice(pool)
        if is_reasoning_model(model, reasoning_models):
            effort = rng.choice(efforts) if efforts else None
            drawn.append(
                SamplerSettings(model_id=model, reasoning_effort=effort, max_tokens=max_tokens)
            )
        else:
            temp = rng.choice(temps) if temps else None
            drawn.append(
                SamplerSettings(model_id=model, temperature=temp, max_tokens=max_tokens)
            )
    return drawn


# ---------------------------------------------------------------------------
# Response parsing


@dataclass(frozen=True, slots=True)
class ParsedKernelResponse:
    kernel_name: str
    description: str
    cuda_source: str

    def __post_init__(self):
        if not (self.kernel_name and self.description and self.cuda_source):
            raise ValueError("parsed response fields must be non-empty")


_TAG_ORDER = ("name", "description", "cuda")


def _extract_tag(text: str, tag: str) -> str | None:
    open_tag, close_tag = f"<{tag}>", f"</{tag}>"
    open_idx = text.find(open_tag)
    close_idx = text.find(close_tag)
    if close_idx != -1 and (open_idx == -1 or close_idx < open_idx):
        raise ParseError(tag)  # closing tag precedes its opener
    if open_idx == -1:
        return None
    match = re.search(
        re.escape(open_tag) + r"(.*?)" + re.escape(close_tag), text, re.DOTALL
    )
    if match is None:
        return None
    return match.group(1)


def parse_kernel_response(
    text: str, required: tuple[str, ...] = _TAG_ORDER
) -> ParsedKernelResponse:
    """Extract the first <name>/<description>/<cuda> tag pairs from a response.

    Surrounding prose is ignored and fenced code inside <cuda> survives
    verbatim.  A tag in ``required`` that is absent (or empty) raises
    ParseError naming the first one missing; non-required missing tags get
    neutral defaults.
    """
    if "cuda" not in required:
        raise ValueError("the <cuda> tag is always required")
    found: dict[str, str | None] = {}
    for tag in _TAG_ORDER:
        value = _extract_tag(text, tag)
        if value is not None and not value.strip():
            value = None
        if value is None and tag in required:
            raise ParseError(tag)
        found[tag] = value
    name = found["name"]
    return ParsedKernelResponse(
        kernel_name=(name.strip() if name else "translated_kernel"),
        description=found["description"] or "translated from the reference implementation",
        cuda_source=found["cuda"].strip(),  # type: ignore[union-attr]
    )
