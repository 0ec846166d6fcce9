"""Client for chat-completion style inference endpoints.

Enforces sampling parameters where the wire schema allows, retries transient
failures with exponential backoff, caches generations content-addressed on
(prompt, params, model), and accounts every request in a cost ledger. The
gateway is shareable across worker threads: ledger appends and cache writes
are serialized.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .core import Explanation, MatchkitError, SamplingParams, token_count

log = logging.getLogger(__name__)

RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


class TransportError(MatchkitError):
    """Retries exhausted; carries the last HTTP status (or 0 for network errors)."""

    def __init__(self, message: str, status: int = 0):
        super().__init__(message)
        self.status = status


class ProtocolError(MatchkitError):
    """The endpoint answered 200 with a body we cannot interpret."""


class MinLengthViolation(MatchkitError):
    """Generated text stayed below min_new_tokens even after one re-prompt."""


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_id: str
    api_key_env: str = "MATCHKIT_API_KEY"
    completions_path: str = "/chat/completions"
    timeout_s: float = 60.0
    max_retries: int = 5
    backoff_base_s: float = 0.5
    backoff_cap_s: float = 30.0
    send_sampling_extras: bool = True  # top_k / min_tokens for vLLM-style servers
    max_concurrency: int = 4
    requests_per_second: float | None = None

    @property
    def url(self) -> str:
        return self.base_url.rstrip("/") + self.completions_path

    def headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    params: SamplingParams
    model_id: str

    @property
    def cache_key(self) -> str:
        payload = json.dumps(
            {"model_id": self.model_id, "params": self.params.as_dict(), "prompt": self.prompt},
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LedgerRow:
    cache_key: str
    latency_ms: int
    prompt_tokens: int
    completion_tokens: int
    cached: bool


class CostLedger:
    """Append-only request accounting; aggregates always equal the row sums."""

    def __init__(self) -> None:
        self._rows: list[LedgerRow] = []
        self._lock = threading.Lock()

    def record(self, row: LedgerRow) -> None:
        with self._lock:
            self._rows.append(row)

    @property
    def rows(self) -> list[LedgerRow]:
        with self._lock:
            return list(self._rows)

    def total_prompt_tokens(self) -> int:
        return sum(r.prompt_tokens for r in self.rows)

    def total_completion_tokens(self) -> int:
        return sum(r.completion_tokens for r in self.rows)

    def generation_time_ms(self) -> int:
        # Cached rows contribute nothing to generation time.
        return sum(r.latency_ms for r in self.rows if not r.cached)

    def cached_count(self) -> int:
        return sum(1 for r in self.rows if r.cached)

    def live_count(self) -> int:
        return sum(1 for r in self.rows if not r.cached)

    def write_csv(self, path: str | Path, append: bool = False) -> None:
        mode = "a" if append and Path(path).exists() else "w"
        with open(path, mode, newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            if mode == "w":
                writer.writerow(["cache_key", "latency_ms", "prompt_tokens", "completion_tokens", "cached"])
            for row in self.rows:
                writer.writerow(
                    [row.cache_key, row.latency_ms, row.prompt_tokens, row.completion_tokens, int(row.cached)]
                )

    @classmethod
    def read_csv(cls, path: str | Path) -> "CostLedger":
        ledger = cls()
        with open(path, newline="", encoding="utf-8") as handle:
            for raw in csv.DictReader(handle):
                ledger.record(
                    LedgerRow(
                        cache_key=raw["cache_key"],
                        latency_ms=int(raw["latency_ms"]),
                        prompt_tokens=int(raw["prompt_tokens"]),
                        completion_tokens=int(raw["completion_tokens"]),
                        cached=bool(int(raw["cached"])),
                    )
                )
        return ledger


@dataclass(frozen=True)
class CostSummary:
    requests: int
    cached: int
    live: int
    generation_time_ms: int
    prompt_tokens: int
    completion_tokens: int
    estimated_cost: float
    mean_live_latency_ms: float

    def as_dict(self) -> dict:
        return {
            "requests": self.requests,
            "cached": self.cached,
            "live": self.live,
            "generation_time_ms": self.generation_time_ms,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "estimated_cost": self.estimated_cost,
            "mean_live_latency_ms": self.mean_live_latency_ms,
        }


def report_cost(ledger: CostLedger, prompt_rate: float = 0.0, completion_rate: float = 0.0) -> CostSummary:
    """Summarize wall time, token totals, and currency cost at per-token rates."""
    rows = ledger.rows
    live = [r for r in rows if not r.cached]
    prompt_tokens = sum(r.prompt_tokens for r in rows)
    completion_tokens = sum(r.completion_tokens for r in rows)
    generation_time = sum(r.latency_ms for r in live)
    return CostSummary(
        requests=len(rows),
        cached=len(rows) - len(live),
        live=len(live),
        generation_time_ms=generation_time,
        prompt_tokens=prompt_tokens,
        completion_tokens=completion_tokens,
        estimated_cost=prompt_tokens * prompt_rate + completion_tokens * completion_rate,
        mean_live_latency_ms=(generation_time / len(live)) if live else 0.0,
    )


class RateLimiter:
    """Token-bucket limiter shared by all gateway workers."""

    def __init__(self, requests_per_second: float | None):
        self._interval = 1.0 / requests_per_second if requests_per_second else 0.0
        self._next_slot = 0.0
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if self._interval == 0.0:
            return
        with self._lock:
            now = time.monotonic()
            slot = max(now, self._next_slot)
            self._next_slot = slot + self._interval
        wait = slot - now
        if wait > 0:
            time.sleep(wait)


def _build_payload(request: GenerationRequest, config: EndpointConfig) -> dict:
    payload = {
        "model": request.model_id,
        "messages": [{"role": "user", "content": request.prompt}],
        "max_tokens": request.params.max_new_tokens,
        "top_p": request.params.top_p,
    }
    if config.send_sampling_extras:
        payload["top_k"] = request.params.top_k
        payload["min_tokens"] = request.params.min_new_tokens
    return payload


def _extract_text(body: dict) -> str:
    try:
        choice = body["choices"][0]
    except (KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(f"response body lacks choices: {exc}") from exc
    if isinstance(choice.get("message"), dict) and "content" in choice["message"]:
        return choice["message"]["content"]
    if "text" in choice:
        return choice["text"]
    raise ProtocolError("response choice carries neither message.content nor text")


def _call_once(
    request: GenerationRequest,
    config: EndpointConfig,
    session: requests.Session,
    limiter: RateLimiter | None,
) -> tuple[str, int, int, int]:
    """One HTTP round with retries; returns (text, latency_ms, prompt_toks, completion_toks)."""
    last_error = "no attempt made"
    last_status = 0
    for attempt in range(config.max_retries + 1):
        if attempt:
            delay = min(config.backoff_base_s * (2 ** (attempt - 1)), config.backoff_cap_s)
            time.sleep(delay)
        if limiter is not None:
            limiter.acquire()
        started = time.monotonic()
        try:
            response = session.post(
                config.url,
                json=_build_payload(request, config),
                headers=config.headers(),
                timeout=config.timeout_s,
            )
        except requests.RequestException as exc:
            last_error, last_status = f"network error: {exc}", 0
            continue
        latency_ms = int((time.monotonic() - started) * 1000)
        if response.status_code in RETRYABLE_STATUSES:
            last_error, last_status = f"HTTP {response.status_code}", response.status_code
            continue
        if response.status_code != 200:
            raise TransportError(f"HTTP {response.status_code}: {response.text[:200]}", response.status_code)
        try:
            body = response.json()
        except ValueError as exc:
            raise ProtocolError(f"response body is not JSON: {exc}") from exc
        text = _extract_text(body)
        if text.startswith(request.prompt):  # some servers echo the prompt
            text = text[len(request.prompt):]
        usage = body.get("usage") or {}
        prompt_tokens = int(usage.get("prompt_tokens", token_count(request.prompt)))
        completion_tokens = int(usage.get("completion_tokens", token_count(text)))
        return text.strip(), latency_ms, prompt_tokens, completion_tokens
    raise TransportError(f"retries exhausted: {last_error}", last_status)


def generate(
    request: GenerationRequest,
    config: EndpointConfig,
    ledger: CostLedger | None = None,
    session: requests.Session | None = None,
    limiter: RateLimiter | None = None,
) -> Explanation:
    """Generate once against the live endpoint and record a ledger row.

    min_new_tokens cannot be enforced on arbitrary remote endpoints, so
    undersized outputs get exactly one re-prompt before MinLengthViolation.
    """
    session = session or requests.Session()
    text, latency_ms, prompt_tokens, completion_tokens = _call_once(request, config, session, limiter)
    if token_count(text) < request.params.min_new_tokens:
        text2, lat2, pt2, ct2 = _call_once(request, config, session, limiter)
        latency_ms += lat2
        prompt_tokens += pt2
        completion_tokens += ct2
        text = text2
    if token_count(text) < request.params.min_new_tokens:
        raise MinLengthViolation(
            f"output of {token_count(text)} tokens is below min_new_tokens={request.params.min_new_tokens}"
        )
    if ledger is not None:
        ledger.record(
            LedgerRow(
                cache_key=request.cache_key,
                latency_ms=latency_ms,
                prompt_tokens=prompt_tokens,
                completion_tokens=completion_tokens,
                cached=False,
            )
        )
    return Explanation(
        text=text,
        model_id=request.model_id,
        sampling=request.params,
        latency_ms=latency_ms,
        prompt_tokens=prompt_tokens,
        completion_tokens=completion_tokens,
    )


class CacheStore:
    """Content-addressed generation cache: one JSON document per cache key."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> Explanation | None:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
            return Explanation(
                text=raw["text"],
                model_id=raw["model_id"],
                sampling=SamplingParams(**raw["sampling"]),
                latency_ms=raw["latency_ms"],
                prompt_tokens=raw["prompt_tokens"],
                completion_tokens=raw["completion_tokens"],
            )
        except (ValueError, KeyError, TypeError) as exc:
            log.warning("corrupt cache entry %s (%s); treating as miss", path.name, exc)
            return None

    def put(self, key: str, explanation: Explanation) -> None:
        payload = json.dumps(
            {
                "text": explanation.text,
                "model_id": explanation.model_id,
                "sampling": explanation.sampling.as_dict(),
                "latency_ms": explanation.latency_ms,
                "prompt_tokens": explanation.prompt_tokens,
                "completion_tokens": explanation.completion_tokens,
            },
            ensure_ascii=False,
        )
        with self._lock:
            tmp = self._path(key).with_suffix(".tmp")
            tmp.write_text(payload, encoding="utf-8")
            tmp.replace(self._path(key))


def generate_cached(
    request: GenerationRequest,
    store: CacheStore,
    config: EndpointConfig,
    ledger: CostLedger | None = None,
    session: requests.Session | None = None,
    limiter: RateLimiter | None = None,
) -> Explanation:
    """Serve from the cache when possible; a hit makes no network call."""
    cached = store.get(request.cache_key)
    if cached is not None:
        if ledger is not None:
            ledger.record(
                LedgerRow(
                    cache_key=request.cache_key,
                    latency_ms=0,
                    prompt_tokens=cached.prompt_tokens,
                    completion_tokens=cached.completion_tokens,
                    cached=True,
                )
            )
        return cached
    explanation = generate(request, config, ledger=ledger, session=session, limiter=limiter)
    store.put(request.cache_key, explanation)
    return explanation
