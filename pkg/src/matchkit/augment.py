"""Emit binary-labeled (BL) and explanation-augmented (EA) corpora.

BL targets carry only the label; EA targets append a generated rationale
after the ``[explanation]`` separator. EA emission elicits one explanation
per labeled pair through the gateway cache, records per-pair generation
metadata in a sidecar file, and keeps going past individual failures so a
long run survives flaky generations.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .core import (
    EntityPair,
    Explanation,
    InvalidInputError,
    LinearizedInstance,
    SamplingParams,
    Variant,
    escape_markers,
    linearize_pair,
    render_target,
)
from .gateway import CacheStore, CostLedger, EndpointConfig, GenerationRequest, RateLimiter, generate_cached
from .prompting import PromptTemplate, build_explanation_prompt

log = logging.getLogger(__name__)


def emit_bl(pairs: list[EntityPair]) -> list[LinearizedInstance]:
    """One BL instance per labeled pair; unlabeled pairs are a caller error."""
    instances = []
    for pair in pairs:
        if pair.label is None:
            raise InvalidInputError(f"pair {pair.pair_id!r} is unlabeled; BL emission needs gold labels")
        instances.append(
            LinearizedInstance(
                input_text=linearize_pair(pair),
                target_text=render_target(pair.label),
                pair_id=pair.pair_id,
                variant=Variant.BL,
            )
        )
    return instances


@dataclass
class GenerationMeta:
    pair_id: str
    model_id: str
    sampling: dict
    latency_ms: int
    prompt_tokens: int
    completion_tokens: int

    def to_json(self) -> str:
        return json.dumps(self.__dict__, ensure_ascii=False)


@dataclass
class EmitResult:
    instances: list[LinearizedInstance]
    meta: list[GenerationMeta]
    failures: list[tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def emit_ea(
    pairs: list[EntityPair],
    template: PromptTemplate,
    store: CacheStore,
    config: EndpointConfig,
    params: SamplingParams | None = None,
    ledger: CostLedger | None = None,
    jobs: int = 0,
) -> EmitResult:
    """Elicit an explanation per labeled pair and emit EA instances.

    Generation fans out over at most ``config.max_concurrency`` workers (or
    fewer via ``jobs``); output order always follows input order. Failed
    pairs are skipped and reported so the caller can exit nonzero.
    """
    params = params or SamplingParams()
    limiter = RateLimiter(config.requests_per_second)
    workers = min(jobs or config.max_concurrency, config.max_concurrency)

    def run_one(pair: EntityPair) -> Explanation:
        if pair.label is None:
            raise InvalidInputError(f"pair {pair.pair_id!r} is unlabeled; EA emission needs gold labels")
        prompt = build_explanation_prompt(template, pair, pair.label)
        request = GenerationRequest(prompt=prompt, params=params, model_id=config.model_id)
        return generate_cached(request, store, config, ledger=ledger, limiter=limiter)

    outcomes: list[Explanation | Exception]
    if workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_one, pair) for pair in pairs]
            outcomes = []
            for future in futures:
                try:
                    outcomes.append(future.result())
                except Exception as exc:  # per-pair fault isolation
                    outcomes.append(exc)
    else:
        outcomes = []
        for pair in pairs:
            try:
                outcomes.append(run_one(pair))
            except Exception as exc:
                outcomes.append(exc)

    result = EmitResult(instances=[], meta=[])
    for pair, outcome in zip(pairs, outcomes):
        if isinstance(outcome, Exception):
            log.warning("explanation generation failed for %s: %s", pair.pair_id, outcome)
            result.failures.append((pair.pair_id, str(outcome)))
            continue
        result.instances.append(
            LinearizedInstance(
                input_text=linearize_pair(pair),
                target_text=render_target(pair.label, escape_markers(outcome.text)),
                pair_id=pair.pair_id,
                variant=Variant.EA,
            )
        )
        result.meta.append(
            GenerationMeta(
                pair_id=pair.pair_id,
                model_id=outcome.model_id,
                sampling=outcome.sampling.as_dict(),
                latency_ms=outcome.latency_ms,
                prompt_tokens=outcome.prompt_tokens,
                completion_tokens=outcome.completion_tokens,
            )
        )
    return result


def write_meta(path: str | Path, meta: list[GenerationMeta]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for entry in meta:
            handle.write(entry.to_json())
            handle.write("\n")
