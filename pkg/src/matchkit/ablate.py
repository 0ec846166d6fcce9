"""The five explanation ablations applied to EA corpora.

Each transform rewrites the explanation of one EA instance:

  A  junk substitution: random English words, original token length kept
  B  stopword removal, then random drops down to half the original length
  C  TF-IDF weighted token sampling down to half length, emitted by score
  D  dataset-level generic explanation (constant per dataset and label)
  E  random corruption: half the token positions become ``<unk>``

All randomness comes from a per-instance RNG seeded by (seed, pair_id), so
an ablated corpus is a pure function of (spec, corpus) and reruns are
byte-identical. Half-length targets round up, keeping at least one token.
"""

from __future__ import annotations

import math
import random
import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

from . import assets
from .core import (
    EXPLANATION_SEP,
    EntityPair,
    InvalidInputError,
    LinearizedInstance,
    MatchLabel,
    Variant,
    parse_model_output,
    render_target,
)
from .prompting import generic_explanation

_EDGE_PUNCT = re.compile(r"^\W+|\W+$", re.UNICODE)


def normalize_token(token: str) -> str:
    """Lowercase and strip non-alphanumeric edge punctuation."""
    return _EDGE_PUNCT.sub("", token.lower())


def is_stopword(token: str, stopword_set: frozenset[str]) -> bool:
    return normalize_token(token) in stopword_set


class AblationKind(Enum):
    A_JUNK = "a"
    B_RANDOM_DROP = "b"
    C_TFIDF = "c"
    D_GENERIC = "d"
    E_CORRUPT = "e"

    @property
    def variant(self) -> Variant:
        return Variant(f"abl_{self.value}")


@dataclass(frozen=True)
class AblationSpec:
    kind: AblationKind
    seed: int
    dataset_id: str = ""
    retain_fraction: float = 0.5
    wordlist: tuple[str, ...] | None = None
    stopword_set: frozenset[str] | None = None
    generic_templates: Mapping[str, str] | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.retain_fraction < 1.0:
            raise InvalidInputError("retain_fraction must lie in (0, 1)")

    def rng_for(self, pair_id: str) -> random.Random:
        return random.Random(f"{self.seed}:{pair_id}")

    def words(self) -> tuple[str, ...]:
        return self.wordlist if self.wordlist is not None else assets.wordlist()

    def stopwords(self) -> frozenset[str]:
        return self.stopword_set if self.stopword_set is not None else assets.stopwords()


@dataclass(frozen=True)
class CorpusStats:
    """Document frequencies where one document is a pair's entity descriptions plus its label."""

    doc_count: int
    df: Mapping[str, int]

    def idf(self, token: str) -> float:
        return math.log((self.doc_count + 1) / (self.df.get(token, 0) + 1)) + 1.0


def build_stats(pairs: Iterable[EntityPair]) -> CorpusStats:
    doc_count = 0
    df: Counter = Counter()
    for pair in pairs:
        doc_count += 1
        text = pair.a.value_text() + " " + pair.b.value_text()
        if pair.label is not None:
            text += " " + pair.label.target_text
        df.update({normalize_token(t) for t in text.split()} - {""})
    return CorpusStats(doc_count=doc_count, df=dict(df))


def _junk(tokens: list[str], rng: random.Random, words: tuple[str, ...]) -> list[str]:
    return [rng.choice(words) for _ in tokens]


def _random_drop(
    tokens: list[str], rng: random.Random, stopword_set: frozenset[str], keep_target: int
) -> list[str]:
    survivors = [t for t in tokens if not is_stopword(t, stopword_set)]
    keep = min(len(survivors), keep_target)
    positions = sorted(rng.sample(range(len(survivors)), keep))
    return [survivors[i] for i in positions]


def _weighted_sample_positions(rng: random.Random, weights: list[float], k: int) -> list[int]:
    """k distinct indices, each draw proportional to weight; uniform when all weights vanish."""
    remaining = list(range(len(weights)))
    chosen = []
    for _ in range(k):
        total = sum(weights[i] for i in remaining)
        if total <= 0.0:
            pick = remaining[min(int(rng.random() * len(remaining)), len(remaining) - 1)]
        else:
            threshold = rng.random() * total
            acc = 0.0
            pick = remaining[-1]
            for i in remaining:
                acc += weights[i]
                if acc >= threshold:
                    pick = i
                    break
        remaining.remove(pick)
        chosen.append(pick)
    return chosen


def _tfidf_sample(tokens: list[str], rng: random.Random, stats: CorpusStats, keep_target: int) -> list[str]:
    normalized = [n for n in (normalize_token(t) for t in tokens) if n]
    if not normalized:
        return []
    tf = Counter(normalized)
    scores = {token: tf[token] * stats.idf(token) for token in tf}
    keep = min(len(normalized), keep_target)
    positions = _weighted_sample_positions(rng, [scores[t] for t in normalized], keep)
    chosen = [normalized[i] for i in positions]
    chosen.sort(key=lambda t: (-scores[t], t))
    return chosen


def _corrupt(tokens: list[str], rng: random.Random, replace_target: int) -> list[str]:
    out = list(tokens)
    for position in rng.sample(range(len(tokens)), replace_target):
        out[position] = "<unk>"
    return out


def ablate(
    instance: LinearizedInstance,
    spec: AblationSpec,
    stats: CorpusStats | None = None,
) -> LinearizedInstance:
    """Apply one ablation to one EA instance.

    The result keeps the instance's input and label; only the explanation is
    rewritten (an explanation may ablate to zero tokens, in which case the
    separator is still emitted).
    """
    if instance.variant is not Variant.EA:
        raise InvalidInputError(f"ablations apply to EA corpora; got variant {instance.variant.value!r}")
    label, explanation = parse_model_output(instance.target_text)
    if label is None or explanation is None:
        raise InvalidInputError(f"instance {instance.pair_id!r} carries no explanation to ablate")

    tokens = explanation.split()
    half = math.ceil(len(tokens) * spec.retain_fraction)
    rng = spec.rng_for(instance.pair_id)

    if spec.kind is AblationKind.A_JUNK:
        new_tokens = _junk(tokens, rng, spec.words())
    elif spec.kind is AblationKind.B_RANDOM_DROP:
        new_tokens = _random_drop(tokens, rng, spec.stopwords(), half)
    elif spec.kind is AblationKind.C_TFIDF:
        if stats is None:
            raise InvalidInputError("the TF-IDF ablation requires corpus stats")
        new_tokens = _tfidf_sample(tokens, rng, stats, half)
    elif spec.kind is AblationKind.D_GENERIC:
        if not spec.dataset_id:
            raise InvalidInputError("the generic-explanation ablation requires a dataset_id")
        templates = dict(spec.generic_templates) if spec.generic_templates is not None else None
        new_tokens = generic_explanation(spec.dataset_id, label, templates).split()
    elif spec.kind is AblationKind.E_CORRUPT:
        new_tokens = _corrupt(tokens, rng, half)
    else:  # pragma: no cover
        raise InvalidInputError(f"unknown ablation kind {spec.kind!r}")

    new_explanation = " ".join(new_tokens)
    if new_explanation:
        target = render_target(label, new_explanation)
    else:
        target = f"{label.target_text} {EXPLANATION_SEP}"
    return instance.with_target(target, spec.kind.variant)


def ablate_corpus(
    instances: Iterable[LinearizedInstance],
    spec: AblationSpec,
    stats: CorpusStats | None = None,
) -> list[LinearizedInstance]:
    return [ablate(instance, spec, stats) for instance in instances]
