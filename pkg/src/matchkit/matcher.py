"""Prediction sources: generative-endpoint adapters and an offline lexical baseline.

The lexical baseline exists because matchers can pass benchmarks on raw
token overlap alone; scoring it against minimally perturbed pairs makes
that failure mode visible without any model in the loop.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

from .core import EntityPair, LinearizedInstance, MatchLabel, parse_model_output
from .prompting import PromptTemplate, build_classification_prompt

log = logging.getLogger(__name__)

GENERATIVE = "generative-endpoint"
LEXICAL = "lexical-baseline"

InferFn = Callable[[str], str]


@dataclass(frozen=True)
class Prediction:
    pair_id: str
    predicted: MatchLabel | None  # None = unparseable
    explanation: str | None
    source: str
    raw_output: str

    def to_json(self) -> str:
        payload = {
            "pair_id": self.pair_id,
            "predicted": self.predicted.value if self.predicted else "unparseable",
            "source": self.source,
            "raw_output": self.raw_output,
        }
        if self.explanation is not None:
            payload["explanation"] = self.explanation
        return json.dumps(payload, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "Prediction":
        raw = json.loads(line)
        predicted = None if raw["predicted"] == "unparseable" else MatchLabel(raw["predicted"])
        return cls(
            pair_id=raw["pair_id"],
            predicted=predicted,
            explanation=raw.get("explanation"),
            source=raw["source"],
            raw_output=raw["raw_output"],
        )


def _predict_texts(
    items: list[tuple[str, str]], infer: InferFn, source: str
) -> tuple[list[Prediction], list[tuple[str, str]]]:
    predictions, failures = [], []
    for pair_id, text in items:
        try:
            output = infer(text)
        except Exception as exc:
            log.warning("inference failed for %s: %s", pair_id, exc)
            failures.append((pair_id, str(exc)))
            predictions.append(
                Prediction(pair_id=pair_id, predicted=None, explanation=None, source=source,
                           raw_output=f"<transport-error> {exc}")
            )
            continue
        label, explanation = parse_model_output(output)
        predictions.append(
            Prediction(pair_id=pair_id, predicted=label, explanation=explanation, source=source, raw_output=output)
        )
    return predictions, failures


def predict_generative(
    instances: list[LinearizedInstance], infer: InferFn
) -> tuple[list[Prediction], list[tuple[str, str]]]:
    """Send each instance's input text to a fine-tuned seq2seq endpoint.

    Targets are ignored; output order and length always mirror the input.
    Per-instance transport errors are recorded, not raised.
    """
    return _predict_texts([(i.pair_id, i.input_text) for i in instances], infer, GENERATIVE)


def predict_generative_icl(
    pairs: list[EntityPair], template: PromptTemplate, infer: InferFn
) -> tuple[list[Prediction], list[tuple[str, str]]]:
    """Few-shot mode: wrap each pair in a classification prompt before sending."""
    items = [(p.pair_id, build_classification_prompt(template, p)) for p in pairs]
    return _predict_texts(items, infer, GENERATIVE)


def _tfidf_vector(counts: Counter, idf: dict[str, float]) -> dict[str, float]:
    return {t: tf * idf[t] for t, tf in counts.items()}


def _cosine(u: dict[str, float], v: dict[str, float]) -> float:
    dot = sum(w * v[t] for t, w in u.items() if t in v)
    nu = math.sqrt(sum(w * w for w in u.values()))
    nv = math.sqrt(sum(w * w for w in v.values()))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return dot / (nu * nv)


def predict_lexical(pairs: list[EntityPair], threshold: float) -> list[Prediction]:
    """TF-IDF cosine over concatenated attribute values; >= threshold is a match.

    Symmetric in the two records. idf is computed over all records of the
    batch (each record is one document), matching the blocking weights.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    docs = []
    for pair in pairs:
        docs.append(Counter(pair.a.value_text().lower().split()))
        docs.append(Counter(pair.b.value_text().lower().split()))
    n = len(docs)
    df: Counter = Counter()
    for counts in docs:
        df.update(counts.keys())
    idf = {t: math.log((n + 1) / (df[t] + 1)) + 1.0 for t in df}

    predictions = []
    for index, pair in enumerate(pairs):
        similarity = _cosine(
            _tfidf_vector(docs[2 * index], idf), _tfidf_vector(docs[2 * index + 1], idf)
        )
        label = MatchLabel.MATCH if similarity >= threshold else MatchLabel.NOT_MATCH
        predictions.append(
            Prediction(
                pair_id=pair.pair_id,
                predicted=label,
                explanation=None,
                source=LEXICAL,
                raw_output=f"cosine={similarity:.6f}",
            )
        )
    return predictions


def write_predictions(path: str | Path, predictions: Iterable[Prediction]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for prediction in predictions:
            handle.write(prediction.to_json())
            handle.write("\n")


def read_predictions(path: str | Path) -> list[Prediction]:
    out = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                out.append(Prediction.from_json(line))
    return out
