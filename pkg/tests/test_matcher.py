"""Generative adapter and lexical baseline."""

from __future__ import annotations

import math
from collections import Counter

from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import KINGSTON_PAIR, make_pairs
from matchkit.core import EntityPair, EntityRecord, MatchLabel
from matchkit.augment import emit_bl
from matchkit.matcher import (
    predict_generative,
    predict_generative_icl,
    predict_lexical,
    read_predictions,
    write_predictions,
)
from matchkit.perturb import perturb_match_pair
from matchkit.prompting import load_template


def test_generative_parses_labels_and_explanations():
    instances = emit_bl(make_pairs(4))
    outputs = iter(
        [
            "Match",
            "Not a Match [explanation] different brand",
            "these are hard to say",
            "MATCH",
        ]
    )
    predictions, failures = predict_generative(instances, lambda text: next(outputs))
    assert failures == []
    assert [p.predicted for p in predictions] == [
        MatchLabel.MATCH,
        MatchLabel.NOT_MATCH,
        None,
        MatchLabel.MATCH,
    ]
    assert predictions[1].explanation == "different brand"
    assert predictions[2].raw_output == "these are hard to say"  # unparseable keeps the audit trail
    assert [p.pair_id for p in predictions] == [i.pair_id for i in instances]


def test_generative_transport_errors_recorded_not_raised():
    instances = emit_bl(make_pairs(3))

    def flaky(text: str) -> str:
        if instances[1].pair_id.endswith("1") and instances[1].input_text == text:
            raise ConnectionError("endpoint went away")
        return "Match"

    predictions, failures = predict_generative(instances, flaky)
    assert len(predictions) == 3  # never drops or reorders
    assert [p.pair_id for p in predictions] == [i.pair_id for i in instances]
    assert len(failures) == 1 and failures[0][0] == instances[1].pair_id
    assert predictions[1].predicted is None
    assert "transport-error" in predictions[1].raw_output


def test_generative_icl_uses_classification_prompts():
    pairs = make_pairs(2)
    seen = []

    def capture(text: str) -> str:
        seen.append(text)
        return "Not a Match"

    predictions, _ = predict_generative_icl(pairs, load_template("consumer-electronics"), capture)
    assert all(p.predicted is MatchLabel.NOT_MATCH for p in predictions)
    for prompt in seen:
        assert prompt.count("Explanation:") == 2
        assert prompt.rstrip().endswith(tuple(f"[PRICE] {dict(p.b.attrs)['price']}" for p in pairs))


def test_lexical_identical_and_disjoint():
    same = EntityPair(
        a=EntityRecord.from_pairs([("name", "acme rocket skates")], "l", "i-a"),
        b=EntityRecord.from_pairs([("name", "acme rocket skates")], "r", "i-b"),
        label=None,
        pair_id="identical",
    )
    different = EntityPair(
        a=EntityRecord.from_pairs([("name", "alpha beta gamma")], "l", "d-a"),
        b=EntityRecord.from_pairs([("name", "omega psi chi")], "r", "d-b"),
        label=None,
        pair_id="disjoint",
    )
    predictions = predict_lexical([same, different], threshold=0.8)
    assert predictions[0].predicted is MatchLabel.MATCH
    assert predictions[1].predicted is MatchLabel.NOT_MATCH
    assert predictions[0].raw_output.startswith("cosine=1.0")
    assert predictions[1].raw_output.startswith("cosine=0.0")


def hand_cosine(pair: EntityPair, corpus: list[EntityPair]) -> float:
    """Independent tf-idf cosine over the same document collection."""
    docs = []
    for p in corpus:
        docs.append(Counter(p.a.value_text().lower().split()))
        docs.append(Counter(p.b.value_text().lower().split()))
    n = len(docs)
    df = Counter()
    for d in docs:
        df.update(set(d))
    idf = {t: math.log((n + 1) / (df[t] + 1)) + 1 for t in df}
    index = corpus.index(pair)
    u = {t: c * idf[t] for t, c in docs[2 * index].items()}
    v = {t: c * idf[t] for t, c in docs[2 * index + 1].items()}
    dot = sum(w * v.get(t, 0.0) for t, w in u.items())
    return dot / math.sqrt(sum(w * w for w in u.values())) / math.sqrt(sum(w * w for w in v.values()))


def test_lexical_kingston_overlap_failure_mode():
    perturbed, _ = perturb_match_pair(KINGSTON_PAIR)
    corpus = [KINGSTON_PAIR, perturbed]
    original_cos = hand_cosine(KINGSTON_PAIR, corpus)
    perturbed_cos = hand_cosine(perturbed, corpus)
    threshold = min(original_cos, perturbed_cos) - 0.05
    predictions = predict_lexical(corpus, threshold=threshold)
    assert float(predictions[0].raw_output.split("=")[1]) == round(original_cos, 6)
    assert float(predictions[1].raw_output.split("=")[1]) == round(perturbed_cos, 6)
    # the capacity swap barely moves the overlap score, so the baseline keeps
    # calling the edited (now non-match) pair a match: the failure mode the
    # robustness protocol probes
    assert abs(original_cos - perturbed_cos) < 0.05
    assert predictions[0].predicted is MatchLabel.MATCH
    assert predictions[1].predicted is MatchLabel.MATCH


def test_lexical_symmetry():
    pairs = make_pairs(10, seed=21)
    swapped = [EntityPair(a=p.b, b=p.a, label=p.label, pair_id=p.pair_id) for p in pairs]
    forward = predict_lexical(pairs, threshold=0.5)
    backward = predict_lexical(swapped, threshold=0.5)
    assert [p.predicted for p in forward] == [p.predicted for p in backward]


@given(st.floats(min_value=0.0, max_value=1.0))
@settings(max_examples=25, deadline=None)
def test_lexical_threshold_monotonicity(threshold):
    pairs = make_pairs(12, seed=33)
    low = sum(p.predicted is MatchLabel.MATCH for p in predict_lexical(pairs, 0.0))
    at = sum(p.predicted is MatchLabel.MATCH for p in predict_lexical(pairs, threshold))
    assert at <= low == len(pairs)


def test_prediction_file_roundtrip(tmp_path):
    instances = emit_bl(make_pairs(3))
    outputs = iter(["Match", "garbled", "Not a Match [explanation] sizes differ"])
    predictions, _ = predict_generative(instances, lambda _: next(outputs))
    path = tmp_path / "predictions.jsonl"
    write_predictions(path, predictions)
    assert read_predictions(path) == predictions
    assert '"predicted": "unparseable"' in path.read_text(encoding="utf-8")
