"""Scoring and report tables: P/R/F-1, corpus-variant deltas, flip rate,
majority vote, and Fleiss's kappa.

All reported percentages are exact decimal ratios rounded half-up to two
places so report files diff bit-exactly across runs.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Mapping, Sequence

from .core import InvalidInputError, MatchkitError, MatchLabel
from .matcher import Prediction

log = logging.getLogger(__name__)

TWO_PLACES = Decimal("0.01")


def _pct(numerator: int | Decimal, denominator: int | Decimal) -> Decimal:
    if denominator == 0:
        return Decimal("0.00")
    return (Decimal(numerator) * 100 / Decimal(denominator)).quantize(TWO_PLACES, rounding=ROUND_HALF_UP)


def round2(value: Decimal) -> Decimal:
    return value.quantize(TWO_PLACES, rounding=ROUND_HALF_UP)


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def precision(self) -> Decimal:
        """Percentage to 2 decimals; 0 when nothing was predicted positive."""
        return _pct(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> Decimal:
        return _pct(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> Decimal:
        # Degenerate all-negative case: a matcher that predicts every true
        # non-match correctly scores perfect by convention.
        if self.tp == 0 and self.fp == 0 and self.fn == 0:
            return Decimal("100.00")
        p = Decimal(self.tp) * 100 / Decimal(self.tp + self.fp) if self.tp + self.fp else Decimal(0)
        r = Decimal(self.tp) * 100 / Decimal(self.tp + self.fn) if self.tp + self.fn else Decimal(0)
        if p + r == 0:
            return Decimal("0.00")
        return round2(2 * p * r / (p + r))

    def as_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
            "precision": str(self.precision),
            "recall": str(self.recall),
            "f1": str(self.f1),
        }


def score(
    predictions: Sequence[Prediction],
    golds: Mapping[str, MatchLabel],
    unparseable_as: MatchLabel = MatchLabel.NOT_MATCH,
) -> Metrics:
    """Confusion counts with Match as the positive class.

    Unparseable predictions count as ``unparseable_as`` (non-match by
    default, which is conservative for the positive class). Every prediction
    must resolve in the golds.
    """
    tp = fp = fn = tn = 0
    for prediction in predictions:
        if prediction.pair_id not in golds:
            raise InvalidInputError(f"prediction for unknown pair_id {prediction.pair_id!r}")
        predicted = prediction.predicted if prediction.predicted is not None else unparseable_as
        gold = golds[prediction.pair_id]
        if predicted is MatchLabel.MATCH and gold is MatchLabel.MATCH:
            tp += 1
        elif predicted is MatchLabel.MATCH:
            fp += 1
        elif gold is MatchLabel.MATCH:
            fn += 1
        else:
            tn += 1
    return Metrics(tp=tp, fp=fp, fn=fn, tn=tn)


# --- variant delta tables ----------------------------------------------------


@dataclass(frozen=True)
class DeltaRow:
    setting: str
    train_dataset: str
    test_dataset: str
    bl: Decimal | None
    ea: dict  # variant name -> Decimal | None
    delta: Decimal | None  # primary EA variant minus BL


@dataclass
class DeltaReport:
    primary_variant: str
    rows: list[DeltaRow]
    aggregate_delta: Decimal | None
    variant_aggregates: dict = field(default_factory=dict)  # variant -> mean(variant - primary)


def delta_table(
    manifests: Sequence[tuple[str, str, str]],
    bl_f1: Mapping[tuple[str, str], Decimal | float | str],
    ea_f1_by_variant: Mapping[str, Mapping[tuple[str, str], Decimal | float | str]],
    primary_variant: str,
) -> DeltaReport:
    """Per-pairing F-1 columns with the primary-EA-minus-BL delta.

    ``manifests`` rows are (setting, train, test). Every delta is the exact
    column difference rounded to 2 decimals. The aggregate row is the mean
    delta; each non-primary variant also aggregates its mean difference
    against the primary variant, which is how ablation columns are compared.
    """
    if primary_variant not in ea_f1_by_variant:
        raise InvalidInputError(f"primary variant {primary_variant!r} missing from EA columns")

    def lookup(column: Mapping, key: tuple[str, str]) -> Decimal | None:
        value = column.get(key)
        return None if value is None else round2(Decimal(str(value)))

    rows = []
    deltas = []
    variant_diffs: dict[str, list[Decimal]] = {v: [] for v in ea_f1_by_variant if v != primary_variant}
    for setting, train, test in manifests:
        key = (train, test)
        bl = lookup(bl_f1, key)
        ea = {variant: lookup(column, key) for variant, column in ea_f1_by_variant.items()}
        primary = ea[primary_variant]
        if bl is None or primary is None:
            log.warning("missing F-1 column for %s -> %s; row emitted with blanks", train, test)
            delta = None
        else:
            delta = round2(primary - bl)
            deltas.append(delta)
        for variant, value in ea.items():
            if variant != primary_variant and value is not None and primary is not None:
                variant_diffs[variant].append(round2(value - primary))
        rows.append(DeltaRow(setting=setting, train_dataset=train, test_dataset=test, bl=bl, ea=ea, delta=delta))

    aggregate = round2(sum(deltas) / len(deltas)) if deltas else None
    variant_aggregates = {
        variant: round2(sum(diffs) / len(diffs)) for variant, diffs in variant_diffs.items() if diffs
    }
    return DeltaReport(
        primary_variant=primary_variant,
        rows=rows,
        aggregate_delta=aggregate,
        variant_aggregates=variant_aggregates,
    )


def _cell(value: Decimal | None) -> str:
    return "" if value is None else str(value)


def render_delta_text(report: DeltaReport) -> str:
    variants = list(report.rows[0].ea) if report.rows else [report.primary_variant]
    header = ["setting", "train", "test", "bl", *variants, "delta"]
    body = [
        [row.setting, row.train_dataset, row.test_dataset, _cell(row.bl)]
        + [_cell(row.ea.get(v)) for v in variants]
        + [_cell(row.delta)]
        for row in report.rows
    ]
    footer = ["aggregate", "", "", ""] + [
        _cell(report.variant_aggregates.get(v)) if v != report.primary_variant else ""
        for v in variants
    ] + [_cell(report.aggregate_delta)]
    table = [header] + body + [footer]
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in table]
    return "\n".join(lines) + "\n"


def render_delta_csv(report: DeltaReport) -> str:
    variants = list(report.rows[0].ea) if report.rows else [report.primary_variant]
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["setting", "train", "test", "bl", *variants, "delta"])
    for row in report.rows:
        writer.writerow(
            [row.setting, row.train_dataset, row.test_dataset, _cell(row.bl)]
            + [_cell(row.ea.get(v)) for v in variants]
            + [_cell(row.delta)]
        )
    return buffer.getvalue()


def render_delta_json(report: DeltaReport) -> str:
    payload = {
        "primary_variant": report.primary_variant,
        "rows": [
            {
                "setting": row.setting,
                "train": row.train_dataset,
                "test": row.test_dataset,
                "bl": _cell(row.bl) or None,
                "ea": {v: (_cell(x) or None) for v, x in row.ea.items()},
                "delta": _cell(row.delta) or None,
            }
            for row in report.rows
        ],
        "aggregate_delta": _cell(report.aggregate_delta) or None,
        "variant_aggregates": {v: str(x) for v, x in report.variant_aggregates.items()},
    }
    return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"


# --- robustness flip rate ----------------------------------------------------


def flip_rate(before: Sequence[Prediction], after: Sequence[Prediction]) -> Decimal:
    """Percentage of pairs predicted Match before and Not-a-Match after.

    Callers restrict the before-set to gold-match pairs; both sets must
    cover the same pair ids. Unparseable predictions never count as flips.
    """
    before_by_id = {p.pair_id: p.predicted for p in before}
    after_by_id = {p.pair_id: p.predicted for p in after}
    if set(before_by_id) != set(after_by_id):
        raise InvalidInputError("before/after prediction sets cover different pair ids")
    if not before_by_id:
        return Decimal("0.00")
    flipped = sum(
        1
        for pair_id, was in before_by_id.items()
        if was is MatchLabel.MATCH and after_by_id[pair_id] is MatchLabel.NOT_MATCH
    )
    return _pct(flipped, len(before_by_id))


# --- annotation aggregation --------------------------------------------------

QUESTIONS = ("intrinsic", "extrinsic")


@dataclass(frozen=True)
class AnnotationRecord:
    instance_id: str
    rater_id: str
    intrinsic_ok: bool
    extrinsic_error: bool
    timestamp: str = ""

    def answer(self, question: str) -> bool:
        if question == "intrinsic":
            return self.intrinsic_ok
        if question == "extrinsic":
            return self.extrinsic_error
        raise InvalidInputError(f"unknown question {question!r}; expected one of {QUESTIONS}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "instance_id": self.instance_id,
                "rater": self.rater_id,
                "intrinsic_ok": self.intrinsic_ok,
                "extrinsic_error": self.extrinsic_error,
                "timestamp": self.timestamp,
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, line: str) -> "AnnotationRecord":
        raw = json.loads(line)
        return cls(
            instance_id=raw["instance_id"],
            rater_id=raw["rater"],
            intrinsic_ok=bool(raw["intrinsic_ok"]),
            extrinsic_error=bool(raw["extrinsic_error"]),
            timestamp=raw.get("timestamp", ""),
        )


def group_by_instance(records: Iterable[AnnotationRecord]) -> dict[str, list[AnnotationRecord]]:
    grouped: dict[str, list[AnnotationRecord]] = {}
    for record in records:
        grouped.setdefault(record.instance_id, []).append(record)
    return grouped


def majority_vote(records: Iterable[AnnotationRecord]) -> dict[str, dict[str, bool]]:
    """Per-instance, per-question consensus; requires an odd rater count."""
    consensus = {}
    for instance_id, group in group_by_instance(records).items():
        if len(group) % 2 == 0:
            raise InvalidInputError(f"instance {instance_id!r} has an even number of ratings ({len(group)})")
        consensus[instance_id] = {
            question: sum(r.answer(question) for r in group) * 2 > len(group) for question in QUESTIONS
        }
    return consensus


def fleiss_kappa(records: Iterable[AnnotationRecord], question: str) -> float:
    """Chance-corrected agreement for a fixed rater count over two categories.

    kappa = (P_bar - Pe_bar) / (1 - Pe_bar), with per-item agreement
    P_i = [sum_j n_ij (n_ij - 1)] / [n (n - 1)]. When every rating lands in
    one category, expected agreement is 1 and kappa is 1.0 by convention.
    """
    grouped = group_by_instance(records)
    if not grouped:
        raise InvalidInputError("no annotation records")
    counts = {len(group) for group in grouped.values()}
    if len(counts) != 1:
        raise InvalidInputError(f"instances carry differing rating counts: {sorted(counts)}")
    n = counts.pop()
    if n < 2:
        raise InvalidInputError("Fleiss's kappa needs at least 2 ratings per instance")

    yes_counts = [sum(r.answer(question) for r in group) for group in grouped.values()]
    items = len(yes_counts)
    total = items * n
    p_yes = sum(yes_counts) / total
    p_no = 1.0 - p_yes
    p_bar = sum(yes * (yes - 1) + (n - yes) * (n - yes - 1) for yes in yes_counts) / (items * n * (n - 1))
    pe_bar = p_yes * p_yes + p_no * p_no
    if pe_bar == 1.0:
        if p_bar == 1.0:
            return 1.0
        raise MatchkitError("inconsistent agreement state")  # pragma: no cover
    return (p_bar - pe_bar) / (1.0 - pe_bar)
