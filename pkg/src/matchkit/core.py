"""Canonical data types, pair linearization, target rendering, and output parsing.

Everything in this module is immutable after construction and safe to use
from concurrent workers. Token counts throughout the toolkit mean maximal
runs of non-whitespace characters (``text.split()``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

ENTITY_A_MARKER = "[entity_a]"
ENTITY_B_MARKER = "[entity_b]"
COL_MARKER = "[COL]"
VAL_MARKER = "[VAL]"
EXPLANATION_SEP = "[explanation]"
UNK_TOKEN = "<unk>"

#: Markers that structure corpus text. Attribute values are escaped so these
#: can never appear verbatim inside a value (brackets become parentheses).
RESERVED_MARKERS = (
    ENTITY_A_MARKER,
    ENTITY_B_MARKER,
    COL_MARKER,
    VAL_MARKER,
    EXPLANATION_SEP,
    UNK_TOKEN,
)


class MatchkitError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(MatchkitError, ValueError):
    """An operation was handed data that violates its preconditions."""


def tokens(text: str) -> list[str]:
    """Split ``text`` into whitespace tokens."""
    return text.split()


def token_count(text: str) -> int:
    return len(text.split())


def escape_markers(text: str) -> str:
    """Replace reserved markers inside free text with a bracket-free form.

    ``[COL]`` becomes ``(COL)``, ``<unk>`` becomes ``(unk)``; all other text
    is untouched.
    """
    for marker in RESERVED_MARKERS:
        text = text.replace(marker, "(" + marker[1:-1] + ")")
    return text


class MatchLabel(Enum):
    MATCH = "match"
    NOT_MATCH = "not_match"

    @property
    def target_text(self) -> str:
        """Canonical rendering used in training targets."""
        return "Match" if self is MatchLabel.MATCH else "Not a Match"

    @property
    def prompt_text(self) -> str:
        """Canonical rendering used in few-shot prompt exemplars."""
        return "MATCH" if self is MatchLabel.MATCH else "NOT A MATCH"

    @classmethod
    def from_text(cls, text: str) -> "MatchLabel":
        label, _ = parse_model_output(text)
        if label is None:
            raise InvalidInputError(f"unrecognized label rendering: {text!r}")
        return label


class Variant(Enum):
    """Corpus variants: binary-labeled, explanation-augmented, and the five ablations."""

    BL = "bl"
    EA = "ea"
    ABL_A = "abl_a"
    ABL_B = "abl_b"
    ABL_C = "abl_c"
    ABL_D = "abl_d"
    ABL_E = "abl_e"

    @property
    def has_explanation(self) -> bool:
        return self is not Variant.BL


@dataclass(frozen=True)
class EntityRecord:
    """One record: an ordered list of (attribute name, value) pairs.

    Attribute order is the dataset's declared schema order and is preserved
    through serialization. Names must be unique within a record.
    """

    attrs: tuple[tuple[str, str], ...]
    source_id: str = ""
    entity_id: str = ""

    def __post_init__(self) -> None:
        names = [name for name, _ in self.attrs]
        if len(names) != len(set(names)):
            raise InvalidInputError(f"duplicate attribute names in record {self.entity_id!r}")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]], source_id: str = "", entity_id: str = "") -> "EntityRecord":
        return cls(attrs=tuple((str(n), str(v)) for n, v in pairs), source_id=source_id, entity_id=entity_id)

    def value_text(self) -> str:
        """All attribute values joined into one description string."""
        return " ".join(v for _, v in self.attrs if v)


@dataclass(frozen=True)
class EntityPair:
    a: EntityRecord
    b: EntityRecord
    label: MatchLabel | None
    pair_id: str


@dataclass(frozen=True)
class SamplingParams:
    max_new_tokens: int = 128
    min_new_tokens: int = 5
    top_k: int = 50
    top_p: float = 0.95

    def __post_init__(self) -> None:
        if self.min_new_tokens > self.max_new_tokens:
            raise InvalidInputError("min_new_tokens must not exceed max_new_tokens")
        if not 0.0 < self.top_p <= 1.0:
            raise InvalidInputError("top_p must lie in (0, 1]")
        if self.top_k < 1:
            raise InvalidInputError("top_k must be >= 1")

    def as_dict(self) -> dict:
        return {
            "max_new_tokens": self.max_new_tokens,
            "min_new_tokens": self.min_new_tokens,
            "top_k": self.top_k,
            "top_p": self.top_p,
        }


@dataclass(frozen=True)
class Explanation:
    """A generated rationale plus its provenance."""

    text: str
    model_id: str
    sampling: SamplingParams
    latency_ms: int
    prompt_tokens: int
    completion_tokens: int

    def __post_init__(self) -> None:
        if token_count(self.text) < 1:
            raise InvalidInputError("explanation text must contain at least one token")
        if self.latency_ms < 0:
            raise InvalidInputError("latency_ms must be >= 0")


@dataclass(frozen=True)
class LinearizedInstance:
    """One serialized training/eval instance, the unit of corpus files."""

    input_text: str
    target_text: str
    pair_id: str
    variant: Variant

    def __post_init__(self) -> None:
        if not self.input_text.startswith(ENTITY_A_MARKER):
            raise InvalidInputError(f"input for {self.pair_id!r} must begin with {ENTITY_A_MARKER}")
        if not (self.target_text.startswith("Match") or self.target_text.startswith("Not a Match")):
            raise InvalidInputError(f"target for {self.pair_id!r} must begin with a canonical label")
        if self.variant.has_explanation and self.target_text.count(EXPLANATION_SEP) != 1:
            raise InvalidInputError(
                f"{self.variant.value} target for {self.pair_id!r} must contain {EXPLANATION_SEP} exactly once"
            )

    def with_target(self, target_text: str, variant: Variant) -> "LinearizedInstance":
        return replace(self, target_text=target_text, variant=variant)


def linearize_pair(pair: EntityPair) -> str:
    """Serialize a candidate pair as one marker-delimited token sequence.

    Output shape: ``[entity_a] [COL] <attr> [VAL] value ... [entity_b] ...``
    with single spaces between structural tokens, attributes in schema
    order, and empty values rendered as empty (the marker pair is still
    emitted). Deterministic; reserved markers inside values are escaped.
    """
    parts: list[str] = []
    for record, marker in ((pair.a, ENTITY_A_MARKER), (pair.b, ENTITY_B_MARKER)):
        if not record.attrs:
            raise InvalidInputError(f"record {record.entity_id!r} in pair {pair.pair_id!r} has no attributes")
        parts.append(marker)
        for name, value in record.attrs:
            parts.extend((COL_MARKER, f"<{name}>", VAL_MARKER, escape_markers(value)))
    return " ".join(parts)


def split_linearized(input_text: str) -> tuple[str, str]:
    """Recover the two entity fragments of a linearized input (for display)."""
    if not input_text.startswith(ENTITY_A_MARKER):
        raise InvalidInputError("not a linearized pair input")
    body = input_text[len(ENTITY_A_MARKER):]
    a_text, sep, b_text = body.partition(ENTITY_B_MARKER)
    if not sep:
        raise InvalidInputError("linearized input lacks the second entity marker")
    return a_text.strip(), b_text.strip()


def render_target(label: MatchLabel, explanation: str | None = None) -> str:
    """Render a target string: the label alone, or label + explanation.

    With an explanation the output is ``<label> [explanation] <text>``.
    """
    if explanation is None:
        return label.target_text
    if not explanation.strip():
        raise InvalidInputError("explanation must be non-empty when provided")
    return f"{label.target_text} {EXPLANATION_SEP} {explanation}"


_NEGATIVE_RENDERINGS = ("not a match", "no match", "not_match")
_POSITIVE_RENDERINGS = ("match",)


def _label_at_start(lowered: str) -> tuple[MatchLabel, int] | None:
    # Negative renderings are tested before positive so "not a match..."
    # can never be claimed by the bare "match" prefix.
    for renderings, label in (
        (_NEGATIVE_RENDERINGS, MatchLabel.NOT_MATCH),
        (_POSITIVE_RENDERINGS, MatchLabel.MATCH),
    ):
        for rendering in renderings:
            if lowered.startswith(rendering):
                end = len(rendering)
                if end == len(lowered) or not lowered[end].isalnum():
                    return label, end
    return None


def parse_model_output(text: str) -> tuple[MatchLabel | None, str | None]:
    """Parse generated text into (label, explanation).

    Case-insensitive. The label must open the output (after leading
    whitespace) and be followed by a non-alphanumeric boundary. Text after
    a literal ``[explanation]`` separator, or failing that after the label
    token itself, is returned as the explanation. Returns ``(None, None)``
    when no label is recognized; callers count such outputs as unparseable.
    """
    stripped = text.strip()
    found = _label_at_start(stripped.lower())
    if found is None:
        return None, None
    label, end = found
    rest = stripped[end:].lstrip(" \t\r\n.,:;!?-")
    if EXPLANATION_SEP in rest:
        rest = rest.split(EXPLANATION_SEP, 1)[1]
    explanation = rest.strip()
    return label, explanation or None


# --- canonical corpus files -------------------------------------------------
#
# JSON-lines, one instance per line, UTF-8, LF endings, fixed field order
# {pair_id, variant, input, target}. Golden tests compare files bit-exactly.


def instance_to_json(instance: LinearizedInstance) -> str:
    return json.dumps(
        {
            "pair_id": instance.pair_id,
            "variant": instance.variant.value,
            "input": instance.input_text,
            "target": instance.target_text,
        },
        ensure_ascii=False,
    )


def instance_from_json(line: str) -> LinearizedInstance:
    raw = json.loads(line)
    return LinearizedInstance(
        input_text=raw["input"],
        target_text=raw["target"],
        pair_id=raw["pair_id"],
        variant=Variant(raw["variant"]),
    )


def write_corpus(path: str | Path, instances: Iterable[LinearizedInstance]) -> int:
    """Write a corpus file; returns the number of lines written."""
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for instance in instances:
            handle.write(instance_to_json(instance))
            handle.write("\n")
            count += 1
    return count


def read_corpus(path: str | Path) -> Iterator[LinearizedInstance]:
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                yield instance_from_json(line)
