"""Minimal edits that turn a gold-matched pair into a non-match.

Used by the robustness protocol: a matcher that leans on raw token overlap
will keep predicting a match after a one-token change such as a capacity
swap (128G -> 32G) or a brand swap (Nike -> Adidas). Every emitted edit
changes at most two tokens and relabels the pair as a non-match.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Mapping

from . import assets
from .core import EntityPair, EntityRecord, InvalidInputError, MatchkitError, MatchLabel
from .ablate import normalize_token

_QUANTITY = re.compile(r'^(\d+(?:\.\d+)?)([A-Za-z%"\']*)$')


class Unperturbable(MatchkitError):
    """No edit rule applies to this pair; callers report and skip it."""


@dataclass(frozen=True)
class EditDescription:
    rule: str  # "quantity" | "brand" | "override"
    side: str  # "a" | "b"
    old_token: str
    new_token: str

    def as_dict(self) -> dict:
        return {"rule": self.rule, "side": self.side, "old_token": self.old_token, "new_token": self.new_token}


def _side_tokens(record: EntityRecord) -> list[str]:
    out = []
    for _, value in record.attrs:
        out.extend(value.split())
    return out


def _quantity_value(token: str) -> Decimal | None:
    match = _QUANTITY.match(token)
    return Decimal(match.group(1)) if match else None


def _shrink_quantity(token: str) -> str:
    match = _QUANTITY.match(token)
    number, suffix = match.group(1), match.group(2)
    if "." in number:
        decimals = len(number.split(".")[1])
        quantum = Decimal(1).scaleb(-decimals)
        shrunk = (Decimal(number) / 4).quantize(quantum, rounding=ROUND_HALF_UP)
        if shrunk == Decimal(number) or shrunk <= 0:
            shrunk = Decimal(number) + 1
        return f"{shrunk}{suffix}"
    value = int(number)
    shrunk = value // 4
    if shrunk == 0 or shrunk == value:
        shrunk = value + 1
    return f"{shrunk}{suffix}"


def _replace_token_in_record(record: EntityRecord, old_token: str, new_token: str) -> EntityRecord | None:
    pattern = re.compile(r"(?<!\S)" + re.escape(old_token) + r"(?!\S)")
    for index, (name, value) in enumerate(record.attrs):
        if pattern.search(value):
            new_value = pattern.sub(new_token, value, count=1)
            attrs = list(record.attrs)
            attrs[index] = (name, new_value)
            return replace(record, attrs=tuple(attrs))
    return None


def _match_case(replacement: str, original: str) -> str:
    if original.isupper():
        return replacement.upper()
    if original.islower():
        return replacement.lower()
    return replacement


def _quantity_edit(pair: EntityPair) -> tuple[EntityRecord, EditDescription] | None:
    values_a = {v for t in _side_tokens(pair.a) if (v := _quantity_value(t)) is not None}
    shared = sorted(
        {v for t in _side_tokens(pair.b) if (v := _quantity_value(t)) is not None} & values_a,
        reverse=True,
    )
    # The largest shared quantity is the salient one (capacities beat version
    # numbers); the edit lands on side b, first occurrence.
    for value in shared:
        for token in _side_tokens(pair.b):
            if _quantity_value(token) == value:
                new_token = _shrink_quantity(token)
                edited = _replace_token_in_record(pair.b, token, new_token)
                if edited is not None:
                    return edited, EditDescription("quantity", "b", token, new_token)
    return None


def _brand_edit(pair: EntityPair, lexicon: Mapping[str, str]) -> tuple[EntityRecord, EditDescription] | None:
    brands_a = {normalize_token(t) for t in _side_tokens(pair.a)} & set(lexicon)
    for token in _side_tokens(pair.b):
        key = normalize_token(token)
        if key in brands_a:
            new_token = _match_case(lexicon[key], token)
            edited = _replace_token_in_record(pair.b, token, new_token)
            if edited is not None:
                return edited, EditDescription("brand", "b", token, new_token)
    return None


def _override_edit(
    pair: EntityPair, overrides: Mapping[str, Mapping[str, str]]
) -> tuple[EntityPair, EditDescription] | None:
    entry = overrides.get(pair.pair_id)
    if entry is None:
        return None
    side, old_token, new_token = entry["side"], entry["old_token"], entry["new_token"]
    if side not in ("a", "b"):
        raise InvalidInputError(f"override for {pair.pair_id!r} names unknown side {side!r}")
    record = pair.a if side == "a" else pair.b
    edited = _replace_token_in_record(record, old_token, new_token)
    if edited is None:
        return None
    new_pair = replace(pair, a=edited) if side == "a" else replace(pair, b=edited)
    return new_pair, EditDescription("override", side, old_token, new_token)


def perturb_match_pair(
    pair: EntityPair,
    brand_lexicon: Mapping[str, str] | None = None,
    overrides: Mapping[str, Mapping[str, str]] | None = None,
) -> tuple[EntityPair, EditDescription]:
    """Convert a matched pair to a non-match via the first applicable rule.

    Rule order: shared-quantity substitution, then brand substitution from
    the lexicon, then an explicit per-pair override. Raises Unperturbable
    when nothing applies.
    """
    if pair.label is not MatchLabel.MATCH:
        raise InvalidInputError(f"pair {pair.pair_id!r} is not a gold match")
    lexicon = brand_lexicon if brand_lexicon is not None else assets.brand_lexicon()

    edit = _quantity_edit(pair)
    if edit is not None:
        edited_b, description = edit
        return replace(pair, b=edited_b, label=MatchLabel.NOT_MATCH), description

    edit = _brand_edit(pair, lexicon)
    if edit is not None:
        edited_b, description = edit
        return replace(pair, b=edited_b, label=MatchLabel.NOT_MATCH), description

    if overrides:
        result = _override_edit(pair, overrides)
        if result is not None:
            new_pair, description = result
            return replace(new_pair, label=MatchLabel.NOT_MATCH), description

    raise Unperturbable(f"no edit rule applies to pair {pair.pair_id!r}")


def perturb_corpus(
    pairs: Iterable[EntityPair],
    brand_lexicon: Mapping[str, str] | None = None,
    overrides: Mapping[str, Mapping[str, str]] | None = None,
) -> tuple[list[tuple[EntityPair, EditDescription]], list[str]]:
    """Perturb every gold-match pair; returns (edits, unperturbable pair ids)."""
    edited, skipped = [], []
    for pair in pairs:
        try:
            edited.append(perturb_match_pair(pair, brand_lexicon, overrides))
        except Unperturbable:
            skipped.append(pair.pair_id)
    return edited, skipped


def load_overrides(path: str | Path) -> dict[str, dict[str, str]]:
    """Read a human-edit file: pair_id -> {side, old_token, new_token}."""
    with open(path, encoding="utf-8") as handle:
        raw = json.load(handle)
    for pair_id, entry in raw.items():
        missing = {"side", "old_token", "new_token"} - set(entry)
        if missing:
            raise InvalidInputError(f"override for {pair_id!r} lacks fields: {', '.join(sorted(missing))}")
    return raw
