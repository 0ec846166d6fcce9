"""Benchmark dataset loading, 3:1:1 splitting, and cross-testing experiment plans.

Datasets arrive as two record tables (``tableA.csv``, ``tableB.csv``; first
column is the record id, remaining columns are attributes) plus one or more
labeled pair tables with columns ``left_id, right_id, label`` where the label
is 1 for a match and 0 for a non-match. Pair rows live either in a single
``pairs.csv`` or in ``train.csv``/``valid.csv``/``test.csv``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from . import assets
from .core import EntityPair, EntityRecord, MatchkitError, MatchLabel, Variant

log = logging.getLogger(__name__)

PAIR_FILES = ("pairs.csv", "train.csv", "valid.csv", "test.csv")


class DatasetLoadError(MatchkitError):
    """A dataset directory is malformed; the message names the offending row."""


@dataclass(frozen=True)
class DatasetDescriptor:
    dataset_id: str
    domain_tag: str
    schema: tuple[str, ...]
    source_pair: tuple[str, str]
    counts: dict = field(default_factory=dict, compare=False)
    prompt_key: str = "consumer-electronics"
    components: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.schema:
            raise MatchkitError(f"descriptor {self.dataset_id!r} declares an empty schema")


def builtin_descriptors() -> dict[str, DatasetDescriptor]:
    return descriptors_from_config(assets.dataset_config())


def descriptors_from_config(config: dict) -> dict[str, DatasetDescriptor]:
    out = {}
    for dataset_id, entry in config.items():
        out[dataset_id] = DatasetDescriptor(
            dataset_id=dataset_id,
            domain_tag=entry["domain_tag"],
            schema=tuple(entry["schema"]),
            source_pair=tuple(entry["sources"]),
            counts={"pairs": entry.get("pairs", 0)},
            prompt_key=entry.get("prompt_key", "consumer-electronics"),
            components=tuple(entry.get("components", ())),
        )
    return out


def load_descriptor_file(path: str | Path) -> dict[str, DatasetDescriptor]:
    import sys

    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    with open(path, "rb") as handle:
        return descriptors_from_config(tomllib.load(handle)["datasets"])


def _read_record_table(path: Path, schema: tuple[str, ...], source_id: str) -> dict[str, EntityRecord]:
    if not path.exists():
        raise DatasetLoadError(f"missing record table: {path}")
    records: dict[str, EntityRecord] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        if not header:
            raise DatasetLoadError(f"{path} has no header row")
        id_column = header[0]
        missing = [a for a in schema if a not in header[1:]]
        if missing:
            raise DatasetLoadError(f"{path} lacks schema columns: {', '.join(missing)}")
        for i, row in enumerate(reader, start=2):
            entity_id = row[id_column]
            if entity_id in records:
                raise DatasetLoadError(f"{path} line {i}: duplicate id {entity_id!r}")
            attrs = tuple((a, row.get(a) or "") for a in schema)
            records[entity_id] = EntityRecord(attrs=attrs, source_id=source_id, entity_id=entity_id)
    return records


def _read_pair_rows(root: Path) -> list[tuple[str, str, str, str]]:
    """Yield (file, left_id, right_id, label) rows from whichever pair tables exist."""
    rows = []
    found = False
    candidates = ("pairs.csv",) if (root / "pairs.csv").exists() else PAIR_FILES[1:]
    for name in candidates:
        path = root / name
        if not path.exists():
            continue
        found = True
        with open(path, newline="", encoding="utf-8") as handle:
            reader = csv.DictReader(handle)
            for i, row in enumerate(reader, start=2):
                try:
                    rows.append((f"{name}:{i}", row["left_id"], row["right_id"], row["label"]))
                except KeyError as exc:
                    raise DatasetLoadError(f"{name} lacks required column {exc}") from exc
    if not found:
        raise DatasetLoadError(f"no pair table found under {root} (expected one of {', '.join(PAIR_FILES)})")
    return rows


def load_dataset(path: str | Path, descriptor: DatasetDescriptor) -> list[EntityPair]:
    """Load all labeled pairs of one dataset, resolving both record ids.

    Attribute order follows the descriptor schema. Pair ids are assigned as
    ``<dataset_id>-<ordinal>`` in file order, which makes them stable for
    splitting and joining predictions back to golds.
    """
    root = Path(path)
    if descriptor.components:
        pairs: list[EntityPair] = []
        catalog = builtin_descriptors()
        for component_id in descriptor.components:
            component = catalog[component_id]
            pairs.extend(load_dataset(root / component_id, component))
        return pairs

    left = _read_record_table(root / "tableA.csv", descriptor.schema, descriptor.source_pair[0])
    right = _read_record_table(root / "tableB.csv", descriptor.schema, descriptor.source_pair[1])

    pairs = []
    for ordinal, (where, left_id, right_id, label_text) in enumerate(_read_pair_rows(root)):
        if left_id not in left:
            raise DatasetLoadError(f"{where}: left_id {left_id!r} not present in tableA.csv")
        if right_id not in right:
            raise DatasetLoadError(f"{where}: right_id {right_id!r} not present in tableB.csv")
        if label_text == "1":
            label = MatchLabel.MATCH
        elif label_text == "0":
            label = MatchLabel.NOT_MATCH
        else:
            raise DatasetLoadError(f"{where}: unknown label value {label_text!r} (expected 0 or 1)")
        pairs.append(
            EntityPair(a=left[left_id], b=right[right_id], label=label, pair_id=f"{descriptor.dataset_id}-{ordinal}")
        )
    return pairs


@dataclass(frozen=True)
class SplitSet:
    train: tuple[str, ...]
    valid: tuple[str, ...]
    test: tuple[str, ...]
    seed: int

    def bucket(self, name: str) -> tuple[str, ...]:
        return getattr(self, name)

    def as_dict(self) -> dict:
        return {"train": list(self.train), "valid": list(self.valid), "test": list(self.test), "seed": self.seed}


def _bucket_sizes(n: int) -> tuple[int, int, int]:
    # Largest-remainder apportionment of the 3:1:1 quotas; every bucket ends
    # within 1 of its exact share for any n.
    quotas = (3 * n / 5, n / 5, n / 5)
    sizes = [math.floor(q) for q in quotas]
    leftover = n - sum(sizes)
    by_fraction = sorted(range(3), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in by_fraction[:leftover]:
        sizes[i] += 1
    return sizes[0], sizes[1], sizes[2]


def split_dataset(pairs: list[EntityPair], seed: int, split_file: str | Path | None = None) -> SplitSet:
    """Deterministically split pairs 3:1:1 into train/valid/test.

    An externally supplied split file (JSON with ``train``/``valid``/``test``
    id lists) overrides the shuffle so prior-work splits can be reproduced
    exactly.
    """
    if split_file is not None:
        with open(split_file, encoding="utf-8") as handle:
            raw = json.load(handle)
        return SplitSet(
            train=tuple(raw["train"]), valid=tuple(raw["valid"]), test=tuple(raw["test"]), seed=seed
        )
    if len(pairs) < 5:
        raise MatchkitError(f"cannot split {len(pairs)} pairs; at least 5 are required")
    ids = [p.pair_id for p in pairs]
    random.Random(seed).shuffle(ids)
    n_train, n_valid, _ = _bucket_sizes(len(ids))
    return SplitSet(
        train=tuple(ids[:n_train]),
        valid=tuple(ids[n_train : n_train + n_valid]),
        test=tuple(ids[n_train + n_valid :]),
        seed=seed,
    )


def select_pairs(pairs: list[EntityPair], ids: tuple[str, ...]) -> list[EntityPair]:
    by_id = {p.pair_id: p for p in pairs}
    return [by_id[i] for i in ids]


class Setting(Enum):
    X_DOMAIN = "x-domain"
    X_SCHEMA = "x-schema"
    X_DISTRIBUTION = "x-distribution"
    IN_DOMAIN = "in-domain"


@dataclass(frozen=True)
class ExperimentManifest:
    setting: Setting
    train_dataset: str
    test_dataset: str
    variant: Variant
    train_corpus: str
    test_corpus: str

    def __post_init__(self) -> None:
        if self.setting is not Setting.IN_DOMAIN and self.train_dataset == self.test_dataset:
            raise MatchkitError("train and test dataset may only coincide in the in-domain setting")

    def as_dict(self) -> dict:
        return {
            "setting": self.setting.value,
            "train_dataset": self.train_dataset,
            "test_dataset": self.test_dataset,
            "variant": self.variant.value,
            "train_corpus": self.train_corpus,
            "test_corpus": self.test_corpus,
        }


def _pairing_allowed(setting: Setting, train: DatasetDescriptor, test: DatasetDescriptor) -> bool:
    if setting is Setting.IN_DOMAIN:
        return train.dataset_id == test.dataset_id
    if train.dataset_id == test.dataset_id:
        return False
    if setting is Setting.X_DOMAIN:
        return train.domain_tag != test.domain_tag
    if setting is Setting.X_SCHEMA:
        return set(train.schema) != set(test.schema)
    if setting is Setting.X_DISTRIBUTION:
        return train.domain_tag == test.domain_tag and train.source_pair != test.source_pair
    raise MatchkitError(f"unknown setting {setting!r}")


def plan_experiments(
    descriptors: dict[str, DatasetDescriptor],
    setting: Setting,
    variant: Variant = Variant.BL,
    out_root: str = "runs",
) -> list[ExperimentManifest]:
    """Enumerate (train, test) dataset pairings admissible under a setting.

    Output paths are derived from the pairing so every manifest is
    self-contained. Returns an empty plan (with a warning) when no pairing
    qualifies.
    """
    manifests = []
    for train_id in sorted(descriptors):
        for test_id in sorted(descriptors):
            train, test = descriptors[train_id], descriptors[test_id]
            if not _pairing_allowed(setting, train, test):
                continue
            stem = f"{out_root}/{setting.value}/{train_id}__{test_id}"
            manifests.append(
                ExperimentManifest(
                    setting=setting,
                    train_dataset=train_id,
                    test_dataset=test_id,
                    variant=variant,
                    train_corpus=f"{stem}/train_{variant.value}.jsonl",
                    test_corpus=f"{stem}/test_bl.jsonl",
                )
            )
    if not manifests:
        log.warning("no admissible %s pairings among %d descriptors", setting.value, len(descriptors))
    return manifests


def write_manifests(path: str | Path, manifests: list[ExperimentManifest]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump([m.as_dict() for m in manifests], handle, indent=2)
        handle.write("\n")


# --- pair files ---------------------------------------------------------------
#
# Loaded datasets persist as JSON-lines so downstream stages never re-read
# the raw CSV tables: {pair_id, label, a: {id, source, attrs}, b: {...}}.


def _record_to_dict(record: EntityRecord) -> dict:
    return {"id": record.entity_id, "source": record.source_id, "attrs": [list(a) for a in record.attrs]}


def _record_from_dict(raw: dict) -> EntityRecord:
    return EntityRecord(
        attrs=tuple((n, v) for n, v in raw["attrs"]), source_id=raw.get("source", ""), entity_id=raw.get("id", "")
    )


def pair_to_json(pair: EntityPair) -> str:
    return json.dumps(
        {
            "pair_id": pair.pair_id,
            "label": pair.label.value if pair.label else None,
            "a": _record_to_dict(pair.a),
            "b": _record_to_dict(pair.b),
        },
        ensure_ascii=False,
    )


def pair_from_json(line: str) -> EntityPair:
    raw = json.loads(line)
    label = MatchLabel(raw["label"]) if raw.get("label") else None
    return EntityPair(a=_record_from_dict(raw["a"]), b=_record_from_dict(raw["b"]), label=label, pair_id=raw["pair_id"])


def write_pairs(path: str | Path, pairs: list[EntityPair]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for pair in pairs:
            handle.write(pair_to_json(pair))
            handle.write("\n")


def read_pairs(path: str | Path) -> list[EntityPair]:
    pairs = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                pairs.append(pair_from_json(line))
    return pairs
