"""Self-hosted service backing the factuality-annotation screen.

Serves explanation instances to raters, collects their intrinsic/extrinsic
judgments into an append-only log that survives restarts, and exposes
progress plus inter-rater agreement once every instance carries a full set
of ratings. Raters are opaque tokens from the session config; instance
order is shuffled per rater with a recorded seed to damp order bias.
"""

from __future__ import annotations

import random
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .core import LinearizedInstance, parse_model_output, split_linearized
from .evaluation import AnnotationRecord, fleiss_kappa, group_by_instance

INTRINSIC_QUESTION = (
    "Is the explanation fully derivable from the input entities and their "
    "corresponding matching label, irrespective of whether it contains excess information?"
)
EXTRINSIC_QUESTION = (
    "Does the explanation contain information in excess of the entity descriptions "
    'and their corresponding matching labels? These inconsistencies are often called "hallucinations".'
)


@dataclass(frozen=True)
class AnnotationInstance:
    instance_id: str
    entity_a: str
    entity_b: str
    label_text: str
    explanation: str


def instances_from_corpus(corpus: list[LinearizedInstance]) -> list[AnnotationInstance]:
    """Turn EA instances into displayable annotation items."""
    items = []
    for instance in corpus:
        label, explanation = parse_model_output(instance.target_text)
        if label is None or not explanation:
            raise ValueError(f"instance {instance.pair_id!r} carries no explanation to annotate")
        entity_a, entity_b = split_linearized(instance.input_text)
        items.append(
            AnnotationInstance(
                instance_id=instance.pair_id,
                entity_a=entity_a,
                entity_b=entity_b,
                label_text=label.target_text,
                explanation=explanation,
            )
        )
    return items


@dataclass
class SessionConfig:
    instances: list[AnnotationInstance]
    raters: tuple[str, ...]
    seed: int
    store_path: Path
    raters_per_instance: int = 3
    static_dir: Path | None = None


class AnnotationStore:
    """Append-only JSON-lines log; existing records replay on startup."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._records: dict[tuple[str, str], AnnotationRecord] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    record = AnnotationRecord.from_json(line)
                    self._records[(record.instance_id, record.rater_id)] = record

    def records(self) -> list[AnnotationRecord]:
        with self._lock:
            return list(self._records.values())

    def get(self, instance_id: str, rater_id: str) -> AnnotationRecord | None:
        with self._lock:
            return self._records.get((instance_id, rater_id))

    def add(self, record: AnnotationRecord) -> str:
        """Store a record; idempotent per (instance, rater).

        Returns "stored" or "unchanged"; a re-submission with different
        answers raises ValueError for the caller to surface as a conflict.
        """
        key = (record.instance_id, record.rater_id)
        with self._lock:
            existing = self._records.get(key)
            if existing is not None:
                if (existing.intrinsic_ok, existing.extrinsic_error) != (
                    record.intrinsic_ok,
                    record.extrinsic_error,
                ):
                    raise ValueError("conflicting re-submission")
                return "unchanged"
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8", newline="\n") as handle:
                handle.write(record.to_json())
                handle.write("\n")
            self._records[key] = record
            return "stored"


class AnnotationBody(BaseModel):
    instance_id: str
    rater: str
    intrinsic_ok: bool
    extrinsic_error: bool


def create_app(config: SessionConfig) -> FastAPI:
    app = FastAPI(title="matchkit annotation service")
    store = AnnotationStore(config.store_path)
    by_id = {instance.instance_id: instance for instance in config.instances}

    orders: dict[str, list[str]] = {}
    for rater in config.raters:
        ids = [instance.instance_id for instance in config.instances]
        random.Random(f"{config.seed}:{rater}").shuffle(ids)
        orders[rater] = ids

    def require_rater(rater: str) -> None:
        if rater not in orders:
            raise HTTPException(status_code=403, detail=f"unknown rater token {rater!r}")

    @app.get("/api/instances/next")
    def next_instance(rater: str = Query(...)) -> dict:
        require_rater(rater)
        done_ids = {record.instance_id for record in store.records() if record.rater_id == rater}
        payload = {
            "done": True,
            "instance": None,
            "questions": {"intrinsic": INTRINSIC_QUESTION, "extrinsic": EXTRINSIC_QUESTION},
            "completed": len(done_ids),
            "total": len(orders[rater]),
        }
        for instance_id in orders[rater]:
            if instance_id not in done_ids:
                instance = by_id[instance_id]
                payload["done"] = False
                payload["instance"] = {
                    "instance_id": instance.instance_id,
                    "entity_a": instance.entity_a,
                    "entity_b": instance.entity_b,
                    "label": instance.label_text,
                    "explanation": instance.explanation,
                }
                break
        return payload

    @app.post("/api/annotations")
    def post_annotation(body: AnnotationBody) -> dict:
        require_rater(body.rater)
        if body.instance_id not in by_id:
            raise HTTPException(status_code=404, detail=f"unknown instance {body.instance_id!r}")
        record = AnnotationRecord(
            instance_id=body.instance_id,
            rater_id=body.rater,
            intrinsic_ok=body.intrinsic_ok,
            extrinsic_error=body.extrinsic_error,
            timestamp=datetime.now(timezone.utc).isoformat(),
        )
        try:
            status = store.add(record)
        except ValueError:
            raise HTTPException(
                status_code=409,
                detail=f"rater {body.rater!r} already answered {body.instance_id!r} differently",
            )
        return {"status": status}

    @app.get("/api/progress")
    def progress() -> dict:
        records = store.records()
        per_rater = {
            rater: sum(1 for r in records if r.rater_id == rater) for rater in config.raters
        }
        expected = len(config.instances) * config.raters_per_instance
        return {
            "total_instances": len(config.instances),
            "raters_per_instance": config.raters_per_instance,
            "records": len(records),
            "expected_records": expected,
            "per_rater": per_rater,
            "complete": len(records) >= expected
            and all(
                len(group) >= config.raters_per_instance
                for group in group_by_instance(records).values()
            )
            and len(group_by_instance(records)) == len(config.instances),
        }

    @app.get("/api/agreement")
    def agreement() -> dict:
        records = store.records()
        grouped = group_by_instance(records)
        incomplete = [
            instance.instance_id
            for instance in config.instances
            if len(grouped.get(instance.instance_id, [])) != config.raters_per_instance
        ]
        if incomplete:
            raise HTTPException(
                status_code=409,
                detail=f"{len(incomplete)} instances still lack {config.raters_per_instance} ratings",
            )
        return {
            "n_instances": len(config.instances),
            "raters_per_instance": config.raters_per_instance,
            "intrinsic_kappa": fleiss_kappa(records, "intrinsic"),
            "extrinsic_kappa": fleiss_kappa(records, "extrinsic"),
        }

    if config.static_dir is not None and Path(config.static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(config.static_dir), html=True), name="ui")

    return app
