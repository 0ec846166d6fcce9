"""Annotation service protocol: assignment, idempotence, durability, agreement."""

from __future__ import annotations

import itertools

import pytest
from fastapi.testclient import TestClient

from conftest import make_pairs
from matchkit.annotation import (
    EXTRINSIC_QUESTION,
    INTRINSIC_QUESTION,
    AnnotationInstance,
    AnnotationStore,
    SessionConfig,
    create_app,
    instances_from_corpus,
)
from matchkit.augment import emit_bl
from matchkit.core import LinearizedInstance, Variant
from matchkit.evaluation import AnnotationRecord, fleiss_kappa

RATERS = ("tok-ada", "tok-bea", "tok-cy")


def two_instances() -> list[AnnotationInstance]:
    return [
        AnnotationInstance("i1", "[COL] <name> [VAL] drive one", "[COL] <name> [VAL] drive uno", "Match", "Same drive."),
        AnnotationInstance("i2", "[COL] <name> [VAL] red ale", "[COL] <name> [VAL] pale ale", "Not a Match", "Styles differ."),
    ]


@pytest.fixture
def client(tmp_path):
    config = SessionConfig(instances=two_instances(), raters=RATERS, seed=11, store_path=tmp_path / "log.jsonl")
    app = create_app(config)
    with TestClient(app) as test_client:
        yield test_client


def submit(client, instance_id, rater, intrinsic=True, extrinsic=False):
    return client.post(
        "/api/annotations",
        json={"instance_id": instance_id, "rater": rater, "intrinsic_ok": intrinsic, "extrinsic_error": extrinsic},
    )


def test_next_serves_instance_with_verbatim_questions(client):
    body = client.get("/api/instances/next", params={"rater": "tok-ada"}).json()
    assert body["done"] is False
    assert body["instance"]["instance_id"] in {"i1", "i2"}
    assert body["questions"]["intrinsic"] == INTRINSIC_QUESTION
    assert body["questions"]["extrinsic"] == EXTRINSIC_QUESTION
    assert body["questions"]["intrinsic"].startswith("Is the explanation fully derivable from the input entities")
    assert body["questions"]["extrinsic"].startswith("Does the explanation contain information in excess")
    assert '"hallucinations"' in body["questions"]["extrinsic"]


def test_never_reserves_an_annotated_instance(client):
    first = client.get("/api/instances/next", params={"rater": "tok-ada"}).json()["instance"]["instance_id"]
    assert submit(client, first, "tok-ada").status_code == 200
    second = client.get("/api/instances/next", params={"rater": "tok-ada"}).json()["instance"]["instance_id"]
    assert second != first
    assert submit(client, second, "tok-ada").status_code == 200
    finished = client.get("/api/instances/next", params={"rater": "tok-ada"}).json()
    assert finished["done"] is True and finished["instance"] is None
    assert finished["completed"] == 2


def test_per_rater_order_is_seeded_shuffle(tmp_path):
    config = SessionConfig(
        instances=[
            AnnotationInstance(f"i{n}", "a", "b", "Match", "Because.") for n in range(6)
        ],
        raters=RATERS,
        seed=11,
        store_path=tmp_path / "log.jsonl",
    )
    rebuilt = create_app(config)
    with TestClient(rebuilt) as one:
        first_orders = {
            rater: one.get("/api/instances/next", params={"rater": rater}).json()["instance"]["instance_id"]
            for rater in RATERS
        }
    again = create_app(
        SessionConfig(instances=config.instances, raters=RATERS, seed=11, store_path=tmp_path / "log2.jsonl")
    )
    with TestClient(again) as two:
        second_orders = {
            rater: two.get("/api/instances/next", params={"rater": rater}).json()["instance"]["instance_id"]
            for rater in RATERS
        }
    assert first_orders == second_orders  # same seed, same assignment order


def test_post_idempotent_and_conflict(client):
    assert submit(client, "i1", "tok-ada", True, False).json()["status"] == "stored"
    assert submit(client, "i1", "tok-ada", True, False).json()["status"] == "unchanged"
    conflict = submit(client, "i1", "tok-ada", False, False)
    assert conflict.status_code == 409


def test_unknown_rater_and_instance(client):
    assert client.get("/api/instances/next", params={"rater": "intruder"}).status_code == 403
    assert submit(client, "i1", "intruder").status_code == 403
    assert submit(client, "i99", "tok-ada").status_code == 404


def test_progress_counts(client):
    submit(client, "i1", "tok-ada")
    submit(client, "i2", "tok-ada")
    submit(client, "i1", "tok-bea")
    body = client.get("/api/progress").json()
    assert body["total_instances"] == 2
    assert body["records"] == 3
    assert body["per_rater"] == {"tok-ada": 2, "tok-bea": 1, "tok-cy": 0}
    assert body["complete"] is False


def test_agreement_gated_until_complete_then_matches_oracle(client):
    answers = {
        ("i1", "tok-ada"): (True, False),
        ("i1", "tok-bea"): (True, False),
        ("i1", "tok-cy"): (False, False),
        ("i2", "tok-ada"): (True, True),
        ("i2", "tok-bea"): (False, True),
        ("i2", "tok-cy"): (False, True),
    }
    assert client.get("/api/agreement").status_code == 409
    for (instance_id, rater), (intrinsic, extrinsic) in answers.items():
        assert submit(client, instance_id, rater, intrinsic, extrinsic).status_code == 200
    body = client.get("/api/agreement").json()
    records = [
        AnnotationRecord(instance_id=i, rater_id=r, intrinsic_ok=a, extrinsic_error=b)
        for (i, r), (a, b) in answers.items()
    ]
    assert body["intrinsic_kappa"] == pytest.approx(fleiss_kappa(records, "intrinsic"), abs=1e-12)
    assert body["extrinsic_kappa"] == pytest.approx(fleiss_kappa(records, "extrinsic"), abs=1e-12)
    assert client.get("/api/progress").json()["complete"] is True


def test_store_survives_restart(tmp_path):
    store_path = tmp_path / "log.jsonl"
    config = SessionConfig(instances=two_instances(), raters=RATERS, seed=3, store_path=store_path)
    with TestClient(create_app(config)) as first:
        submit(first, "i1", "tok-ada")
        submit(first, "i2", "tok-ada")
    reloaded = AnnotationStore(store_path)
    assert len(reloaded.records()) == 2
    with TestClient(create_app(config)) as second:
        assert second.get("/api/instances/next", params={"rater": "tok-ada"}).json()["done"] is True
        assert second.get("/api/progress").json()["records"] == 2


def test_instances_from_corpus_parses_ea_targets():
    pairs = make_pairs(3)
    instances = []
    for base in emit_bl(pairs):
        instances.append(
            LinearizedInstance(
                input_text=base.input_text,
                target_text=base.target_text + " [explanation] Shared brand and capacity tokens.",
                pair_id=base.pair_id,
                variant=Variant.EA,
            )
        )
    items = instances_from_corpus(instances)
    assert [i.instance_id for i in items] == [p.pair_id for p in pairs]
    assert all(i.explanation == "Shared brand and capacity tokens." for i in items)
    assert items[0].label_text in {"Match", "Not a Match"}
    assert items[0].entity_a.startswith("[COL]")


def test_instances_from_corpus_rejects_bl():
    instances = emit_bl(make_pairs(1))
    with pytest.raises(ValueError, match="no explanation"):
        instances_from_corpus(instances)
