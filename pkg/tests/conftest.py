"""Shared fixtures: a scriptable mock inference endpoint and synthetic datasets."""

from __future__ import annotations

import csv
import hashlib
import json
import random
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from matchkit.core import EntityPair, EntityRecord, MatchLabel
from matchkit.gateway import EndpointConfig
from matchkit.ingest import DatasetDescriptor


def default_mock_text(prompt: str) -> str:
    """Deterministic, prompt-dependent mock explanation of >= 5 tokens."""
    digest = hashlib.sha1(prompt.encode("utf-8")).hexdigest()[:8]
    return f"Both entities describe the same product listing {digest} and therefore they're a match."


def completion_body(text: str, prompt_tokens: int = 100, completion_tokens: int = 20) -> dict:
    return {
        "choices": [{"message": {"content": text}}],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
    }


class MockLLMServer:
    """Chat-completions lookalike with a scriptable response queue.

    Responses come from ``script`` (a list of (status, payload) tuples,
    consumed one per request) until it runs dry, then from ``behavior``,
    a prompt -> text function.
    """

    def __init__(self):
        self.script: list[tuple[int, dict]] = []
        self.behavior = default_mock_text
        self.requests: list[dict] = []
        self._lock = threading.Lock()

        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802 (http.server API)
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                with outer._lock:
                    outer.requests.append(body)
                    if outer.script:
                        status, payload = outer.script.pop(0)
                    else:
                        prompt = body["messages"][0]["content"]
                        status, payload = 200, completion_body(outer.behavior(prompt))
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address
        return f"http://{host}:{port}"

    @property
    def request_count(self) -> int:
        with self._lock:
            return len(self.requests)

    def close(self):
        self._httpd.shutdown()
        self._httpd.server_close()


@pytest.fixture
def mock_llm():
    server = MockLLMServer()
    yield server
    server.close()


@pytest.fixture
def mock_endpoint(mock_llm):
    return EndpointConfig(
        base_url=mock_llm.url,
        model_id="mock-model",
        completions_path="",
        timeout_s=5.0,
        max_retries=3,
        backoff_base_s=0.005,
        backoff_cap_s=0.01,
    )


# --- synthetic data ------------------------------------------------------------

BRANDS = ["Kingston", "Nike", "Canon", "Samsung", "Logitech", "Garmin", "Casio", "Epson"]
NOUNS = ["flash drive", "running shoe", "ink cartridge", "tv stand", "mouse", "watch", "printer", "keyboard"]
SIZES = ["16G", "32G", "64G", "128G", "256G", "512G", "1TB", "2TB"]
COLORS = ["black", "white", "navy", "red", "silver", "green"]


def product_name(rng: random.Random) -> str:
    return (
        f"{rng.choice(BRANDS)} {rng.choice(SIZES)} {rng.choice(COLORS)} "
        f"{rng.choice(NOUNS)} model {rng.randrange(100, 999)}"
    )


def rephrase(name: str, rng: random.Random) -> str:
    """A near-duplicate description: same tokens, light shuffling plus a filler word."""
    tokens = name.split()
    tail = tokens[2:]
    rng.shuffle(tail)
    return " ".join(tokens[:2] + tail + [rng.choice(["edition", "series", "pack"])])


def make_pair(index: int, rng: random.Random, match: bool) -> EntityPair:
    name_a = product_name(rng)
    name_b = rephrase(name_a, rng) if match else product_name(rng)
    a = EntityRecord.from_pairs(
        [("name", name_a), ("price", f"{rng.randrange(10, 500)}.99")], "left", f"a{index}"
    )
    b = EntityRecord.from_pairs(
        [("name", name_b), ("price", f"{rng.randrange(10, 500)}.99")], "right", f"b{index}"
    )
    label = MatchLabel.MATCH if match else MatchLabel.NOT_MATCH
    return EntityPair(a=a, b=b, label=label, pair_id=f"syn-{index}")


def make_pairs(n: int, seed: int = 3, match_fraction: float = 0.5) -> list[EntityPair]:
    rng = random.Random(seed)
    return [make_pair(i, rng, i < n * match_fraction) for i in range(n)]


SYNTHETIC_DESCRIPTOR = DatasetDescriptor(
    dataset_id="synthetic",
    domain_tag="synthetic-products",
    schema=("name", "price"),
    source_pair=("left", "right"),
    prompt_key="consumer-electronics",
)


def write_dataset_csvs(root: Path, pairs: list[EntityPair]) -> None:
    """Persist pairs as the on-disk dataset layout the loader expects."""
    root.mkdir(parents=True, exist_ok=True)
    for table, side in (("tableA.csv", "a"), ("tableB.csv", "b")):
        with open(root / table, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["id", "name", "price"])
            for pair in pairs:
                record = getattr(pair, side)
                writer.writerow([record.entity_id, dict(record.attrs)["name"], dict(record.attrs)["price"]])
    with open(root / "pairs.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["left_id", "right_id", "label"])
        for pair in pairs:
            writer.writerow([pair.a.entity_id, pair.b.entity_id, 1 if pair.label is MatchLabel.MATCH else 0])


KINGSTON_PAIR = EntityPair(
    a=EntityRecord.from_pairs(
        [("name", "Kingston 128GB DataTraveler G3 USB 3.1 Flash drive"), ("price", "19.99")],
        "left",
        "king-a",
    ),
    b=EntityRecord.from_pairs(
        [("name", "Kingston 128G DT G3 USB 3.1 Flash Drive"), ("price", "18.50")],
        "right",
        "king-b",
    ),
    label=MatchLabel.MATCH,
    pair_id="kingston-usb",
)
