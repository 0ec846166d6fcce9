"""Access to bundled data: stopwords, the junk-token lexicon, dataset
descriptors, prompt templates, generic explanations, and the brand lexicon.

All assets ship inside the package so corpus transforms are hermetic; the
prompt templates are additionally pinned by checksum (see CHECKSUMS.sha256).
"""

from __future__ import annotations

import hashlib
import sys
from functools import lru_cache
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_ASSET_ROOT = resources.files("matchkit") / "assets"


def asset_path(*parts: str) -> Path:
    return Path(str(_ASSET_ROOT.joinpath(*parts)))


def _read_text(*parts: str) -> str:
    return _ASSET_ROOT.joinpath(*parts).read_text(encoding="utf-8")


def _read_toml(*parts: str) -> dict:
    return tomllib.loads(_read_text(*parts))


@lru_cache(maxsize=1)
def stopwords() -> frozenset[str]:
    return frozenset(w for w in _read_text("stopwords.txt").split("\n") if w)


@lru_cache(maxsize=1)
def wordlist() -> tuple[str, ...]:
    return tuple(w for w in _read_text("wordlist.txt").split("\n") if w)


@lru_cache(maxsize=1)
def dataset_config() -> dict:
    return _read_toml("datasets.toml")["datasets"]


@lru_cache(maxsize=1)
def generic_explanation_templates() -> dict[str, str]:
    return dict(_read_toml("generic_explanations.toml")["templates"])


@lru_cache(maxsize=1)
def brand_lexicon() -> dict[str, str]:
    return {k.lower(): v for k, v in _read_toml("brands.toml")["brands"].items()}


def prompt_template_text(key: str) -> str:
    filename = key.replace("-", "_") + ".txt"
    return _read_text("prompts", filename)


def available_prompt_keys() -> list[str]:
    names = []
    for entry in (_ASSET_ROOT / "prompts").iterdir():
        if entry.name.endswith(".txt"):
            names.append(entry.name[:-4].replace("_", "-"))
    return sorted(names)


def prompt_checksums() -> dict[str, str]:
    """Pinned sha256 digests of the prompt template files."""
    pinned = {}
    for line in _read_text("prompts", "CHECKSUMS.sha256").splitlines():
        line = line.strip()
        if line:
            digest, name = line.split()
            pinned[name] = digest
    return pinned


def verify_prompt_checksums() -> None:
    """Raise if any bundled prompt template drifted from its pinned digest."""
    pinned = prompt_checksums()
    for name, digest in pinned.items():
        actual = hashlib.sha256(_read_text("prompts", name).encode("utf-8")).hexdigest()
        if actual != digest:
            raise RuntimeError(f"prompt asset {name} does not match its pinned checksum")
