"""Few-shot prompt construction for explanation elicitation and classification.

Prompt templates are bundled plain-text assets with ``{{slot}}`` placeholders
for the query block. Each template carries exactly two exemplars, one per
label class, and its bytes are pinned by checksum. Built prompts are
deterministic: identical inputs produce identical bytes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import assets
from .core import EntityPair, EntityRecord, MatchkitError, MatchLabel

QUERY_SLOTS = ("{{entity_a}}", "{{entity_b}}", "{{label}}")


class TemplateError(MatchkitError):
    pass


@dataclass(frozen=True)
class PromptExemplar:
    entity_a: str
    entity_b: str
    label_rendering: str
    explanation: str


@dataclass(frozen=True)
class PromptTemplate:
    domain_key: str
    instruction: str
    exemplars: tuple[PromptExemplar, PromptExemplar]
    begin_marker: str = "<s>"
    end_marker: str = "</s>"

    def __post_init__(self) -> None:
        if len(self.exemplars) != 2:
            raise TemplateError(f"template {self.domain_key!r} must carry exactly 2 exemplars")
        labels = {ex.label_rendering for ex in self.exemplars}
        if labels != {"MATCH", "NOT A MATCH"}:
            raise TemplateError(
                f"template {self.domain_key!r} must carry one MATCH and one NOT A MATCH exemplar, got {sorted(labels)}"
            )


_BLOCK_FIELDS = ("Entity A: ", "Entity B: ", "Label: ", "Explanation: ")


def _parse_exemplar(domain_key: str, block: str, end_marker: str) -> PromptExemplar:
    lines = block.split("\n")
    if len(lines) != 4 or not all(line.startswith(p) for line, p in zip(lines, _BLOCK_FIELDS)):
        raise TemplateError(f"malformed exemplar block in template {domain_key!r}")
    explanation = lines[3][len(_BLOCK_FIELDS[3]):]
    if not explanation.endswith(end_marker):
        raise TemplateError(f"exemplar in template {domain_key!r} is not terminated by {end_marker}")
    return PromptExemplar(
        entity_a=lines[0][len(_BLOCK_FIELDS[0]):],
        entity_b=lines[1][len(_BLOCK_FIELDS[1]):],
        label_rendering=lines[2][len(_BLOCK_FIELDS[2]):],
        explanation=explanation[: -len(end_marker)].rstrip(),
    )


def parse_template(domain_key: str, text: str) -> PromptTemplate:
    blocks = [b for b in text.strip("\n").split("\n\n") if b.strip()]
    if len(blocks) != 4:
        raise TemplateError(f"template {domain_key!r} must hold instruction, 2 exemplars, and a query block")
    header = blocks[0]
    match = re.fullmatch(r"<s>\[INST\] (.+) \[\\INST\]", header, re.S)
    if not match:
        raise TemplateError(f"template {domain_key!r} has a malformed instruction header")
    for slot in QUERY_SLOTS:
        if slot not in blocks[3]:
            raise TemplateError(f"template {domain_key!r} query block lacks slot {slot}")
    return PromptTemplate(
        domain_key=domain_key,
        instruction=match.group(1),
        exemplars=(
            _parse_exemplar(domain_key, blocks[1], "</s>"),
            _parse_exemplar(domain_key, blocks[2], "</s>"),
        ),
    )


def load_template(domain_key: str) -> PromptTemplate:
    available = assets.available_prompt_keys()
    if domain_key not in available:
        raise TemplateError(f"unknown prompt template {domain_key!r}; available: {', '.join(available)}")
    return parse_template(domain_key, assets.prompt_template_text(domain_key))


def render_entity_for_prompt(record: EntityRecord) -> str:
    """Render a record as ``[ATTR] value`` segments for the prompt query block.

    Attribute names are uppercased with spaces turned into underscores; empty
    values leave just the marker.
    """
    parts = []
    for name, value in record.attrs:
        marker = "[" + name.upper().replace(" ", "_").replace("-", "_") + "]"
        parts.append(f"{marker} {value}" if value else marker)
    return " ".join(parts)


def _assemble(template: PromptTemplate, entity_a: str, entity_b: str, label: str | None) -> str:
    blocks = [f"{template.begin_marker}[INST] {template.instruction} [\\INST]"]
    for ex in template.exemplars:
        blocks.append(
            f"Entity A: {ex.entity_a}\n"
            f"Entity B: {ex.entity_b}\n"
            f"Label: {ex.label_rendering}\n"
            f"Explanation: {ex.explanation} {template.end_marker}"
        )
    query = f"Entity A: {entity_a}\nEntity B: {entity_b}"
    if label is not None:
        query += f"\nLabel: {label}"
    blocks.append(query)
    return "\n\n".join(blocks)


def build_explanation_prompt(template: PromptTemplate, pair: EntityPair, label: MatchLabel) -> str:
    """Prompt soliciting an explanation for a labeled pair.

    The query block ends after its Label line, cueing the model to continue
    with the explanation.
    """
    return _assemble(
        template,
        render_entity_for_prompt(pair.a),
        render_entity_for_prompt(pair.b),
        label.prompt_text,
    )


def build_classification_prompt(template: PromptTemplate, pair: EntityPair) -> str:
    """Prompt soliciting a label: identical shape, query block ends after Entity B."""
    return _assemble(template, render_entity_for_prompt(pair.a), render_entity_for_prompt(pair.b), None)


_GENERIC_SLOT = "are (or are not)"


def generic_explanation(
    dataset_id: str,
    label: MatchLabel,
    templates: dict[str, str] | None = None,
) -> str:
    """Dataset-level explanation with the ``are (or are not)`` slot resolved."""
    registry = templates if templates is not None else assets.generic_explanation_templates()
    if dataset_id not in registry:
        raise TemplateError(
            f"no generic explanation registered for {dataset_id!r}; available: {', '.join(sorted(registry))}"
        )
    text = registry[dataset_id]
    if _GENERIC_SLOT not in text:
        raise TemplateError(f"generic explanation for {dataset_id!r} lacks the {_GENERIC_SLOT!r} slot")
    return text.replace(_GENERIC_SLOT, "are" if label is MatchLabel.MATCH else "are not")
