"""Command-line entry point: every pipeline stage addressable independently.

Exit codes: 0 success, 1 partial failure (some per-item generations or
inferences failed), 2 invalid input. Every command that writes an output
also writes ``<output>.manifest.json`` recording inputs, seeds, checksums,
and the package version.
"""

from __future__ import annotations

import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import click

from . import __version__, assets
from .ablate import AblationKind, AblationSpec, ablate_corpus, build_stats
from .annotation import SessionConfig, create_app, instances_from_corpus
from .augment import emit_bl, emit_ea, write_meta
from .blocking import build_index, candidate_pairs
from .core import MatchkitError, SamplingParams, Variant, read_corpus, write_corpus
from .evaluation import delta_table, fleiss_kappa, render_delta_csv, render_delta_json, render_delta_text, score
from .gateway import CacheStore, CostLedger, EndpointConfig, report_cost
from .ingest import (
    Setting,
    builtin_descriptors,
    load_dataset,
    load_descriptor_file,
    plan_experiments,
    read_pairs,
    select_pairs,
    split_dataset,
    write_manifests,
    write_pairs,
)
from .matcher import predict_generative, predict_generative_icl, predict_lexical, read_predictions, write_predictions
from .perturb import load_overrides, perturb_corpus
from .prompting import load_template

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _describe(path: Path) -> dict:
    entry = {"path": str(path)}
    if path.is_file():
        entry["sha256"] = _sha256(path)
    return entry


def _write_run_manifest(output: Path, command: str, inputs: dict, seed: int | None = None, **params) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "seed": seed,
        "params": params,
        "inputs": {name: _describe(Path(p)) for name, p in inputs.items() if p},
        "output": {"path": str(output), "sha256": _sha256(output)},
    }
    with open(str(output) + ".manifest.json", "w", encoding="utf-8", newline="\n") as handle:
        json.dump(manifest, handle, indent=2)
        handle.write("\n")


def _load_endpoint_file(path: str) -> tuple[EndpointConfig, SamplingParams, dict]:
    with open(path, "rb") as handle:
        raw = tomllib.load(handle)
    endpoint = raw.get("endpoint", {})
    config = EndpointConfig(
        base_url=endpoint["base_url"],
        model_id=endpoint["model"],
        api_key_env=endpoint.get("api_key_env", "MATCHKIT_API_KEY"),
        completions_path=endpoint.get("completions_path", "/chat/completions"),
        timeout_s=endpoint.get("timeout_s", 60.0),
        max_retries=endpoint.get("max_retries", 5),
        backoff_base_s=endpoint.get("backoff_base_s", 0.5),
        backoff_cap_s=endpoint.get("backoff_cap_s", 30.0),
        send_sampling_extras=endpoint.get("send_sampling_extras", True),
        max_concurrency=endpoint.get("max_concurrency", 4),
        requests_per_second=endpoint.get("requests_per_second"),
    )
    sampling = SamplingParams(**raw.get("sampling", {}))
    rates = raw.get("rates", {"prompt": 0.0, "completion": 0.0})
    return config, sampling, rates


def _descriptors(config_path: str | None):
    return load_descriptor_file(config_path) if config_path else builtin_descriptors()


def _gold_labels(path: str) -> dict:
    golds = {}
    for pair in read_pairs(path):
        if pair.label is None:
            raise MatchkitError(f"gold pair {pair.pair_id!r} is unlabeled")
        golds[pair.pair_id] = pair.label
    return golds


@click.group()
@click.version_option(version=__version__, prog_name="matchkit")
def main() -> None:
    """Entity-matching corpus toolchain."""


@main.command()
@click.option("--dataset", "dataset_id", required=True, help="Dataset id from the descriptor config.")
@click.option("--path", "data_path", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--seed", default=7, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Descriptor config; defaults to the built-in catalog.")
@click.option("--split-file", type=click.Path(exists=True, dir_okay=False), default=None,
              help="External split to reproduce instead of shuffling.")
def ingest(dataset_id, data_path, seed, out_dir, config_path, split_file) -> None:
    """Load a dataset, apply the 3:1:1 split, and persist pairs + split."""
    descriptors = _descriptors(config_path)
    if dataset_id not in descriptors:
        raise click.UsageError(f"unknown dataset {dataset_id!r}; known: {', '.join(sorted(descriptors))}")
    pairs = load_dataset(data_path, descriptors[dataset_id])
    split = split_dataset(pairs, seed, split_file)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs_path = out / "pairs.jsonl"
    write_pairs(pairs_path, pairs)
    split_path = out / "split.json"
    with open(split_path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(split.as_dict(), handle, indent=2)
        handle.write("\n")
    _write_run_manifest(pairs_path, "ingest", {"data": data_path}, seed=seed, dataset=dataset_id)
    _write_run_manifest(split_path, "ingest", {"pairs": pairs_path}, seed=seed, dataset=dataset_id)
    click.echo(f"{dataset_id}: {len(pairs)} pairs -> train/valid/test "
               f"{len(split.train)}/{len(split.valid)}/{len(split.test)}")


@main.command()
@click.option("--left", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--right", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--top-k", default=5, show_default=True, type=int)
@click.option("--min-shared", default=1, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def block(left, right, top_k, min_shared, out_path) -> None:
    """Generate candidate pairs from two record tables (CSV, id column first)."""
    import csv as _csv

    from .core import EntityRecord

    def read_table(path, source):
        records = []
        with open(path, newline="", encoding="utf-8") as handle:
            reader = _csv.DictReader(handle)
            id_col = (reader.fieldnames or [None])[0]
            if id_col is None:
                raise click.UsageError(f"{path} has no header row")
            for row in reader:
                attrs = tuple((k, v or "") for k, v in row.items() if k != id_col)
                records.append(EntityRecord(attrs=attrs, source_id=source, entity_id=row[id_col]))
        return records

    index_a = build_index(read_table(left, "left"))
    index_b = build_index(read_table(right, "right"))
    candidates = candidate_pairs(index_a, index_b, top_k=top_k, min_shared=min_shared)
    write_pairs(out_path, candidates)
    _write_run_manifest(Path(out_path), "block", {"left": left, "right": right},
                        top_k=top_k, min_shared=min_shared)
    click.echo(f"{len(candidates)} candidate pairs (<= {index_a.doc_count} x {top_k})")


@main.command()
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--split", "split_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--bucket", type=click.Choice(["train", "valid", "test"]), default="train", show_default=True)
@click.option("--variant", type=click.Choice(["bl", "ea"]), required=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--prompt-key", default=None, help="Prompt template for EA; defaults from dataset config.")
@click.option("--dataset", "dataset_id", default=None, help="Dataset id used to route the EA prompt template.")
@click.option("--endpoint-config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--cache-dir", type=click.Path(file_okay=False), default=".matchkit-cache", show_default=True)
@click.option("--ledger", "ledger_path", type=click.Path(dir_okay=False), default=None)
@click.option("--jobs", default=0, show_default=True, type=int, help="Generation workers (0 = endpoint default).")
def augment(pairs_path, split_path, bucket, variant, out_path, prompt_key, dataset_id,
            endpoint_config, cache_dir, ledger_path, jobs) -> None:
    """Emit a BL or EA corpus for one split bucket."""
    pairs = read_pairs(pairs_path)
    if split_path:
        with open(split_path, encoding="utf-8") as handle:
            split = json.load(handle)
        pairs = select_pairs(pairs, tuple(split[bucket]))

    if variant == "bl":
        instances = emit_bl(pairs)
        write_corpus(out_path, instances)
        _write_run_manifest(Path(out_path), "augment", {"pairs": pairs_path, "split": split_path},
                            variant="bl", bucket=bucket)
        click.echo(f"wrote {len(instances)} BL instances to {out_path}")
        return

    if not endpoint_config:
        raise click.UsageError("--endpoint-config is required for EA emission")
    config, sampling, _ = _load_endpoint_file(endpoint_config)
    if prompt_key is None:
        if dataset_id:
            catalog = builtin_descriptors()
            if dataset_id in catalog:
                prompt_key = catalog[dataset_id].prompt_key
        prompt_key = prompt_key or "consumer-electronics"
    template = load_template(prompt_key)
    ledger = CostLedger()
    result = emit_ea(pairs, template, CacheStore(cache_dir), config, params=sampling, ledger=ledger, jobs=jobs)
    write_corpus(out_path, result.instances)
    write_meta(str(out_path) + ".meta.jsonl", result.meta)
    if ledger_path:
        ledger.write_csv(ledger_path, append=Path(ledger_path).exists())
    _write_run_manifest(Path(out_path), "augment", {"pairs": pairs_path, "split": split_path},
                        variant="ea", bucket=bucket, prompt_key=prompt_key, model=config.model_id)
    click.echo(f"wrote {len(result.instances)} EA instances to {out_path} "
               f"({ledger.cached_count()} cached, {ledger.live_count()} live)")
    if result.failures:
        click.echo(f"{len(result.failures)} pairs failed:", err=True)
        for pair_id, message in result.failures:
            click.echo(f"  {pair_id}: {message}", err=True)
        sys.exit(1)


@main.command()
@click.option("--kind", type=click.Choice(["a", "b", "c", "d", "e"]), required=True)
@click.option("--seed", required=True, type=int)
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--dataset", "dataset_id", default="", help="Dataset id (required for kind d).")
@click.option("--pairs", "pairs_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Pair file for document stats (required for kind c).")
def ablate(kind, seed, in_path, out_path, dataset_id, pairs_path) -> None:
    """Apply one explanation ablation to an EA corpus."""
    spec = AblationSpec(kind=AblationKind(kind), seed=seed, dataset_id=dataset_id)
    stats = None
    if spec.kind is AblationKind.C_TFIDF:
        if not pairs_path:
            raise click.UsageError("--pairs is required for the TF-IDF ablation (kind c)")
        stats = build_stats(read_pairs(pairs_path))
    if spec.kind is AblationKind.D_GENERIC and not dataset_id:
        raise click.UsageError("--dataset is required for the generic-explanation ablation (kind d)")
    instances = ablate_corpus(read_corpus(in_path), spec, stats)
    write_corpus(out_path, instances)
    _write_run_manifest(Path(out_path), "ablate", {"corpus": in_path, "pairs": pairs_path},
                        seed=seed, kind=kind, dataset=dataset_id)
    click.echo(f"wrote {len(instances)} {Variant(f'abl_{kind}').value} instances to {out_path}")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Pair file restricted to gold-match pairs (or filtered here).")
@click.option("--overrides", "overrides_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--edits-out", type=click.Path(dir_okay=False), default=None)
def perturb(in_path, overrides_path, out_path, edits_out) -> None:
    """Minimally edit gold-match pairs into non-matches."""
    from .core import MatchLabel

    pairs = [p for p in read_pairs(in_path) if p.label is MatchLabel.MATCH]
    overrides = load_overrides(overrides_path) if overrides_path else None
    edited, skipped = perturb_corpus(pairs, overrides=overrides)
    write_pairs(out_path, [pair for pair, _ in edited])
    if edits_out:
        with open(edits_out, "w", encoding="utf-8", newline="\n") as handle:
            json.dump({pair.pair_id: edit.as_dict() for pair, edit in edited}, handle, indent=2)
            handle.write("\n")
    _write_run_manifest(Path(out_path), "perturb", {"pairs": in_path, "overrides": overrides_path})
    click.echo(f"perturbed {len(edited)} pairs; {len(skipped)} unperturbable")
    if skipped:
        click.echo("unperturbable: " + ", ".join(skipped), err=True)


@main.command()
@click.option("--setting", type=click.Choice([s.value for s in Setting]), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--variant", type=click.Choice([v.value for v in Variant]), default="bl", show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
def plan(setting, config_path, variant, out_path) -> None:
    """Enumerate cross-testing experiment manifests."""
    manifests = plan_experiments(_descriptors(config_path), Setting(setting), Variant(variant))
    for manifest in manifests:
        click.echo(f"{manifest.setting.value}: train={manifest.train_dataset} test={manifest.test_dataset} "
                   f"variant={manifest.variant.value}")
    click.echo(f"{len(manifests)} manifests")
    if out_path:
        write_manifests(out_path, manifests)
        _write_run_manifest(Path(out_path), "plan", {"config": config_path}, setting=setting, variant=variant)


@main.command()
@click.option("--mode", type=click.Choice(["lexical", "generative", "icl"]), required=True)
@click.option("--pairs", "pairs_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--corpus", "corpus_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--threshold", default=0.5, show_default=True, type=float)
@click.option("--prompt-key", default="consumer-electronics", show_default=True)
@click.option("--endpoint-config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def infer(mode, pairs_path, corpus_path, threshold, prompt_key, endpoint_config, out_path) -> None:
    """Produce predictions from the lexical baseline or a generative endpoint."""
    failures: list = []
    if mode == "lexical":
        if not pairs_path:
            raise click.UsageError("--pairs is required for lexical inference")
        predictions = predict_lexical(read_pairs(pairs_path), threshold)
    else:
        if not endpoint_config:
            raise click.UsageError("--endpoint-config is required for generative inference")
        config, sampling, _ = _load_endpoint_file(endpoint_config)
        from .gateway import GenerationRequest, generate

        def infer_fn(text: str) -> str:
            request = GenerationRequest(prompt=text, params=sampling, model_id=config.model_id)
            return generate(request, config).text

        if mode == "generative":
            if not corpus_path:
                raise click.UsageError("--corpus is required for generative inference")
            predictions, failures = predict_generative(list(read_corpus(corpus_path)), infer_fn)
        else:
            if not pairs_path:
                raise click.UsageError("--pairs is required for ICL inference")
            predictions, failures = predict_generative_icl(read_pairs(pairs_path), load_template(prompt_key), infer_fn)
    write_predictions(out_path, predictions)
    _write_run_manifest(Path(out_path), "infer", {"pairs": pairs_path, "corpus": corpus_path},
                        mode=mode, threshold=threshold)
    click.echo(f"wrote {len(predictions)} predictions to {out_path}")
    if failures:
        click.echo(f"{len(failures)} inferences failed", err=True)
        sys.exit(1)


@main.command(name="score")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--gold", "gold_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Labeled pair file supplying gold labels.")
@click.option("--unparseable-as", type=click.Choice(["match", "not_match"]), default="not_match",
              show_default=True)
@click.option("--json-out", type=click.Path(dir_okay=False), default=None)
def score_cmd(pred_path, gold_path, unparseable_as, json_out) -> None:
    """Score predictions against gold labels (positive class: Match)."""
    from .core import MatchLabel

    metrics = score(read_predictions(pred_path), _gold_labels(gold_path), MatchLabel(unparseable_as))
    click.echo(f"tp={metrics.tp} fp={metrics.fp} fn={metrics.fn} tn={metrics.tn}")
    click.echo(f"P={metrics.precision} R={metrics.recall} F-1={metrics.f1}")
    if json_out:
        with open(json_out, "w", encoding="utf-8", newline="\n") as handle:
            json.dump(metrics.as_dict(), handle, indent=2)
            handle.write("\n")
        _write_run_manifest(Path(json_out), "score", {"pred": pred_path, "gold": gold_path})


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="JSON file with rows of F-1 columns per (setting, train, test).")
@click.option("--format", "fmt", type=click.Choice(["text", "csv", "json"]), default="text", show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
def report(manifest_path, fmt, out_path) -> None:
    """Render the variant delta table from a report manifest."""
    with open(manifest_path, encoding="utf-8") as handle:
        raw = json.load(handle)
    manifests = [(row["setting"], row["train"], row["test"]) for row in raw["rows"]]
    bl = {(row["train"], row["test"]): row.get("bl") for row in raw["rows"]}
    variants = sorted({variant for row in raw["rows"] for variant in row.get("ea", {})})
    ea = {
        variant: {(row["train"], row["test"]): row.get("ea", {}).get(variant) for row in raw["rows"]}
        for variant in variants
    }
    table = delta_table(manifests, bl, ea, raw.get("primary", variants[0] if variants else "ea"))
    rendered = {"text": render_delta_text, "csv": render_delta_csv, "json": render_delta_json}[fmt](table)
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(rendered)
        _write_run_manifest(Path(out_path), "report", {"manifest": manifest_path}, format=fmt)
    else:
        click.echo(rendered, nl=False)


@main.command()
@click.option("--records", "records_path", required=True, type=click.Path(exists=True, dir_okay=False))
def kappa(records_path) -> None:
    """Inter-rater agreement for the stored annotation records."""
    from .evaluation import AnnotationRecord

    records = []
    with open(records_path, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                records.append(AnnotationRecord.from_json(line))
    for question in ("intrinsic", "extrinsic"):
        click.echo(f"{question}: kappa={fleiss_kappa(records, question):.4f}")


@main.command(name="serve-annotate")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--raters", required=True, help="Comma-separated rater tokens.")
@click.option("--seed", default=7, show_default=True, type=int)
@click.option("--store", "store_path", required=True, type=click.Path(dir_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8321, show_default=True, type=int)
@click.option("--static", "static_dir", type=click.Path(file_okay=False), default=None,
              help="Built UI bundle to serve at /.")
def serve_annotate(corpus_path, raters, seed, store_path, host, port, static_dir) -> None:
    """Run the annotation service for a factuality session."""
    import uvicorn

    config = SessionConfig(
        instances=instances_from_corpus(list(read_corpus(corpus_path))),
        raters=tuple(token.strip() for token in raters.split(",") if token.strip()),
        seed=seed,
        store_path=Path(store_path),
        static_dir=Path(static_dir) if static_dir else None,
    )
    app = create_app(config)
    click.echo(f"serving {len(config.instances)} instances for raters {', '.join(config.raters)}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command()
@click.option("--ledger", "ledger_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--prompt-rate", default=0.0, show_default=True, type=float, help="Currency per prompt token.")
@click.option("--completion-rate", default=0.0, show_default=True, type=float)
def cost(ledger_path, prompt_rate, completion_rate) -> None:
    """Summarize generation time, token totals, and estimated cost."""
    summary = report_cost(CostLedger.read_csv(ledger_path), prompt_rate, completion_rate)
    for key, value in summary.as_dict().items():
        click.echo(f"{key}: {value}")


def run() -> None:
    try:
        main(standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(2)
    except MatchkitError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    run()
