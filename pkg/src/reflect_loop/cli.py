"""Operator entry points.

Exit codes are a stable contract: 0 success, 1 partial failures, 2
configuration error.
"""

from __future__ import annotations

import csv
import json
import sys
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from . import agents, ingest, memory, metrics
from . import trace as trace_mod
from .backend import HashingEmbedder, KeyedScriptedBackend, OllamaBackend
from .config import AppConfig, load_config
from .core import STAGES
from .errors import ConfigError, CorpusError, ReflectLoopError, TraceError
from .loop import LoopConfig, run_closed_loop

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2


def _make_backend(spec: str, cfg: AppConfig):
    """Backend factory: 'live' or 'scripted:PATH' (run dir or JSON script file)."""
    if spec == "live":
        return OllamaBackend(
            base_url=cfg.base_url,
            model_name=cfg.model,
            embed_model=None if cfg.embed_model == "hash" else cfg.embed_model,
            timeout=cfg.timeout,
            retries=cfg.retries,
            connection_limit=cfg.connection_limit,
        )
    if spec.startswith("scripted:"):
        path = Path(spec.split(":", 1)[1])
        if path.is_dir():
            return KeyedScriptedBackend.from_trace(path)
        if path.is_file():
            scripts = json.loads(path.read_text(encoding="utf-8"))
            return KeyedScriptedBackend(scripts)
        raise ConfigError(f"scripted backend path not found: {path}")
    raise ConfigError(f"unknown backend spec {spec!r} (use 'live' or 'scripted:PATH')")


@click.group()
def main():
    """Closed-loop multi-agent empathetic response pipeline."""


@main.command("run")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--backend", "backend_spec", default="live", show_default=True)
@click.option("--memory", "memory_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--t-max", type=int, default=None)
@click.option("--top-k", type=int, default=None)
@click.option("--no-selection", is_flag=True, default=False)
@click.option("--parallel", type=int, default=None)
@click.option("--limit", type=int, default=None)
@click.option("--offset", type=int, default=0)
@click.option("--allow-missing-frames", is_flag=True, default=False)
def cmd_run(corpus_dir, config_path, out_dir, backend_spec, memory_dir,
            t_max, top_k, no_selection, parallel, limit, offset, allow_missing_frames):
    """Run the closed loop over a corpus, one trace file per dialogue."""
    try:
        cfg = load_config(config_path)
        loop_cfg = LoopConfig(
            t_max=t_max if t_max is not None else cfg.t_max,
            retrieval_top_k=top_k if top_k is not None else cfg.retrieval_top_k,
            selection_enabled=(not no_selection) and cfg.selection_enabled,
        )
        backend = _make_backend(backend_spec, cfg)
        templates = agents.load_templates(cfg.template_dir)
        contexts = ingest.load_corpus(corpus_dir, allow_missing_frames=allow_missing_frames)
        contexts = contexts[offset : offset + limit if limit is not None else None]
        memory_index = None
        if loop_cfg.retrieval_top_k > 0:
            if memory_dir is None:
                raise ConfigError("--top-k > 0 requires --memory DIR (or pass --top-k 0)")
            memory_index = memory.load(memory_dir)
        workers = parallel if parallel is not None else cfg.parallel
        if backend_spec != "live":
            workers = 1  # scripted backends are strictly call-ordered
    except (ReflectLoopError, json.JSONDecodeError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)

    run_id = uuid.uuid4().hex[:12]
    writer = trace_mod.RunWriter(out_dir, run_id, config={**cfg.to_dict(), "loop": vars(loop_cfg)})
    failures: list[tuple[str, str]] = []

    def run_one(ctx):
        dlg_writer = writer.dialogue_writer(ctx)
        try:
            run_closed_loop(ctx, loop_cfg, backend, memory_index, templates, observer=dlg_writer)
            writer.set_status(ctx.dialogue_id, "done")
        except ReflectLoopError as exc:
            writer.set_status(ctx.dialogue_id, "failed")
            failures.append((ctx.dialogue_id, str(exc)))

    if workers <= 1:
        for ctx in contexts:
            run_one(ctx)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_one, contexts))

    ok = len(contexts) - len(failures)
    click.echo(f"run {run_id}: {ok}/{len(contexts)} dialogues completed, {len(failures)} failed -> {out_dir}")
    for dialogue_id, message in failures:
        click.echo(f"  failed {dialogue_id}: {message}", err=True)
    sys.exit(EXIT_PARTIAL if failures else EXIT_OK)


@main.command("build-memory")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--embed-model", default="hash", show_default=True,
              help="'hash' for the built-in hashing embedder, else a server embedding model name")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
def cmd_build_memory(corpus_dir, out_dir, embed_model, config_path):
    """Build the exemplar retrieval index from a leakage-safe split."""
    try:
        cfg = load_config(config_path)
        if embed_model == "hash":
            embedder = HashingEmbedder()
        else:
            embedder = OllamaBackend(cfg.base_url, cfg.model, embed_model=embed_model,
                                     timeout=cfg.timeout, retries=cfg.retries)
        corpus = ingest.load_corpus(corpus_dir, allow_missing_frames=True)
        index = memory.build(corpus, embedder)
        memory.save(index, out_dir)
    except ReflectLoopError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(f"indexed {len(index)} exemplars (dim {index.dim}, embedder {index.embedder_id}) -> {out_dir}")


@main.command("eval")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--format", "fmt", type=click.Choice(["table", "json"]), default="table", show_default=True)
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False))
def cmd_eval(run_dir, fmt, csv_path):
    """Evaluate a recorded run: Dist-1/2, Acc., attribution analytics."""
    try:
        report = metrics.analyze_traces(run_dir)
    except ReflectLoopError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    if csv_path:
        rows = metrics.per_dialogue_rows(run_dir)
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            w.writeheader()
            w.writerows(rows)
    if fmt == "json":
        click.echo(json.dumps(report.to_dict(), indent=2))
    else:
        click.echo(report.render())


@main.command("validate")
@click.argument("corpus_dir", type=click.Path(exists=True, file_okay=False))
def cmd_validate(corpus_dir):
    """Validate a corpus; exit status reflects validity."""
    report = ingest.validate_corpus(corpus_dir)
    click.echo(report.render())
    sys.exit(EXIT_OK if report.valid else EXIT_PARTIAL)


@main.command("inspect")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("dialogue_id")
@click.option("--format", "fmt", type=click.Choice(["text", "json"]), default="text", show_default=True)
def cmd_inspect(run_dir, dialogue_id, fmt):
    """Render the per-iteration story of one dialogue."""
    try:
        manifest = trace_mod.read_manifest(run_dir)
        entry = manifest["dialogues"].get(dialogue_id)
        if entry is None:
            raise TraceError(f"dialogue {dialogue_id!r} not found in run manifest")
        events = trace_mod.load_events(Path(run_dir) / entry["trace_file"])
        history = trace_mod._history_from_events(dialogue_id, events)
        if history is None:
            raise TraceError(f"dialogue {dialogue_id!r} has no completed history")
    except ReflectLoopError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    if fmt == "json":
        click.echo(json.dumps(history.to_dict(), indent=2))
        return
    for rec in history.records:
        marker = " *selected*" if rec.t == history.selected_t else ""
        click.echo(f"--- iteration {rec.t}{marker} ---")
        if rec.regenerated_from is not None:
            click.echo(f"regenerated from: {rec.regenerated_from.label}")
        for obs in rec.perception.visual_observations:
            click.echo(f"  evidence [visual]  {obs}")
        for obs in rec.perception.textual_observations:
            click.echo(f"  evidence [textual] {obs}")
        click.echo(f"  emotion:  {rec.emotion.label}  ({rec.emotion.rationale})")
        click.echo(f"  plan:     goal={rec.plan.goal} | stance={rec.plan.stance} | "
                   f"tactic={rec.plan.tactic} | tone={rec.plan.tone}")
        click.echo(f"  response: {rec.response.text}")
        checks = " ".join(
            f"{s.label}={'pass' if ok else 'FAIL'}" for s, ok in zip(STAGES, rec.feedback.checks)
        )
        click.echo(f"  audit:    {checks}")
        if rec.feedback.attributed_stage is not None:
            click.echo(f"  attributed stage: {rec.feedback.attributed_stage.label} -> {rec.feedback.critique}")
        if rec.feedback.inconclusive:
            click.echo("  audit inconclusive (treated as all-pass)")
    click.echo(f"final response (t*={history.selected_t}): {history.final_response}")


if __name__ == "__main__":
    main()
