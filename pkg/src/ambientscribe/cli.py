"""Operator commands: corpus inspection, batch transcription scoring, note
generation, pairwise judging, note comparison, term extraction, fine-tune
pair export, and the HTTP service. Batch commands parallelize per visit,
write outputs atomically, and drop one run manifest beside their outputs.
"""
from __future__ import annotations

import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import click

from . import __version__
from .corpus import CorpusError, VisitRecord, load_corpus
from .eventstore import (
    NoteEventStore,
    StoreError,
    export_finetune_pairs,
    write_finetune_pairs,
)
from .judge import (
    JudgeAbortError,
    JudgeError,
    ScriptedJudge,
    default_rubric,
    load_rubric,
    run_win_rate,
)
from .pipeline import (
    NoteGenerationError,
    PipelineError,
    PromptBundle,
    extract_hpi,
    generate_soap_note,
    render_note_document,
)
from .providers import (
    ProviderError,
    RoutingError,
    RoutingTable,
    TranscriptionRequest,
    build_chat_provider,
    build_transcription_provider,
)
from .termprompt import (
    TermExtractionError,
    build_transcription_prompt,
    extract_terms,
    load_stopwords,
    load_term_list,
    save_term_list,
)
from .textmetrics import (
    DEFAULT_POLICY,
    MetricInputError,
    char_edit_rate,
    format_mean_stdev,
    format_percent,
    greedy_embedding_f1,
    paired_t_test,
    percent_reduction,
    quantile,
    summarize_distribution,
    word_error_rate,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_INVALID = 2

SCRIPTED_MODES = ("always_candidate", "always_reference", "always_a", "always_b", "coinflip")


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _write_text(path: Path, text: str) -> None:
    """Atomic per-file write: full content appears or nothing does."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _write_json(path: Path, payload) -> None:
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_manifest(
    out_dir: Path,
    command: str,
    started: str,
    config_path: str,
    seed: int,
    inputs: list[str],
    outputs: list[str],
) -> None:
    _write_json(
        out_dir / f"{command}.manifest.json",
        {
            "command": command,
            "config_path": config_path,
            "seed": seed,
            "inputs": sorted(inputs),
            "outputs": sorted(outputs),
            "started": started,
            "finished": _now(),
        },
    )


def _load_records(corpus_root: str, manifest: str) -> list[VisitRecord]:
    try:
        return load_corpus(corpus_root, manifest)
    except CorpusError as exc:
        _fail(EXIT_INVALID, str(exc))
        raise AssertionError("unreachable")


def _routing_table(path: str) -> RoutingTable:
    try:
        return RoutingTable.from_json_file(path)
    except RoutingError as exc:
        _fail(EXIT_INVALID, str(exc))
        raise AssertionError("unreachable")


def _stem_map(directory: Path) -> dict[str, Path]:
    return {p.stem: p for p in sorted(directory.glob("*.txt"))}


@click.group()
@click.version_option(version=__version__, prog_name="ambientscribe")
def main() -> None:
    """Ambient-scribe workbench: batch evaluation driver and service host."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")


@main.command("ingest")
@click.argument("root", type=click.Path(exists=True, file_okay=False))
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
def cmd_ingest(root: str, manifest: str) -> None:
    """Load the visit corpus and print the split summary."""
    records = _load_records(root, manifest)
    usable = [r for r in records if r.human_transcript or r.audio_ref]
    if not usable:
        _fail(EXIT_INVALID, "no usable visits (no transcripts or audio found)")
    by_split: dict[str, int] = {}
    for record in records:
        by_split[record.split_tag] = by_split.get(record.split_tag, 0) + 1
    eval_count = by_split.get("eval", 0)
    term_count = by_split.get("term_extraction", 0)
    click.echo(f"{len(records)} visits ({eval_count} eval / {term_count} term_extraction)")
    for record in records:
        missing = []
        if record.human_transcript is None:
            missing.append("transcript")
        if record.expert_note is None:
            missing.append("note")
        if record.audio_ref is None:
            missing.append("audio")
        if missing:
            click.echo(f"  {record.visit_id}: missing {', '.join(missing)}", err=True)


@main.command("eval-wer")
@click.option("--corpus", "corpus_root", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--routing", "routing_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--models", required=True, help="Comma-separated transcription model names.")
@click.option("--prompt-terms", "prompt_terms_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", default="wer-out", type=click.Path(file_okay=False))
@click.option("--jobs", default=4, show_default=True)
@click.option("--seed", default=0, show_default=True)
def cmd_eval_wer(
    corpus_root: str,
    manifest: str,
    routing_path: str,
    models: str,
    prompt_terms_path: str | None,
    out_dir: str,
    jobs: int,
    seed: int,
) -> None:
    """Score transcription models against human transcripts (WER table)."""
    started = _now()
    model_list = [m.strip() for m in models.split(",") if m.strip()]
    if not model_list:
        _fail(EXIT_INVALID, "--models must name at least one model")
    table = _routing_table(routing_path)
    records = _load_records(corpus_root, manifest)

    usable: list[VisitRecord] = []
    skipped: list[str] = []
    for record in records:
        if record.split_tag != "eval":
            continue
        if record.human_transcript is None or record.audio_ref is None:
            skipped.append(record.visit_id)
            click.echo(f"skipping {record.visit_id}: missing reference or audio", err=True)
            continue
        usable.append(record)
    if not usable:
        _fail(EXIT_INVALID, "no usable eval visits")

    prompt = ""
    if prompt_terms_path:
        prompt = build_transcription_prompt(load_term_list(prompt_terms_path))

    variants: list[tuple[str, str, bool]] = []  # (label, model, prompted)
    for model in model_list:
        variants.append((model, model, False))
        if prompt:
            variants.append((f"{model}+terms", model, True))

    rows = []
    for label, model, prompted in variants:
        try:
            provider = build_transcription_provider(model, table)
        except RoutingError as exc:
            _fail(EXIT_INVALID, str(exc))

        def score(record: VisitRecord) -> tuple[str, float]:
            request = TranscriptionRequest(
                model=model, audio_ref=record.audio_ref, prompt=prompt if prompted else ""
            )
            machine = provider.transcribe(request)
            result = word_error_rate(record.human_transcript.text(), machine.text())
            return record.visit_id, result.wer

        try:
            with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
                per_visit = dict(pool.map(score, usable))
        except ProviderError as exc:
            _fail(EXIT_PARTIAL, f"transcription failed for {label}: {exc}")
        values = [per_visit[r.visit_id] for r in usable]
        summary = summarize_distribution(values)
        rows.append(
            {
                "label": label,
                "model": model,
                "prompted": prompted,
                "mean": summary.mean,
                "stdev": summary.stdev,
                "n": summary.n,
                "per_visit": {k: per_visit[k] for k in sorted(per_visit)},
            }
        )

    comparisons = []
    for i in range(len(rows)):
        for j in range(i + 1, len(rows)):
            a_vals = [rows[i]["per_visit"][r.visit_id] for r in usable]
            b_vals = [rows[j]["per_visit"][r.visit_id] for r in usable]
            if len(a_vals) < 2:
                continue
            result = paired_t_test(a_vals, b_vals)
            comparisons.append(
                {
                    "a": rows[i]["label"],
                    "b": rows[j]["label"],
                    "statistic": result.statistic,
                    "p_value": result.p_value,
                    "degrees_of_freedom": result.degrees_of_freedom,
                }
            )

    reductions = []
    if prompt:
        base = {row["model"]: row for row in rows if not row["prompted"]}
        for row in rows:
            if not row["prompted"]:
                continue
            baseline = base[row["model"]]
            percent = percent_reduction(baseline["mean"], row["mean"])
            reductions.append(
                {
                    "model": row["model"],
                    "baseline_mean": baseline["mean"],
                    "prompted_mean": row["mean"],
                    "percent": percent,
                    "formatted": format_percent(percent),
                }
            )

    report = {
        "metric": "wer",
        "policy": DEFAULT_POLICY.describe(),
        "rows": rows,
        "comparisons": comparisons,
        "reductions": reductions,
        "skipped_visits": sorted(skipped),
        "prompt_chars": len(prompt),
    }

    label_width = max(len(row["label"]) for row in rows)
    lines = [f"word error rate ({report['policy']})"]
    for row in rows:
        formatted = format_mean_stdev(summarize_distribution(list(row["per_visit"].values())))
        lines.append(f"  {row['label']:<{label_width}}  {formatted}  n={row['n']}")
    if comparisons:
        lines.append("paired comparisons:")
        for comp in comparisons:
            lines.append(
                f"  {comp['a']} vs {comp['b']}: t={comp['statistic']:.4f},"
                f" p={comp['p_value']:.6g}"
            )
    for reduction in reductions:
        lines.append(
            f"prompted reduction for {reduction['model']}: {reduction['baseline_mean']:.4f}"
            f" -> {reduction['prompted_mean']:.4f} ({reduction['formatted']} reduction)"
        )
    if skipped:
        lines.append(f"skipped visits: {len(skipped)}")
    text = "\n".join(lines) + "\n"

    out = Path(out_dir)
    _write_json(out / "wer_report.json", report)
    _write_text(out / "wer_report.txt", text)
    _write_manifest(
        out,
        "eval-wer",
        started,
        routing_path,
        seed,
        inputs=[corpus_root, manifest] + ([prompt_terms_path] if prompt_terms_path else []),
        outputs=[str(out / "wer_report.json"), str(out / "wer_report.txt")],
    )
    click.echo(text, nl=False)


@main.command("generate")
@click.option("--corpus", "corpus_root", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--routing", "routing_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--model", required=True, help="Chat model name from the routing table.")
@click.option("--bundle", "bundle_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", default="notes-out", type=click.Path(file_okay=False))
@click.option("--jobs", default=4, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--verify-instructions", is_flag=True, default=False)
def cmd_generate(
    corpus_root: str,
    manifest: str,
    routing_path: str,
    model: str,
    bundle_dir: str | None,
    out_dir: str,
    jobs: int,
    seed: int,
    verify_instructions: bool,
) -> None:
    """Generate one SOAP note per eval visit, with a trace per note."""
    started = _now()
    table = _routing_table(routing_path)
    try:
        provider = build_chat_provider(model, table)
    except RoutingError as exc:
        _fail(EXIT_INVALID, str(exc))
    try:
        bundle = PromptBundle.from_dir(bundle_dir) if bundle_dir else PromptBundle.default()
    except PipelineError as exc:
        _fail(EXIT_INVALID, str(exc))

    records = [
        r
        for r in _load_records(corpus_root, manifest)
        if r.split_tag == "eval" and r.human_transcript is not None
    ]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    failures: dict[str, str] = {}
    latencies_ms: list[float] = []
    outputs: list[str] = []

    def run_visit(record: VisitRecord) -> None:
        try:
            note, instructions, trace = generate_soap_note(
                record.human_transcript,
                bundle,
                provider,
                model=model,
                verify_instructions=verify_instructions,
                trace_id=f"trace-{record.visit_id}",
            )
        except (NoteGenerationError, PipelineError) as exc:
            failures[record.visit_id] = str(exc)
            return
        note_path = out / f"{record.visit_id}.txt"
        trace_path = out / f"{record.visit_id}.trace.json"
        _write_text(note_path, render_note_document(note, instructions) + "\n")
        _write_json(trace_path, {"visit_id": record.visit_id, **trace.to_dict()})
        latencies_ms.append(trace.total_latency_ms)
        outputs.extend([str(note_path), str(trace_path)])

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        list(pool.map(run_visit, records))

    _write_manifest(
        out,
        "generate",
        started,
        routing_path,
        seed,
        inputs=[corpus_root, manifest],
        outputs=outputs,
    )
    generated = len(records) - len(failures)
    if latencies_ms:
        click.echo(
            f"generated {generated} notes to {out} "
            f"(p50 latency {quantile(latencies_ms, 0.5):.0f} ms)"
        )
    else:
        click.echo(f"generated {generated} notes to {out}")
    if failures:
        for visit_id in sorted(failures):
            click.echo(f"failed {visit_id}: {failures[visit_id]}", err=True)
        sys.exit(EXIT_PARTIAL)


def _scripted_judge(spec: str, seed: int) -> ScriptedJudge:
    if spec.startswith("labels:"):
        labels = [part.strip() for part in spec[len("labels:"):].split(",") if part.strip()]
        bad = sorted(set(labels) - {"candidate", "reference"})
        if bad:
            _fail(EXIT_INVALID, f"labels must be candidate/reference, got: {', '.join(bad)}")
        return ScriptedJudge("labels", seed=seed, labels=labels)
    if spec not in SCRIPTED_MODES:
        _fail(
            EXIT_INVALID,
            f"unknown scripted mode {spec!r}; expected one of "
            f"{', '.join(SCRIPTED_MODES)} or labels:<side,side,...>",
        )
    return ScriptedJudge(spec, seed=seed)


@main.command("judge")
@click.option("--candidates", "candidates_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--references", "references_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--routing", "routing_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--judge-model", default="", help="Chat model name used as the judge.")
@click.option("--scripted", "scripted_spec", default="", help="Offline scripted judge mode.")
@click.option("--rubric", "rubric_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--runs", default=3, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--jobs", default=4, show_default=True)
@click.option("--full-note", is_flag=True, default=False, help="Judge whole notes, not just the HPI.")
@click.option("--out", "out_dir", default="judge-out", type=click.Path(file_okay=False))
def cmd_judge(
    candidates_dir: str,
    references_dir: str,
    routing_path: str | None,
    judge_model: str,
    scripted_spec: str,
    rubric_path: str | None,
    runs: int,
    seed: int,
    jobs: int,
    full_note: bool,
    out_dir: str,
) -> None:
    """Pairwise rubric judging of candidate vs reference notes."""
    started = _now()
    candidates = _stem_map(Path(candidates_dir))
    references = _stem_map(Path(references_dir))
    missing = sorted(set(candidates) ^ set(references))
    if missing:
        _fail(EXIT_INVALID, f"visit coverage differs between dirs: {', '.join(missing)}")
    if not candidates:
        _fail(EXIT_INVALID, "no .txt notes found to judge")

    if scripted_spec:
        provider = _scripted_judge(scripted_spec, seed)
    elif judge_model and routing_path:
        table = _routing_table(routing_path)
        try:
            provider = build_chat_provider(judge_model, table)
        except RoutingError as exc:
            _fail(EXIT_INVALID, str(exc))
    else:
        _fail(EXIT_INVALID, "provide either --scripted or both --judge-model and --routing")

    rubric = load_rubric(rubric_path) if rubric_path else default_rubric()

    pairs = []
    for stem in sorted(candidates):
        cand_text = candidates[stem].read_text(encoding="utf-8")
        ref_text = references[stem].read_text(encoding="utf-8")
        if not full_note:
            cand_text = extract_hpi(cand_text)
            ref_text = extract_hpi(ref_text)
        pairs.append((cand_text, ref_text))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        report = run_win_rate(
            pairs,
            provider,
            runs=runs,
            seed=seed,
            rubric=rubric,
            judge_model=judge_model,
            max_workers=max(1, jobs),
            verdict_log_path=out / "verdicts.jsonl",
        )
    except JudgeAbortError as exc:
        _fail(EXIT_PARTIAL, str(exc))
    except JudgeError as exc:
        _fail(EXIT_INVALID, str(exc))

    text = report.render_text() + "\n"
    _write_json(out / "win_rate.json", report.to_dict())
    _write_text(out / "win_rate.txt", text)
    _write_manifest(
        out,
        "judge",
        started,
        routing_path or "",
        seed,
        inputs=[candidates_dir, references_dir],
        outputs=[
            str(out / "win_rate.json"),
            str(out / "win_rate.txt"),
            str(out / "verdicts.jsonl"),
        ],
    )
    click.echo(text, nl=False)


@main.command("eval-notes")
@click.option("--generated", "generated_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--submitted", "submitted_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--full-note", is_flag=True, default=False, help="Compare whole notes, not just the HPI.")
@click.option("--out", "out_dir", default="eval-notes-out", type=click.Path(file_okay=False))
@click.option("--seed", default=0, show_default=True)
def cmd_eval_notes(
    generated_dir: str,
    submitted_dir: str,
    full_note: bool,
    out_dir: str,
    seed: int,
) -> None:
    """Character-length, edit-rate, and embedding-overlap comparison."""
    started = _now()
    generated = _stem_map(Path(generated_dir))
    submitted = _stem_map(Path(submitted_dir))
    stems = sorted(set(generated) & set(submitted))
    skipped = sorted(set(generated) ^ set(submitted))
    for stem in skipped:
        click.echo(f"skipping unpaired note: {stem}", err=True)
    if not stems:
        _fail(EXIT_INVALID, "no paired notes found")

    gen_lengths: list[float] = []
    sub_lengths: list[float] = []
    edit_rates: list[float] = []
    f1_values: list[float] = []
    for stem in stems:
        gen_text = generated[stem].read_text(encoding="utf-8")
        sub_text = submitted[stem].read_text(encoding="utf-8")
        if not full_note:
            gen_text = extract_hpi(gen_text)
            sub_text = extract_hpi(sub_text)
        try:
            edit_rates.append(char_edit_rate(gen_text, sub_text))
            f1_values.append(
                greedy_embedding_f1(
                    DEFAULT_POLICY.words(sub_text), DEFAULT_POLICY.words(gen_text)
                ).f1
            )
        except MetricInputError as exc:
            _fail(EXIT_INVALID, f"{stem}: {exc}")
        gen_lengths.append(float(len(gen_text)))
        sub_lengths.append(float(len(sub_text)))

    gen_summary = summarize_distribution(gen_lengths)
    sub_summary = summarize_distribution(sub_lengths)
    edit_summary = summarize_distribution(edit_rates)
    f1_summary = summarize_distribution(f1_values)
    reduction = percent_reduction(gen_summary.mean, sub_summary.mean)
    length_test = paired_t_test(gen_lengths, sub_lengths) if len(stems) >= 2 else None

    report = {
        "metric": "note_compare",
        "mode": "full_note" if full_note else "hpi",
        "n": len(stems),
        "generated_length": {
            "mean": gen_summary.mean,
            "stdev": gen_summary.stdev,
            "formatted": format_mean_stdev(gen_summary, digits=0),
        },
        "submitted_length": {
            "mean": sub_summary.mean,
            "stdev": sub_summary.stdev,
            "formatted": format_mean_stdev(sub_summary, digits=0),
        },
        "length_reduction": {"percent": reduction, "formatted": format_percent(reduction)},
        "length_test": (
            {
                "statistic": length_test.statistic,
                "p_value": length_test.p_value,
                "degrees_of_freedom": length_test.degrees_of_freedom,
            }
            if length_test
            else None
        ),
        "edit_rate": {"mean": edit_summary.mean, "stdev": edit_summary.stdev},
        "embedding_f1": {"mean": f1_summary.mean, "stdev": f1_summary.stdev},
        "skipped": skipped,
    }

    lines = [
        f"note comparison ({report['mode']}), n={report['n']}",
        f"  generated length: {report['generated_length']['formatted']}",
        f"  submitted length: {report['submitted_length']['formatted']}",
        f"  length reduction: {report['length_reduction']['formatted']}"
        + (f" (paired t p={length_test.p_value:.6g})" if length_test else ""),
        f"  char edit rate: {format_mean_stdev(edit_summary, digits=3)}",
        f"  embedding f1: {format_mean_stdev(f1_summary, digits=3)}",
    ]
    if skipped:
        lines.append(f"  skipped unpaired: {len(skipped)}")
    text = "\n".join(lines) + "\n"

    out = Path(out_dir)
    _write_json(out / "note_compare.json", report)
    _write_text(out / "note_compare.txt", text)
    _write_manifest(
        out,
        "eval-notes",
        started,
        "",
        seed,
        inputs=[generated_dir, submitted_dir],
        outputs=[str(out / "note_compare.json"), str(out / "note_compare.txt")],
    )
    click.echo(text, nl=False)


@main.command("extract-terms")
@click.option("--corpus", "corpus_root", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--top", "top_k", default=120, show_default=True)
@click.option("--stopwords", "stopwords_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", default="terms-out", type=click.Path(file_okay=False))
@click.option("--seed", default=0, show_default=True)
def cmd_extract_terms(
    corpus_root: str,
    manifest: str,
    top_k: int,
    stopwords_path: str | None,
    out_dir: str,
    seed: int,
) -> None:
    """Extract domain terms from the term_extraction split."""
    started = _now()
    records = _load_records(corpus_root, manifest)
    documents = [
        r.human_transcript.text()
        for r in records
        if r.split_tag == "term_extraction" and r.human_transcript is not None
    ]
    if not documents:
        _fail(EXIT_INVALID, "no term_extraction visits with transcripts")
    stop = load_stopwords(stopwords_path) if stopwords_path else None
    try:
        terms = extract_terms(documents, k=top_k, stopwords=stop)
    except TermExtractionError as exc:
        _fail(EXIT_INVALID, str(exc))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    terms_path = out / "terms.tsv"
    save_term_list(terms_path, terms)
    prompt = build_transcription_prompt(terms)
    _write_manifest(
        out,
        "extract-terms",
        started,
        "",
        seed,
        inputs=[corpus_root, manifest] + ([stopwords_path] if stopwords_path else []),
        outputs=[str(terms_path)],
    )
    preview = ", ".join(term for term, _ in list(terms)[:5])
    click.echo(f"extracted {len(terms)} terms from {len(documents)} transcripts to {terms_path}")
    click.echo(f"top terms: {preview}")
    click.echo(f"prompt preview ({len(prompt)} chars)")


@main.command("export-pairs")
@click.option("--store", "store_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--section", default="hpi", show_default=True)
@click.option("--exclude", "exclusion_phrases", multiple=True, help="Drop target lines matching this pattern.")
@click.option("--out", "out_dir", default="pairs-out", type=click.Path(file_okay=False))
@click.option("--seed", default=0, show_default=True)
def cmd_export_pairs(
    store_path: str,
    section: str,
    exclusion_phrases: tuple[str, ...],
    out_dir: str,
    seed: int,
) -> None:
    """Export generated/submitted section pairs for fine-tuning."""
    started = _now()
    try:
        store = NoteEventStore(store_path)
        result = export_finetune_pairs(store, section, list(exclusion_phrases))
    except StoreError as exc:
        _fail(EXIT_INVALID, str(exc))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs_path = out / "pairs.jsonl"
    write_finetune_pairs(pairs_path, result.pairs)
    _write_manifest(
        out,
        "export-pairs",
        started,
        "",
        seed,
        inputs=[store_path],
        outputs=[str(pairs_path)],
    )
    click.echo(
        f"exported {len(result.pairs)} pairs to {pairs_path} "
        f"(dropped {result.dropped_empty} empty targets, "
        f"skipped {result.skipped_unpaired} unpaired notes)"
    )


@main.command("serve")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--check", is_flag=True, default=False, help="Validate config and wiring, then exit.")
def cmd_serve(config_path: str, check: bool) -> None:
    """Host the note generation HTTP service."""
    from .service import ServiceConfig, create_app
    from .service.config import ConfigError

    try:
        config = ServiceConfig.from_json_file(config_path)
        app = create_app(config)
    except (ConfigError, RoutingError, PipelineError, StoreError, OSError) as exc:
        _fail(EXIT_INVALID, str(exc))
    if check:
        click.echo(f"ok: service configured on {config.host}:{config.port}")
        return
    import uvicorn

    uvicorn.run(app, host=config.host, port=config.port, log_level="info")


if __name__ == "__main__":
    main()
