"""Operator commands: pair generation, training, serving, evaluation."""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx
import uvicorn

from notepostproc.evaluate import EndpointError, evaluate_compression
from notepostproc.pairs import PairsError, load_pairs, write_pairs
from notepostproc.service import create_app
from notepostproc.synthetic import DEFAULT_BOILERPLATE, make_toy_pairs
from notepostproc.training import ConfigError, TrainConfig, train


@click.group()
def main():
    """Post-processor for generated note sections."""


@main.command("make-pairs")
@click.argument("out", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--n", default=250, show_default=True, help="Number of pairs.")
@click.option("--seed", default=0, show_default=True)
@click.option("--boilerplate", default=DEFAULT_BOILERPLATE, show_default=True)
def cmd_make_pairs(out, n, seed, boilerplate):
    """Write a synthetic source/target JSONL pairs file."""
    try:
        pairs = make_toy_pairs(n, seed=seed, boilerplate=boilerplate)
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pairs(out, pairs)
    click.echo(f"wrote {len(pairs)} pairs to {out}")


@main.command("train")
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "output_dir", required=True, type=click.Path(file_okay=False))
@click.option("--epochs", default=5, show_default=True)
@click.option("--batch-size", default=8, show_default=True)
@click.option("--max-tokens", default=512, show_default=True)
@click.option("--warmup-ratio", default=0.1, show_default=True)
@click.option("--learning-rate", default=3e-4, show_default=True)
@click.option("--seed", default=0, show_default=True)
def cmd_train(pairs_path, output_dir, epochs, batch_size, max_tokens, warmup_ratio, learning_rate, seed):
    """Fine-tune on a pairs file and save a checkpoint directory."""
    try:
        config = TrainConfig(
            pairs_path=pairs_path,
            output_dir=output_dir,
            max_sequence_tokens=max_tokens,
            batch_size=batch_size,
            epochs=epochs,
            warmup_ratio=warmup_ratio,
            learning_rate=learning_rate,
            seed=seed,
        )
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    try:
        out_dir = train(config)
    except PairsError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    log = json.loads((out_dir / "training_log.json").read_text(encoding="utf-8"))
    losses = ", ".join(f"{loss:.4f}" for loss in log["epoch_losses"])
    click.echo(f"checkpoint saved to {out_dir}")
    click.echo(f"epoch losses: {losses}")
    if log["truncated_sequences"]:
        click.echo(f"warning: truncated {log['truncated_sequences']} sequences", err=True)


@main.command("serve")
@click.option("--checkpoint", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--echo", is_flag=True, help="Serve the identity post-processor.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8077, show_default=True)
def cmd_serve(checkpoint, echo, host, port):
    """Serve POST /v1/postprocess."""
    if checkpoint is None and not echo:
        click.echo("error: pass --checkpoint or --echo", err=True)
        sys.exit(2)
    app = create_app(checkpoint_dir=checkpoint, echo=echo)
    uvicorn.run(app, host=host, port=port)


@main.command("evaluate")
@click.option("--endpoint", required=True, help="Base URL of a running post-processor.")
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=None)
def cmd_evaluate(endpoint, pairs_path, out_dir):
    """Compare generated, edited, and post-processed text lengths."""
    try:
        pairs = load_pairs(pairs_path)
    except PairsError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    try:
        with httpx.Client(base_url=endpoint, timeout=60.0) as client:
            report = evaluate_compression(client, pairs)
    except EndpointError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(report.render_text())
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "compression_report.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        (out_dir / "compression_report.txt").write_text(
            report.render_text() + "\n", encoding="utf-8"
        )
        click.echo(f"report written to {out_dir}")


if __name__ == "__main__":
    main()
