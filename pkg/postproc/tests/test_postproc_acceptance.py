"""Release acceptance gate for the post-processor.

Same reporting convention as the workbench gate: one test per criterion,
each printing a single PASS or FAIL line past pytest's capture.
"""
import json
import time
from contextlib import contextmanager

import pytest
from fastapi.testclient import TestClient

from notepostproc.evaluate import evaluate_compression
from notepostproc.pairs import write_pairs
from notepostproc.service import create_app
from notepostproc.synthetic import DEFAULT_BOILERPLATE, make_toy_pairs
from notepostproc.training import TrainConfig, train

CPU_BUDGET_S = 30 * 60


@pytest.fixture()
def criterion(capsys):
    @contextmanager
    def _criterion(name):
        try:
            yield
        except BaseException:
            with capsys.disabled():
                print(f"FAIL: {name}")
            raise
        with capsys.disabled():
            print(f"PASS: {name}")

    return _criterion


def test_toy_finetune_learns_boilerplate_removal(criterion, tmp_path):
    with criterion(
        "Toy fine-tune (batch 8, 5 epochs, cosine, warmup 0.1, max 512: "
        ">=80% boilerplate removal, reduction in [10%, 25%], <30min CPU)"
    ):
        started = time.monotonic()
        pairs = make_toy_pairs(250, seed=42)
        train_pairs, held_out = pairs[:200], pairs[200:]
        assert len(held_out) == 50
        pairs_path = tmp_path / "pairs.jsonl"
        write_pairs(pairs_path, train_pairs)

        config = TrainConfig(pairs_path=str(pairs_path), output_dir=str(tmp_path / "ckpt"))
        # The full fine-tune protocol is the default configuration.
        assert config.batch_size == 8
        assert config.epochs == 5
        assert config.lr_schedule == "cosine"
        assert config.warmup_ratio == 0.1
        assert config.max_sequence_tokens == 512
        checkpoint = train(config)

        log = json.loads((checkpoint / "training_log.json").read_text())
        losses = log["epoch_losses"]
        assert len(losses) == 5
        assert losses[-1] < losses[0], losses  # non-increasing trend

        client = TestClient(create_app(checkpoint_dir=checkpoint))
        removed = 0
        for pair in held_out:
            response = client.post("/v1/postprocess", json={"text": pair.source})
            assert response.status_code == 200
            output = response.json()["text"]
            assert output.strip()
            removed += DEFAULT_BOILERPLATE not in output
        assert removed >= 40, f"boilerplate removed in only {removed}/50 outputs"

        report = evaluate_compression(client, held_out)
        post_row = report.rows[2]
        reduction = -post_row.percent_vs_generated
        assert 10.0 <= reduction <= 25.0, f"length reduction {reduction:.1f}%"

        elapsed = time.monotonic() - started
        assert elapsed < CPU_BUDGET_S, f"took {elapsed:.0f}s"


def test_echo_endpoint_contract(criterion):
    with criterion("Post-process endpoint contract (echo: 0% length change, F1 = 1.0)"):
        client = TestClient(create_app(echo=True))
        pairs = make_toy_pairs(50, seed=7)
        report = evaluate_compression(client, pairs)
        post_row = report.rows[2]
        assert post_row.percent_vs_generated == 0.0
        assert report.f1_post_vs_generated == 1.0
        assert report.length_test_post == (0.0, 1.0)
