import json
from datetime import datetime, timezone
from pathlib import Path

import pytest
from click.testing import CliRunner

from ambientscribe.cli import main
from ambientscribe.eventstore import NoteEvent, NoteEventStore
from ambientscribe.pipeline import NoteGenerationError

from fixturedata import ALL_VISITS, EXPERT_NOTES, build_corpus_tree, write_playbook


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def workspace(tmp_path):
    """Corpus tree, playbook, and routing table ready for CLI runs."""
    build_corpus_tree(tmp_path)
    playbook_path = write_playbook(tmp_path / "playbook.json")
    routing = {
        "scribe-chat": {"url": f"mock:chat?playbook={playbook_path}", "retries": 0},
        "listen-base": {
            "url": "mock:transcription?corruption_rate=0.26&prompted_corruption_rate=0.21&seed=11",
            "retries": 0,
        },
        "listen-clean": {"url": "mock:transcription?seed=3", "retries": 0},
    }
    (tmp_path / "routing.json").write_text(json.dumps(routing), encoding="utf-8")
    return tmp_path


def run_generate(runner, workspace, out_name="notes"):
    result = runner.invoke(
        main,
        [
            "generate",
            "--corpus", str(workspace / "corpus"),
            "--manifest", str(workspace / "manifest.tsv"),
            "--routing", str(workspace / "routing.json"),
            "--model", "scribe-chat",
            "--out", str(workspace / out_name),
        ],
    )
    return result


class TestIngest:
    def test_summary_line(self, runner, workspace):
        result = runner.invoke(
            main, ["ingest", str(workspace / "corpus"), str(workspace / "manifest.tsv")]
        )
        assert result.exit_code == 0
        assert "4 visits (2 eval / 2 term_extraction)" in result.output

    def test_all_eval_manifest(self, runner, workspace):
        result = runner.invoke(
            main, ["ingest", str(workspace / "corpus"), str(workspace / "manifest_all_eval.tsv")]
        )
        assert result.exit_code == 0
        assert "4 visits (4 eval / 0 term_extraction)" in result.output

    def test_empty_corpus_exit_2(self, runner, tmp_path):
        empty_root = tmp_path / "empty"
        empty_root.mkdir()
        manifest = tmp_path / "manifest.tsv"
        manifest.write_text("ghost01\teval\n", encoding="utf-8")
        result = runner.invoke(main, ["ingest", str(empty_root), str(manifest)])
        assert result.exit_code == 2

    def test_rerun_identical_output(self, runner, workspace):
        args = ["ingest", str(workspace / "corpus"), str(workspace / "manifest.tsv")]
        assert runner.invoke(main, args).output == runner.invoke(main, args).output


class TestEvalWer:
    def invoke(self, runner, workspace, models, extra=()):
        return runner.invoke(
            main,
            [
                "eval-wer",
                "--corpus", str(workspace / "corpus"),
                "--manifest", str(workspace / "manifest_all_eval.tsv"),
                "--routing", str(workspace / "routing.json"),
                "--models", models,
                "--out", str(workspace / "wer"),
                *extra,
            ],
        )

    def test_single_model_row(self, runner, workspace):
        result = self.invoke(runner, workspace, "listen-base")
        assert result.exit_code == 0, result.output
        report = json.loads((workspace / "wer" / "wer_report.json").read_text())
        assert len(report["rows"]) == 1
        assert report["comparisons"] == []
        row = report["rows"][0]
        assert row["n"] == 4
        # Seeded corruption at rate 0.26; binomial noise at this corpus size.
        assert 0.18 <= row["mean"] <= 0.34
        assert (workspace / "wer" / "eval-wer.manifest.json").is_file()

    def test_prompt_terms_add_row_and_reduction(self, runner, workspace):
        terms_path = workspace / "terms.tsv"
        terms_path.write_text("cough\t1.5\nrash\t0.7\n", encoding="utf-8")
        result = self.invoke(
            runner, workspace, "listen-base", extra=["--prompt-terms", str(terms_path)]
        )
        assert result.exit_code == 0, result.output
        report = json.loads((workspace / "wer" / "wer_report.json").read_text())
        labels = [row["label"] for row in report["rows"]]
        assert labels == ["listen-base", "listen-base+terms"]
        assert len(report["comparisons"]) == 1
        assert len(report["reductions"]) == 1
        reduction = report["reductions"][0]
        assert reduction["prompted_mean"] < reduction["baseline_mean"]
        assert 5.0 <= reduction["percent"] <= 35.0
        assert reduction["formatted"].endswith("%")
        assert "reduction" in result.output

    def test_same_model_twice_p_value_one(self, runner, workspace):
        result = self.invoke(runner, workspace, "listen-base,listen-base")
        assert result.exit_code == 0, result.output
        report = json.loads((workspace / "wer" / "wer_report.json").read_text())
        comparison = report["comparisons"][0]
        assert comparison["p_value"] == 1.0
        assert comparison["statistic"] == 0.0

    def test_missing_audio_skipped_with_count(self, runner, workspace):
        (workspace / "corpus" / "day1_consultation02" / "audio.webm").unlink()
        result = self.invoke(runner, workspace, "listen-clean")
        assert result.exit_code == 0, result.output
        report = json.loads((workspace / "wer" / "wer_report.json").read_text())
        assert report["skipped_visits"] == ["day1_consultation02"]
        assert report["rows"][0]["n"] == 3

    def test_unknown_model_exit_2(self, runner, workspace):
        result = self.invoke(runner, workspace, "nonexistent")
        assert result.exit_code == 2

    def test_report_bytes_reproducible(self, runner, workspace):
        self.invoke(runner, workspace, "listen-base")
        first = (workspace / "wer" / "wer_report.json").read_bytes()
        self.invoke(runner, workspace, "listen-base")
        assert (workspace / "wer" / "wer_report.json").read_bytes() == first


class TestGenerate:
    def test_notes_and_traces_written(self, runner, workspace):
        result = run_generate(runner, workspace)
        assert result.exit_code == 0, result.output
        out = workspace / "notes"
        notes = sorted(p.name for p in out.glob("*.txt"))
        assert notes == ["day1_consultation01.txt", "day1_consultation02.txt"]
        traces = sorted(p.name for p in out.glob("*.trace.json"))
        assert traces == ["day1_consultation01.trace.json", "day1_consultation02.trace.json"]
        note_text = (out / "day1_consultation01.txt").read_text(encoding="utf-8")
        assert note_text.startswith("SUBJECTIVE\n")
        assert "CC: Diarrhea and abdominal cramping" in note_text
        trace = json.loads((out / "day1_consultation01.trace.json").read_text())
        soap = [c for c in trace["calls"] if c["section"] != "patient_instructions"]
        assert len(soap) == 6
        assert "p50 latency" in result.output
        assert (out / "generate.manifest.json").is_file()

    def test_rerun_byte_identical_notes(self, runner, workspace):
        run_generate(runner, workspace, "notes_a")
        run_generate(runner, workspace, "notes_b")
        for visit in ("day1_consultation01", "day1_consultation02"):
            a = (workspace / "notes_a" / f"{visit}.txt").read_bytes()
            b = (workspace / "notes_b" / f"{visit}.txt").read_bytes()
            assert a == b

    def test_empty_eval_split_exit_0(self, runner, workspace):
        manifest = workspace / "none_eval.tsv"
        manifest.write_text(
            "".join(f"{v}\tterm_extraction\n" for v in ALL_VISITS), encoding="utf-8"
        )
        result = runner.invoke(
            main,
            [
                "generate",
                "--corpus", str(workspace / "corpus"),
                "--manifest", str(manifest),
                "--routing", str(workspace / "routing.json"),
                "--model", "scribe-chat",
                "--out", str(workspace / "no_notes"),
            ],
        )
        assert result.exit_code == 0, result.output
        assert "generated 0 notes" in result.output

    def test_partial_failure_exit_1(self, runner, workspace, monkeypatch):
        import ambientscribe.cli as cli_module

        real = cli_module.generate_soap_note

        def flaky(transcript, *args, **kwargs):
            if transcript.visit_id == "day1_consultation02":
                raise NoteGenerationError({"hpi": "injected failure"})
            return real(transcript, *args, **kwargs)

        monkeypatch.setattr(cli_module, "generate_soap_note", flaky)
        result = run_generate(runner, workspace, "notes_partial")
        assert result.exit_code == 1
        assert "failed day1_consultation02" in result.output
        assert (workspace / "notes_partial" / "day1_consultation01.txt").is_file()

    def test_unknown_model_exit_2(self, runner, workspace):
        result = runner.invoke(
            main,
            [
                "generate",
                "--corpus", str(workspace / "corpus"),
                "--manifest", str(workspace / "manifest.tsv"),
                "--routing", str(workspace / "routing.json"),
                "--model", "ghost-model",
                "--out", str(workspace / "x"),
            ],
        )
        assert result.exit_code == 2


def write_reference_notes(workspace):
    refs = workspace / "references"
    refs.mkdir(exist_ok=True)
    for visit in ("day1_consultation01", "day1_consultation02"):
        (refs / f"{visit}.txt").write_text(EXPERT_NOTES[visit], encoding="utf-8")
    return refs


class TestJudge:
    def test_scripted_always_candidate(self, runner, workspace):
        run_generate(runner, workspace)
        refs = write_reference_notes(workspace)
        result = runner.invoke(
            main,
            [
                "judge",
                "--candidates", str(workspace / "notes"),
                "--references", str(refs),
                "--scripted", "always_candidate",
                "--runs", "1",
                "--seed", "5",
                "--out", str(workspace / "judge"),
            ],
        )
        assert result.exit_code == 0, result.output
        assert "win rate: 1.00" in result.output
        report = json.loads((workspace / "judge" / "win_rate.json").read_text())
        assert report["comparisons"] == 2
        verdicts = (workspace / "judge" / "verdicts.jsonl").read_text().splitlines()
        assert len(verdicts) == 2
        assert (workspace / "judge" / "judge.manifest.json").is_file()

    def test_labels_27_of_32(self, runner, tmp_path):
        cand = tmp_path / "cand"
        ref = tmp_path / "ref"
        cand.mkdir()
        ref.mkdir()
        for i in range(32):
            (cand / f"note{i:02d}.txt").write_text(f"HPI: candidate text {i}.", encoding="utf-8")
            (ref / f"note{i:02d}.txt").write_text(f"HPI: reference text {i}.", encoding="utf-8")
        labels = ",".join(["candidate"] * 27 + ["reference"] * 5)
        result = runner.invoke(
            main,
            [
                "judge",
                "--candidates", str(cand),
                "--references", str(ref),
                "--scripted", f"labels:{labels}",
                "--runs", "1",
                "--seed", "3",
                "--out", str(tmp_path / "judge"),
            ],
        )
        assert result.exit_code == 0, result.output
        assert "win rate: 0.84" in result.output
        report = json.loads((tmp_path / "judge" / "win_rate.json").read_text())
        assert report["win_rate"] == 27 / 32

    def test_coverage_mismatch_exit_2(self, runner, tmp_path):
        cand = tmp_path / "cand"
        ref = tmp_path / "ref"
        cand.mkdir()
        ref.mkdir()
        (cand / "a.txt").write_text("HPI: x", encoding="utf-8")
        (cand / "b.txt").write_text("HPI: y", encoding="utf-8")
        (ref / "a.txt").write_text("HPI: z", encoding="utf-8")
        result = runner.invoke(
            main,
            [
                "judge",
                "--candidates", str(cand),
                "--references", str(ref),
                "--scripted", "always_a",
                "--out", str(tmp_path / "judge"),
            ],
        )
        assert result.exit_code == 2
        assert "b" in result.output

    def test_requires_judge_source(self, runner, tmp_path):
        cand = tmp_path / "cand"
        cand.mkdir()
        (cand / "a.txt").write_text("HPI: x", encoding="utf-8")
        result = runner.invoke(
            main,
            ["judge", "--candidates", str(cand), "--references", str(cand)],
        )
        assert result.exit_code == 2
        assert "--scripted" in result.output


class TestEvalNotes:
    def test_identity_comparison(self, runner, workspace):
        run_generate(runner, workspace)
        result = runner.invoke(
            main,
            [
                "eval-notes",
                "--generated", str(workspace / "notes"),
                "--submitted", str(workspace / "notes"),
                "--out", str(workspace / "cmp"),
            ],
        )
        assert result.exit_code == 0, result.output
        report = json.loads((workspace / "cmp" / "note_compare.json").read_text())
        assert report["n"] == 2
        assert report["edit_rate"]["mean"] == 0.0
        assert report["embedding_f1"]["mean"] == 1.0
        assert report["length_reduction"]["formatted"] == "0%"
        assert report["length_test"]["p_value"] == 1.0
        assert report["generated_length"]["mean"] == report["submitted_length"]["mean"]

    def test_synthetic_17_percent_shorter(self, runner, tmp_path):
        gen = tmp_path / "gen"
        sub = tmp_path / "sub"
        gen.mkdir()
        sub.mkdir()
        for i in range(1, 33):
            (gen / f"v{i:02d}.txt").write_text("a" * (100 * i), encoding="utf-8")
            (sub / f"v{i:02d}.txt").write_text("a" * (83 * i), encoding="utf-8")
        result = runner.invoke(
            main,
            [
                "eval-notes",
                "--generated", str(gen),
                "--submitted", str(sub),
                "--out", str(tmp_path / "cmp"),
            ],
        )
        assert result.exit_code == 0, result.output
        report = json.loads((tmp_path / "cmp" / "note_compare.json").read_text())
        assert report["length_reduction"]["percent"] == pytest.approx(17.0)
        assert report["length_reduction"]["formatted"] == "17%"
        assert report["length_test"]["p_value"] < 1e-3
        assert report["edit_rate"]["mean"] == pytest.approx(0.17)

    def test_length_row_style(self, runner, workspace):
        run_generate(runner, workspace)
        runner.invoke(
            main,
            [
                "eval-notes",
                "--generated", str(workspace / "notes"),
                "--submitted", str(workspace / "notes"),
                "--out", str(workspace / "cmp"),
            ],
        )
        report = json.loads((workspace / "cmp" / "note_compare.json").read_text())
        import re

        assert re.fullmatch(r"\d+ \+/- \d+", report["generated_length"]["formatted"])

    def test_unpaired_skipped(self, runner, tmp_path):
        gen = tmp_path / "gen"
        sub = tmp_path / "sub"
        gen.mkdir()
        sub.mkdir()
        for name in ("a", "b"):
            (gen / f"{name}.txt").write_text("HPI: text here.", encoding="utf-8")
            (sub / f"{name}.txt").write_text("HPI: text here.", encoding="utf-8")
        (gen / "only_generated.txt").write_text("HPI: extra.", encoding="utf-8")
        result = runner.invoke(
            main,
            [
                "eval-notes",
                "--generated", str(gen),
                "--submitted", str(sub),
                "--out", str(tmp_path / "cmp"),
            ],
        )
        assert result.exit_code == 0, result.output
        report = json.loads((tmp_path / "cmp" / "note_compare.json").read_text())
        assert report["skipped"] == ["only_generated"]
        assert report["n"] == 2


class TestExtractTerms:
    def test_writes_term_list(self, runner, workspace):
        result = runner.invoke(
            main,
            [
                "extract-terms",
                "--corpus", str(workspace / "corpus"),
                "--manifest", str(workspace / "manifest.tsv"),
                "--out", str(workspace / "terms"),
            ],
        )
        assert result.exit_code == 0, result.output
        terms_path = workspace / "terms" / "terms.tsv"
        assert terms_path.is_file()
        lines = terms_path.read_text(encoding="utf-8").splitlines()
        assert lines
        assert all("\t" in line for line in lines)
        assert "extracted" in result.output
        assert (workspace / "terms" / "extract-terms.manifest.json").is_file()

    def test_no_term_split_exit_2(self, runner, workspace):
        result = runner.invoke(
            main,
            [
                "extract-terms",
                "--corpus", str(workspace / "corpus"),
                "--manifest", str(workspace / "manifest_all_eval.tsv"),
                "--out", str(workspace / "terms"),
            ],
        )
        assert result.exit_code == 2

    def test_deterministic(self, runner, workspace):
        args = [
            "extract-terms",
            "--corpus", str(workspace / "corpus"),
            "--manifest", str(workspace / "manifest.tsv"),
            "--out", str(workspace / "terms"),
        ]
        runner.invoke(main, args)
        first = (workspace / "terms" / "terms.tsv").read_bytes()
        runner.invoke(main, args)
        assert (workspace / "terms" / "terms.tsv").read_bytes() == first


class TestExportPairs:
    def test_export_round_trip(self, runner, tmp_path):
        store = NoteEventStore(tmp_path / "events.jsonl")
        sections = {
            "cc": "c",
            "hpi": "Generated HPI text.",
            "encounters_vitals": "",
            "objective": "",
            "assessment_plan": "p",
            "patient_instructions": "",
        }
        for i in range(3):
            note_id = f"n{i}"
            store.append(
                NoteEvent(note_id, "v", "generated", sections, datetime.now(timezone.utc))
            )
            store.append(
                NoteEvent(
                    note_id,
                    "v",
                    "submitted",
                    dict(sections, hpi="Edited HPI text.\nPlease follow up as needed."),
                    datetime.now(timezone.utc),
                )
            )
        result = runner.invoke(
            main,
            [
                "export-pairs",
                "--store", str(tmp_path / "events.jsonl"),
                "--exclude", "follow up",
                "--out", str(tmp_path / "pairs"),
            ],
        )
        assert result.exit_code == 0, result.output
        lines = (tmp_path / "pairs" / "pairs.jsonl").read_text().splitlines()
        assert len(lines) == 3
        record = json.loads(lines[0])
        assert record["source"] == "Generated HPI text."
        assert record["target"] == "Edited HPI text."
        assert "exported 3 pairs" in result.output

    def test_unknown_section_exit_2(self, runner, tmp_path):
        (tmp_path / "events.jsonl").write_text("", encoding="utf-8")
        result = runner.invoke(
            main,
            [
                "export-pairs",
                "--store", str(tmp_path / "events.jsonl"),
                "--section", "ros",
                "--out", str(tmp_path / "pairs"),
            ],
        )
        assert result.exit_code == 2


class TestServe:
    def test_check_validates_wiring(self, runner, workspace):
        config_path = workspace / "service.json"
        config_path.write_text(
            json.dumps(
                {
                    "routing_table_path": "routing.json",
                    "store_path": "state/events.jsonl",
                    "default_chat_model": "scribe-chat",
                }
            ),
            encoding="utf-8",
        )
        result = runner.invoke(main, ["serve", "--config", str(config_path), "--check"])
        assert result.exit_code == 0, result.output
        assert "ok: service configured" in result.output

    def test_bad_config_exit_2(self, runner, workspace):
        config_path = workspace / "bad.json"
        config_path.write_text(json.dumps({"listen_addr": "x"}), encoding="utf-8")
        result = runner.invoke(main, ["serve", "--config", str(config_path), "--check"])
        assert result.exit_code == 2
