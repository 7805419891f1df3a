import json

import pytest
from fastapi.testclient import TestClient

from ambientscribe.eventstore import StoreError
from ambientscribe.providers import ChatRequest, TransportError
from ambientscribe.service import DEFAULT_BUCKET_EDGES_S, LatencyHistogram, ServiceConfig, create_app
from ambientscribe.service.config import ConfigError

from fixturedata import PLAYBOOK, TRANSCRIPTS, build_corpus_tree, write_playbook


@pytest.fixture()
def service_env(tmp_path):
    build_corpus_tree(tmp_path)
    playbook_path = write_playbook(tmp_path / "playbook.json")
    routing = {
        "chat-default": {"url": f"mock:chat?playbook={playbook_path}", "retries": 0},
        "transcribe-default": {"url": "mock:transcription?seed=7", "retries": 0},
    }
    routing_path = tmp_path / "routing.json"
    routing_path.write_text(json.dumps(routing), encoding="utf-8")
    config = ServiceConfig(
        routing_table_path=str(routing_path),
        store_path=str(tmp_path / "state" / "events.jsonl"),
        default_chat_model="chat-default",
        default_transcription_model="transcribe-default",
    )
    return tmp_path, config


@pytest.fixture()
def client(service_env):
    _, config = service_env
    app = create_app(config)
    return TestClient(app)


def create_note(client, visit_id="day1_consultation01", **options):
    body = {
        "visit_id": visit_id,
        "transcript_text": TRANSCRIPTS[visit_id],
        "options": options,
    }
    return client.post("/v1/notes", json=body)


class TestServiceConfig:
    def test_default_bucket_edges(self):
        assert DEFAULT_BUCKET_EDGES_S[0] == 2.0
        assert DEFAULT_BUCKET_EDGES_S[-1] == 60.0
        assert len(DEFAULT_BUCKET_EDGES_S) == 30

    def test_rejects_non_increasing_edges(self, tmp_path):
        with pytest.raises(ConfigError, match="strictly increasing"):
            ServiceConfig(
                routing_table_path="r.json",
                store_path="e.jsonl",
                histogram_bucket_edges_s=(2.0, 2.0, 4.0),
            )

    def test_rejects_unknown_keys(self):
        with pytest.raises(ConfigError, match="unknown config keys: listen_addr"):
            ServiceConfig.from_dict({"listen_addr": "0.0.0.0", "routing_table_path": "r"})

    def test_from_json_file_resolves_relative_paths(self, tmp_path):
        (tmp_path / "routing.json").write_text("{}", encoding="utf-8")
        config_path = tmp_path / "service.json"
        config_path.write_text(
            json.dumps({"routing_table_path": "routing.json", "store_path": "data/events.jsonl"}),
            encoding="utf-8",
        )
        config = ServiceConfig.from_json_file(config_path)
        assert config.routing_table_path == str(tmp_path / "routing.json")
        assert config.store_path == str(tmp_path / "data" / "events.jsonl")
        assert config.resolved_trace_log_path == str(tmp_path / "data" / "traces.jsonl")

    def test_missing_routing_table_rejected(self):
        with pytest.raises(ConfigError, match="routing_table_path"):
            ServiceConfig(store_path="e.jsonl")


class TestLatencyHistogram:
    def test_bucket_boundaries(self):
        hist = LatencyHistogram((2.0, 4.0, 6.0))
        for value in (0.0, 1.9, 2.0):
            hist.observe(value)
        hist.observe(2.1)
        hist.observe(6.0)
        hist.observe(6.1)
        assert hist.counts == (3, 1, 1, 1)
        assert hist.total == 6

    def test_counts_sum_to_total(self):
        hist = LatencyHistogram(DEFAULT_BUCKET_EDGES_S)
        for i in range(100):
            hist.observe(i * 0.9)
        assert sum(hist.counts) == hist.total == 100

    def test_negative_rejected(self):
        hist = LatencyHistogram((1.0,))
        with pytest.raises(ValueError, match="negative"):
            hist.observe(-0.1)

    def test_non_increasing_edges_rejected(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            LatencyHistogram((3.0, 1.0))


class TestCreateNote:
    def test_mock_backed_note_with_six_soap_calls(self, client, service_env):
        tmp_path, config = service_env
        response = create_note(client)
        assert response.status_code == 200
        payload = response.json()
        assert payload["soap_note"]["cc"] == "Diarrhea and abdominal cramping"
        assert payload["soap_note"]["objective"] == ""
        assert payload["patient_instructions"].startswith("Drink small amounts")
        assert payload["note_text"].startswith("SUBJECTIVE\n")
        assert payload["latency_ms"] > 0

        trace_lines = (
            (tmp_path / "state" / "traces.jsonl").read_text(encoding="utf-8").splitlines()
        )
        assert len(trace_lines) == 1
        record = json.loads(trace_lines[0])
        soap_calls = [
            c for c in record["calls"] if c["section"] in ("hpi", "encounters_vitals", "assessment_plan")
        ]
        assert len(soap_calls) == 6
        assert len(record["calls"]) == 7

    def test_each_200_stores_exactly_one_generated_event(self, client):
        for visit in ("day1_consultation01", "day1_consultation02"):
            assert create_note(client, visit).status_code == 200
        store = client.app.state.scribe.store
        generated = [e for e in store.iter_events() if e.kind == "generated"]
        assert len(generated) == 2

    def test_both_inputs_rejected(self, client):
        body = {
            "visit_id": "v",
            "transcript_text": "Doctor: hi",
            "audio_ref": "corpus/v/audio.webm",
        }
        response = client.post("/v1/notes", json=body)
        assert response.status_code == 400
        payload = response.json()
        assert payload["code"] == "bad_request"
        assert "exactly one" in json.dumps(payload["detail"])

    def test_neither_input_rejected(self, client):
        response = client.post("/v1/notes", json={"visit_id": "v"})
        assert response.status_code == 400

    def test_unparseable_transcript_rejected(self, client):
        response = client.post(
            "/v1/notes", json={"visit_id": "v", "transcript_text": "   \n  "}
        )
        assert response.status_code == 400
        assert "unparseable transcript" in response.json()["message"]

    def test_unknown_model_404(self, client):
        response = create_note(client, model="does-not-exist")
        assert response.status_code == 404
        assert response.json()["code"] == "unknown_model"

    def test_provider_outage_502_stores_nothing(self, client):
        class DownProvider:
            def complete_chat(self, request: ChatRequest):
                raise TransportError("vendor down", attempts=3)

        state = client.app.state.scribe
        state._chat_providers["chat-default"] = DownProvider()
        response = create_note(client)
        assert response.status_code == 502
        payload = response.json()
        assert payload["code"] == "provider_failure"
        assert "hpi" in payload["detail"]
        assert len(list(state.store.iter_events())) == 0
        assert state.histogram.total == 0

    def test_store_unavailable_503(self, client, monkeypatch):
        state = client.app.state.scribe

        def broken_append(event):
            raise StoreError("disk full")

        monkeypatch.setattr(state.store, "append", broken_append)
        response = create_note(client)
        assert response.status_code == 503
        assert response.json()["code"] == "store_unavailable"

    def test_audio_ref_transcribes_first(self, client, service_env):
        tmp_path, _ = service_env
        audio_ref = str(tmp_path / "corpus" / "day1_consultation03" / "audio.webm")
        response = client.post(
            "/v1/notes", json={"visit_id": "day1_consultation03", "audio_ref": audio_ref}
        )
        assert response.status_code == 200
        assert response.json()["soap_note"]["cc"] == "Itchy rash on both arms"

    def test_consent_passthrough(self, client):
        response = create_note(client, consent_recorded=True)
        assert response.status_code == 200
        assert response.json()["consent_recorded"] is True
        record = json.loads(
            client.app.state.scribe.trace_log_path.read_text(encoding="utf-8").splitlines()[0]
        )
        assert record["consent_recorded"] is True

    def test_instructions_verification_flag_adds_call(self, client):
        response = create_note(client, verify_instructions=True)
        assert response.status_code == 200
        record = json.loads(
            client.app.state.scribe.trace_log_path.read_text(encoding="utf-8").splitlines()[0]
        )
        assert len(record["calls"]) == 8


class TestSubmission:
    def test_identity_submission_all_rates_zero(self, client):
        note = create_note(client).json()
        response = client.post(
            f"/v1/notes/{note['note_id']}/submission",
            json={"sections": dict(note["soap_note"], patient_instructions=note["patient_instructions"])},
        )
        assert response.status_code == 200
        rates = response.json()["edit_rate_per_section"]
        assert set(rates) == {
            "cc",
            "hpi",
            "encounters_vitals",
            "objective",
            "assessment_plan",
            "patient_instructions",
        }
        assert all(rate == 0.0 for rate in rates.values())

    def test_deletion_only_edit_rate(self, client):
        note = create_note(client).json()
        hpi = note["soap_note"]["hpi"]
        deleted = 50
        response = client.post(
            f"/v1/notes/{note['note_id']}/submission",
            json={"sections": {"hpi": hpi[: len(hpi) - deleted]}},
        )
        assert response.status_code == 200
        assert response.json()["edit_rate_per_section"]["hpi"] == deleted / len(hpi)

    def test_unknown_note_404(self, client):
        response = client.post("/v1/notes/nope/submission", json={"sections": {"hpi": "x"}})
        assert response.status_code == 404
        assert response.json()["code"] == "unknown_note"

    def test_second_submission_409(self, client):
        note = create_note(client).json()
        url = f"/v1/notes/{note['note_id']}/submission"
        assert client.post(url, json={"sections": {"hpi": "Edited."}}).status_code == 200
        response = client.post(url, json={"sections": {"hpi": "Edited again."}})
        assert response.status_code == 409
        assert response.json()["code"] == "already_submitted"

    def test_unknown_section_rejected(self, client):
        note = create_note(client).json()
        response = client.post(
            f"/v1/notes/{note['note_id']}/submission", json={"sections": {"ros": "x"}}
        )
        assert response.status_code == 400


class TestMetricsSummary:
    def test_empty_store_zeroed(self, client):
        payload = client.get("/v1/metrics/summary").json()
        assert payload["latency"]["n"] == 0
        assert payload["latency"]["p50_s"] == 0.0
        assert payload["edit_rate"]["notes_submitted"] == 0
        assert payload["edit_rate"]["per_section"] == {}

    def test_p50_from_replayed_latencies(self, service_env):
        tmp_path, config = service_env
        trace_path = tmp_path / "state" / "traces.jsonl"
        trace_path.parent.mkdir(parents=True, exist_ok=True)
        with trace_path.open("w", encoding="utf-8") as handle:
            for seconds in (10, 20, 30, 40):
                handle.write(json.dumps({"latency_ms": seconds * 1000.0}) + "\n")
        client = TestClient(create_app(config))
        payload = client.get("/v1/metrics/summary").json()
        assert payload["latency"]["n"] == 4
        assert payload["latency"]["p50_s"] == 20.0
        assert payload["latency"]["histogram"]["total"] == 4

    def test_histogram_counts_successful_notes(self, client):
        for visit in ("day1_consultation01", "day1_consultation02", "day1_consultation04"):
            assert create_note(client, visit).status_code == 200
        payload = client.get("/v1/metrics/summary").json()
        assert payload["latency"]["histogram"]["total"] == 3
        assert sum(payload["latency"]["histogram"]["counts"]) == 3

    def test_seventeen_percent_shorter_hpi(self, client):
        from datetime import datetime, timezone

        from ambientscribe.eventstore import NoteEvent

        store = client.app.state.scribe.store
        for i in range(5):
            sections = {
                "cc": "c",
                "hpi": "x" * 100,
                "encounters_vitals": "",
                "objective": "",
                "assessment_plan": "plan",
                "patient_instructions": "",
            }
            note_id = f"synthetic-{i}"
            store.append(
                NoteEvent(note_id, "v", "generated", sections, datetime.now(timezone.utc))
            )
            store.append(
                NoteEvent(
                    note_id,
                    "v",
                    "submitted",
                    dict(sections, hpi="x" * 83),
                    datetime.now(timezone.utc),
                )
            )
        payload = client.get("/v1/metrics/summary").json()
        hpi_length = payload["length"]["per_section"]["hpi"]
        assert hpi_length["generated_mean_chars"] == 100.0
        assert hpi_length["submitted_mean_chars"] == 83.0
        assert hpi_length["percent_change"] == -17.0
        assert payload["edit_rate"]["per_section"]["hpi"]["mean"] == pytest.approx(0.17)

    def test_objective_never_reported(self, client):
        note = create_note(client).json()
        client.post(f"/v1/notes/{note['note_id']}/submission", json={"sections": {"hpi": "Edited."}})
        payload = client.get("/v1/metrics/summary").json()
        assert "objective" not in payload["edit_rate"]["per_section"]
        assert "objective" not in payload["length"]["per_section"]


class TestRestartDurability:
    def test_events_and_metrics_survive_restart(self, service_env):
        tmp_path, config = service_env
        client = TestClient(create_app(config))
        note_ids = []
        for visit in ("day1_consultation01", "day1_consultation02"):
            note_ids.append(create_note(client, visit).json()["note_id"])
        client.post(f"/v1/notes/{note_ids[0]}/submission", json={"sections": {"hpi": "Edited."}})
        before = client.get("/v1/metrics/summary").json()

        reopened = TestClient(create_app(config))
        after = reopened.get("/v1/metrics/summary").json()
        assert after == before
        assert after["latency"]["n"] == 2
        assert after["edit_rate"]["notes_submitted"] == 1

        # The submitted note stays submitted across the restart.
        response = reopened.post(
            f"/v1/notes/{note_ids[0]}/submission", json={"sections": {"hpi": "Again."}}
        )
        assert response.status_code == 409
        # The other note can still be submitted.
        response = reopened.post(
            f"/v1/notes/{note_ids[1]}/submission", json={"sections": {"hpi": "Edited too."}}
        )
        assert response.status_code == 200


class TestHealthz:
    def test_all_mock_providers_ok(self, client):
        payload = client.get("/healthz").json()
        assert payload["status"] == "ok"
        assert payload["provider_reachability"] == {
            "chat-default": "ok",
            "transcribe-default": "ok",
        }

    def test_unreachable_vendor_degraded(self, tmp_path, service_env):
        base, config = service_env
        routing = json.loads((base / "routing.json").read_text(encoding="utf-8"))
        routing["real-vendor"] = {"url": "http://127.0.0.1:1/v1/chat", "retries": 0}
        (base / "routing.json").write_text(json.dumps(routing), encoding="utf-8")
        client = TestClient(create_app(config))
        payload = client.get("/healthz").json()
        assert payload["status"] == "degraded"
        assert payload["provider_reachability"]["real-vendor"].startswith("unreachable")
        assert payload["provider_reachability"]["chat-default"] == "ok"

    def test_no_store_side_effects(self, client):
        store = client.app.state.scribe.store
        before = len(store)
        for _ in range(3):
            assert client.get("/healthz").status_code == 200
        assert len(store) == before
