from __future__ import annotations

import json
from fractions import Fraction
from random import Random

import pytest
from fastapi.testclient import TestClient

from dialectforge.annotation import (
    RATING_GRID,
    AnnotationItem,
    AnnotationStore,
    RatingError,
    create_app,
    load_items,
    validate_rating_value,
)


def items_for(models=("baseline", "ft-a", "ft-b"), per_model=10,
              audio_dir=None):
    """Blind inventory: opaque item ids, model known only server-side."""
    out = []
    index = 0
    for model in models:
        for _ in range(per_model):
            item_id = f"item_{index:04d}"
            audio = (str(audio_dir / f"clip_{index:04d}.wav")
                     if audio_dir else f"clip_{index:04d}.wav")
            out.append(AnnotationItem(item_id=item_id, audio_path=audio,
                                      model_name=model))
            index += 1
    return out


@pytest.fixture
def store(tmp_path):
    return AnnotationStore(tmp_path / "store", items_for())


class TestGrid:
    def test_grid_has_exactly_nine_half_steps(self):
        assert RATING_GRID == (1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0)
        assert len(RATING_GRID) == 9

    def test_grid_closure(self):
        for value in RATING_GRID:
            doubled = value * 2
            assert doubled == int(doubled)
            assert 2 <= doubled <= 10

    def test_on_grid_accepted(self):
        assert validate_rating_value(3.5) == 3.5

    def test_off_grid_rejected(self):
        with pytest.raises(RatingError, match="grid"):
            validate_rating_value(3.2)

    def test_out_of_range_rejected(self):
        with pytest.raises(RatingError, match="out of range"):
            validate_rating_value(0.5)
        with pytest.raises(RatingError, match="out of range"):
            validate_rating_value(5.5)


class TestSessions:
    def test_session_covers_all_items(self, store):
        session = store.create_session("ann1", seed=3)
        assert len(session.item_ids) == 30
        assert sorted(session.item_ids) == sorted(store.items)

    def test_same_seed_same_permutation(self, store):
        a = store.create_session("ann1", seed=9)
        b = store.create_session("ann2", seed=9)
        assert a.item_ids == b.item_ids
        assert a.token != b.token

    def test_different_annotators_progress_independently(self, store):
        a = store.create_session("ann1", seed=1)
        b = store.create_session("ann2", seed=1)
        store.submit_rating(a.token, a.item_ids[0], 4.0)
        assert store.session_progress(a.token)["completed"] == 1
        assert store.session_progress(b.token)["completed"] == 0

    def test_cursor_is_first_unrated(self, store):
        session = store.create_session("ann1", seed=2)
        store.submit_rating(session.token, session.item_ids[0], 3.0)
        store.submit_rating(session.token, session.item_ids[2], 3.0)
        progress = store.session_progress(session.token)
        assert progress["cursor"] == 1
        assert progress["completed"] == 2

    def test_empty_inventory_rejected(self, tmp_path):
        with pytest.raises(RatingError, match="non-empty"):
            AnnotationStore(tmp_path / "s", [])


class TestRatings:
    def test_resubmission_latest_wins_history_retained(self, store):
        session = store.create_session("ann1", seed=0)
        item = session.item_ids[0]
        store.submit_rating(session.token, item, 3.0)
        store.submit_rating(session.token, item, 4.0)
        current = store.current[("ann1", item)]
        assert current.value == 4.0
        history = store.history("ann1", item)
        assert [r.value for r in history] == [3.0, 4.0]

    def test_unknown_item_rejected(self, store):
        session = store.create_session("ann1", seed=0)
        with pytest.raises(RatingError, match="not part of this session"):
            store.submit_rating(session.token, "ghost", 3.0)

    def test_unknown_session_rejected(self, store):
        with pytest.raises(RatingError, match="unknown session"):
            store.submit_rating("bogus", "any", 3.0)

    def test_durability_across_restart(self, tmp_path):
        root = tmp_path / "store"
        store = AnnotationStore(root, items_for())
        session = store.create_session("ann1", seed=0)
        store.submit_rating(session.token, session.item_ids[0], 4.5)
        reopened = AnnotationStore(root, items_for())
        assert reopened.current[("ann1", session.item_ids[0])].value == 4.5
        assert reopened.session_progress(session.token)["completed"] == 1

    def test_snapshot_plus_tail_recovery(self, tmp_path):
        root = tmp_path / "store"
        store = AnnotationStore(root, items_for(), snapshot_every=5)
        session = store.create_session("ann1", seed=0)
        for item in session.item_ids[:7]:
            store.submit_rating(session.token, item, 3.0)
        assert (root / "snapshot.json").exists()
        reopened = AnnotationStore(root, items_for(), snapshot_every=5)
        assert len(reopened.current) == 7


class TestMosSummary:
    def test_two_point_mean(self, store):
        session = store.create_session("ann1", seed=0)
        baseline_items = [i for i in session.item_ids
                          if store.items[i].model_name == "baseline"]
        store.submit_rating(session.token, baseline_items[0], 3.5)
        store.submit_rating(session.token, baseline_items[1], 4.0)
        summary = {row.model_name: row for row in store.mos_summary()}
        assert summary["baseline"].mos == pytest.approx(3.75)
        assert summary["baseline"].count == 2

    def test_singleton_std_zero(self, store):
        session = store.create_session("ann1", seed=0)
        item = next(i for i in session.item_ids
                    if store.items[i].model_name == "ft-a")
        store.submit_rating(session.token, item, 5.0)
        summary = {row.model_name: row for row in store.mos_summary()}
        assert summary["ft-a"].mos == 5.0
        assert summary["ft-a"].std == 0.0

    def test_no_data_model_flagged_absent(self, store):
        summary = {row.model_name: row for row in store.mos_summary()}
        assert summary["baseline"].mos is None
        assert summary["baseline"].count == 0
        assert summary["baseline"].std is None

    def test_summary_matches_independent_recomputation(self, tmp_path):
        store = AnnotationStore(tmp_path / "store", items_for())
        rng = Random(17)
        sessions = [store.create_session(f"ann{i}", seed=i)
                    for i in range(5)]
        for session in sessions:
            for item in session.item_ids:
                store.submit_rating(session.token, item,
                                    rng.choice(RATING_GRID))
        # independent recomputation straight off the raw rating log,
        # exact rational arithmetic
        latest = {}
        with open(tmp_path / "store" / "ratings.jsonl",
                  encoding="utf-8") as fh:
            for line in fh:
                event = json.loads(line)
                latest[(event["annotator_id"], event["item_id"])] = \
                    Fraction(event["value"])
        per_model: dict[str, list[Fraction]] = {}
        for (_, item_id), value in latest.items():
            model = store.items[item_id].model_name
            per_model.setdefault(model, []).append(value)
        for row in store.mos_summary():
            values = per_model[row.model_name]
            expected_mean = float(sum(values) / len(values))
            assert abs(row.mos - expected_mean) < 1e-12
            mean_frac = sum(values) / len(values)
            expected_var = sum((v - mean_frac) ** 2 for v in values) / len(values)
            assert abs(row.std - float(expected_var) ** 0.5) < 1e-9

    def test_export_csv_roundtrip(self, store):
        session = store.create_session("ann1", seed=0)
        item = next(i for i in session.item_ids
                    if store.items[i].model_name == "baseline")
        store.submit_rating(session.token, item, 4.5)
        csv_text = store.export_csv()
        lines = csv_text.strip().splitlines()
        assert lines[0] == "model_name,mos,count,std"
        baseline_row = next(l for l in lines if l.startswith("baseline"))
        assert baseline_row.split(",")[1] == "4.5"
        nodata_row = next(l for l in lines if l.startswith("ft-a"))
        assert nodata_row.split(",")[1] == ""  # absent, never 0.0


@pytest.fixture
def client(tmp_path):
    import numpy as np
    from dialectforge.audio import AudioBuffer, write_wav

    audio_dir = tmp_path / "audio"
    audio_dir.mkdir()
    items = items_for(per_model=2, audio_dir=audio_dir)
    t = np.arange(3200) / 16000
    for item in items:
        write_wav(item.audio_path,
                  AudioBuffer(0.4 * np.sin(2 * np.pi * 300 * t), 16000))
    store = AnnotationStore(tmp_path / "store", items)
    app = create_app(store, guideline="Listen first, then rate.")
    return TestClient(app)


class TestHttpApi:
    def create_session(self, client, annotator="ann1", seed=5):
        response = client.post("/sessions", json={"annotator_id": annotator,
                                                  "seed": seed})
        assert response.status_code == 201
        return response.json()

    def test_session_payload_is_blind(self, client):
        payload = self.create_session(client)
        text = json.dumps(payload)
        assert payload["item_count"] == 6
        for secret in ("baseline", "ft-a", "ft-b", "model", ".wav"):
            assert secret not in text

    def test_items_payload_is_blind(self, client):
        session = self.create_session(client)
        response = client.get(f"/sessions/{session['session_token']}/items")
        assert response.status_code == 200
        text = json.dumps(response.json())
        for secret in ("baseline", "ft-a", "ft-b", "model", ".wav"):
            assert secret not in text

    def test_rating_flow(self, client):
        session = self.create_session(client)
        token = session["session_token"]
        item = session["items"][0]["item_id"]
        ok = client.post(f"/sessions/{token}/ratings",
                         json={"item_id": item, "value": 3.5})
        assert ok.status_code == 200
        progress = client.get(f"/sessions/{token}/items").json()
        assert progress["completed"] == 1
        assert progress["cursor"] == 1

    def test_off_grid_rejected_http(self, client):
        session = self.create_session(client)
        token = session["session_token"]
        item = session["items"][0]["item_id"]
        bad = client.post(f"/sessions/{token}/ratings",
                          json={"item_id": item, "value": 3.2})
        assert bad.status_code == 400
        assert "grid" in bad.json()["detail"]

    def test_out_of_range_rejected_http(self, client):
        session = self.create_session(client)
        token = session["session_token"]
        item = session["items"][0]["item_id"]
        bad = client.post(f"/sessions/{token}/ratings",
                          json={"item_id": item, "value": 5.5})
        assert bad.status_code == 400
        assert "out of range" in bad.json()["detail"]

    def test_unknown_session_404(self, client):
        response = client.post("/sessions/nope/ratings",
                               json={"item_id": "x", "value": 3.0})
        assert response.status_code == 404

    def test_audio_streaming_with_range(self, client):
        session = self.create_session(client)
        item = session["items"][0]["item_id"]
        full = client.get(f"/audio/{item}")
        assert full.status_code == 200
        assert full.headers["accept-ranges"] == "bytes"
        partial = client.get(f"/audio/{item}",
                             headers={"Range": "bytes=0-99"})
        assert partial.status_code == 206
        assert len(partial.content) == 100
        assert partial.headers["content-range"] == \
            f"bytes 0-99/{len(full.content)}"
        assert full.content[:100] == partial.content

    def test_guideline_served_with_grid(self, client):
        response = client.get("/guideline")
        assert response.status_code == 200
        body = response.json()
        assert body["guideline"] == "Listen first, then rate."
        assert body["grid"] == list(RATING_GRID)

    def test_summary_and_export(self, client):
        session = self.create_session(client)
        token = session["session_token"]
        for entry in session["items"]:
            client.post(f"/sessions/{token}/ratings",
                        json={"item_id": entry["item_id"], "value": 4.0})
        summary = client.get("/summary").json()
        by_model = {row["model_name"]: row for row in summary["models"]}
        assert by_model["baseline"]["mos"] == 4.0
        export = client.get("/export.csv")
        assert export.status_code == 200
        assert export.text.startswith("model_name,mos,count,std")


class TestLoadItems:
    def test_load_items_file(self, tmp_path):
        path = tmp_path / "items.json"
        path.write_text(json.dumps([
            {"item_id": "a", "audio_path": "a.wav", "model_name": "m1"},
        ]), encoding="utf-8")
        items = load_items(path)
        assert items[0].model_name == "m1"

    def test_duplicate_item_id_rejected(self, tmp_path):
        path = tmp_path / "items.json"
        path.write_text(json.dumps([
            {"item_id": "a", "audio_path": "a.wav", "model_name": "m1"},
            {"item_id": "a", "audio_path": "b.wav", "model_name": "m2"},
        ]), encoding="utf-8")
        with pytest.raises(RatingError, match="duplicate"):
            load_items(path)


class TestBuildAnnotationItems:
    def test_opaque_ids_and_full_coverage(self):
        from dialectforge.annotation import build_annotation_items

        models = {
            "baseline": {f"seg{i}": f"b/{i}.wav" for i in range(10)},
            "ft": {f"seg{i}": f"f/{i}.wav" for i in range(10)},
        }
        items = build_annotation_items(models, seed=1)
        assert len(items) == 20
        for item in items:
            assert item.item_id.startswith("item_")
            assert "baseline" not in item.item_id
            assert "ft" not in item.item_id
        assert sum(1 for i in items if i.model_name == "baseline") == 10

    def test_seeded_shuffle_reproducible(self):
        from dialectforge.annotation import build_annotation_items

        models = {"m": {f"seg{i}": f"{i}.wav" for i in range(6)}}
        assert build_annotation_items(models, seed=2) == \
            build_annotation_items(models, seed=2)
