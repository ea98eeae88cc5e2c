"""Review service HTTP contract.

One module-scoped app instance backs most tests; candidate indexes are
partitioned between tests that record decisions so they never collide.
"""

import concurrent.futures
import shutil

import numpy as np
import pytest
from fastapi.testclient import TestClient

from sirenia.dataset import save_manifest
from sirenia.feedback import ReviewStore, mine_candidates
from sirenia.features import NormStats, log_mel, normalize
from sirenia.model import save_checkpoint
from sirenia.server import ServerConfig, create_app


@pytest.fixture(scope="module")
def env(tmp_path_factory, corpus_dir, manifest, checkpoint, registry):
    root = tmp_path_factory.mktemp("server")
    registry_root = root / "registry"
    shutil.copytree(corpus_dir, registry_root)
    manifest_path = root / "manifest.json"
    checkpoint_path = root / "model.ckpt"
    save_manifest(manifest_path, manifest)
    save_checkpoint(checkpoint_path, checkpoint)

    mined = mine_candidates(checkpoint, manifest, threshold=0.0)
    assert len(mined) >= 12, "corpus too small for the server tests"
    store = ReviewStore(root / "review")
    store.save_candidates(mined)

    return {
        "config": ServerConfig(
            manifest_path=str(manifest_path),
            checkpoint_path=str(checkpoint_path),
            registry_root=str(registry_root),
            store_path=str(root / "review"),
        ),
        "mined": mined,
        "manifest": manifest,
    }


@pytest.fixture(scope="module")
def client(env):
    return TestClient(create_app(env["config"]), raise_server_exceptions=False)


class TestListCandidates:
    def test_score_order_and_paging(self, client, env):
        first = client.get("/api/candidates", params={"limit": 5}).json()
        assert first["total"] == len(env["mined"])
        assert first["offset"] == 0 and first["limit"] == 5
        assert len(first["items"]) == 5
        scores = [c["score"] for c in first["items"]]
        assert scores == sorted(scores, reverse=True)

        second = client.get("/api/candidates", params={"limit": 5, "offset": 5}).json()
        assert [c["id"] for c in second["items"]] == [
            c.id for c in env["mined"][5:10]
        ]

    def test_offset_past_end(self, client, env):
        resp = client.get("/api/candidates", params={"offset": 10_000}).json()
        assert resp["items"] == []
        assert resp["total"] == len(env["mined"])

    def test_status_filter(self, client):
        resp = client.get("/api/candidates", params={"status": "pending"})
        assert resp.status_code == 200
        assert all(c["status"] == "pending" for c in resp.json()["items"])

    def test_bad_status_400(self, client):
        resp = client.get("/api/candidates", params={"status": "undecided"})
        assert resp.status_code == 400
        body = resp.json()
        assert body["error"] == "bad_request"
        assert "undecided" in body["detail"]

    def test_bad_paging_400(self, client):
        assert client.get("/api/candidates", params={"offset": -1}).status_code == 400
        assert client.get("/api/candidates", params={"limit": 0}).status_code == 400

    def test_non_numeric_paging_400(self, client):
        resp = client.get("/api/candidates", params={"limit": "many"})
        assert resp.status_code == 400
        assert resp.json()["error"] == "bad_request"


class TestSpectrogram:
    def test_matches_offline_pipeline(self, client, env, registry, checkpoint):
        cand = env["mined"][3]
        resp = client.get(f"/api/candidates/{cand.id}/spectrogram")
        assert resp.status_code == 200
        body = resp.json()
        assert body["id"] == cand.id
        assert body["shape"] == [64, 128]
        assert len(body["mel_centers_hz"]) == 64
        assert body["seconds_per_frame"] == pytest.approx(375 / 48000)

        from sirenia.dataset import LabeledSample

        sample = LabeledSample(cand.session_id, cand.window_start_s, "negative")
        stats = NormStats(mean=checkpoint.norm_stats[0], std=checkpoint.norm_stats[1])
        offline = normalize(log_mel(registry.window_clip(sample)), stats)
        np.testing.assert_array_equal(np.array(body["values"]), offline.values)

    def test_unknown_candidate_404(self, client):
        resp = client.get("/api/candidates/ghost@9.5/spectrogram")
        assert resp.status_code == 404
        assert resp.json()["error"] == "unknown_candidate"


class TestAudio:
    def test_wav_payload(self, client, env):
        cand = env["mined"][3]
        resp = client.get(f"/api/candidates/{cand.id}/audio")
        assert resp.status_code == 200
        assert resp.headers["content-type"].startswith("audio/wav")
        data = resp.content
        assert data[:4] == b"RIFF" and data[8:12] == b"WAVE"
        # 16-bit mono at 48 kHz, one second: 96000 payload bytes
        assert len(data) == 44 + 2 * 48000

    def test_unknown_candidate_404(self, client):
        assert client.get("/api/candidates/ghost@9.5/audio").status_code == 404

    def test_deleted_source_410(self, env, tmp_path):
        # fresh app over a registry whose first candidate's audio is gone
        root = tmp_path / "gone"
        shutil.copytree(env["config"].registry_root, root)
        cand = env["mined"][4]
        (root / f"{cand.session_id}.wav").unlink()
        config = ServerConfig(
            manifest_path=env["config"].manifest_path,
            checkpoint_path=env["config"].checkpoint_path,
            registry_root=str(root),
            store_path=env["config"].store_path,
        )
        fresh = TestClient(create_app(config), raise_server_exceptions=False)
        resp = fresh.get(f"/api/candidates/{cand.id}/audio")
        assert resp.status_code == 410
        body = resp.json()
        assert body["error"] == "source_missing"
        assert cand.session_id in body["detail"]


class TestDecision:
    def test_confirm_then_conflict(self, client, env):
        cid = env["mined"][0].id
        resp = client.post(f"/api/candidates/{cid}/decision", json={"decision": "confirm"})
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "confirmed"
        assert body["decided_at"]

        again = client.post(f"/api/candidates/{cid}/decision", json={"decision": "reject"})
        assert again.status_code == 409
        assert again.json()["error"] == "already_decided"

        # the queue reflects the decision
        listed = client.get("/api/candidates", params={"status": "confirmed"}).json()
        assert cid in [c["id"] for c in listed["items"]]

    def test_reject_with_note(self, client, env):
        cid = env["mined"][1].id
        resp = client.post(
            f"/api/candidates/{cid}/decision",
            json={"decision": "reject", "note": "vessel noise"},
        )
        assert resp.status_code == 200
        assert resp.json()["reviewer_note"] == "vessel noise"

    def test_invalid_decision_400(self, client, env):
        cid = env["mined"][5].id
        resp = client.post(f"/api/candidates/{cid}/decision", json={"decision": "maybe"})
        assert resp.status_code == 400
        resp = client.post(f"/api/candidates/{cid}/decision", json={})
        assert resp.status_code == 400
        resp = client.post(
            f"/api/candidates/{cid}/decision", json={"decision": "confirm", "note": 5}
        )
        assert resp.status_code == 400

    def test_unknown_candidate_404_before_409(self, client):
        resp = client.post(
            "/api/candidates/ghost@1.5/decision", json={"decision": "confirm"}
        )
        assert resp.status_code == 404

    def test_concurrent_double_decision(self, client, env):
        cid = env["mined"][2].id

        def post():
            return client.post(
                f"/api/candidates/{cid}/decision", json={"decision": "confirm"}
            ).status_code

        with concurrent.futures.ThreadPoolExecutor(max_workers=2) as pool:
            codes = sorted(pool.map(lambda _: post(), range(2)))
        assert codes == [200, 409]

    def test_restart_survives(self, env):
        # decisions recorded above must be visible to a brand-new process
        reopened = TestClient(create_app(env["config"]), raise_server_exceptions=False)
        cid = env["mined"][0].id
        listed = reopened.get("/api/candidates", params={"status": "confirmed"}).json()
        assert cid in [c["id"] for c in listed["items"]]


class TestStats:
    def test_projection_matches_store(self, client, env):
        stats = client.get("/api/stats").json()
        store = ReviewStore(env["config"].store_path)
        snapshot = store.candidates()
        by_status = {"pending": 0, "confirmed": 0, "rejected": 0}
        for c in snapshot:
            by_status[c.status] += 1
        assert {k: stats[k] for k in by_status} == by_status

        manifest = env["manifest"]
        confirmed_keys = {
            (c.session_id, c.window_start_s)
            for c in snapshot
            if c.status == "confirmed"
        }
        n_pos = sum(
            1 for s in manifest.samples
            if s.label == "positive" or s.key in confirmed_keys
        )
        assert stats["n_pos"] == n_pos
        assert stats["n_neg"] == len(manifest.samples) - n_pos
        assert stats["positive_rate"] == pytest.approx(n_pos / len(manifest.samples))
        assert stats["train_n_pos"] + stats["train_n_neg"] == sum(
            1 for v in manifest.split.values() if v == "train"
        )


class TestStartup:
    def test_missing_manifest_refused(self, env, tmp_path):
        config = ServerConfig(
            manifest_path=str(tmp_path / "absent.json"),
            checkpoint_path=env["config"].checkpoint_path,
            registry_root=env["config"].registry_root,
            store_path=str(tmp_path / "store"),
        )
        with pytest.raises(FileNotFoundError, match="manifest"):
            create_app(config)

    def test_missing_checkpoint_refused(self, env, tmp_path):
        config = ServerConfig(
            manifest_path=env["config"].manifest_path,
            checkpoint_path=str(tmp_path / "absent.ckpt"),
            registry_root=env["config"].registry_root,
            store_path=str(tmp_path / "store"),
        )
        with pytest.raises(FileNotFoundError, match="checkpoint"):
            create_app(config)
