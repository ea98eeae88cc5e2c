"""Mining, the review store, relabel merging, and the oracle expert."""

import json

import numpy as np
import pytest

from sirenia.audio import save_annotations, Annotation
from sirenia.dataset import SessionRegistry
from sirenia.errors import ConsistencyError, FormatError, StateError
from sirenia.feedback import (
    Candidate,
    ReviewStore,
    apply_decisions,
    candidate_id,
    mine_candidates,
    oracle_confirm,
    parse_candidate_id,
)


def cand(sid="session000", start=2.5, score=0.8, **kw):
    return Candidate(
        id=candidate_id(sid, start), session_id=sid, window_start_s=start,
        score=score, **kw,
    )


class TestCandidateId:
    def test_format(self):
        assert candidate_id("session007", 12.5) == "session007@12.5"
        assert candidate_id("s", 0.0) == "s@0.0"

    def test_round_trip(self):
        sid, start = parse_candidate_id(candidate_id("session007", 12.5))
        assert (sid, start) == ("session007", 12.5)

    def test_at_sign_in_session_id(self):
        # rpartition keeps everything before the LAST @ as the session
        sid, start = parse_candidate_id(candidate_id("deploy@reef", 3.0))
        assert (sid, start) == ("deploy@reef", 3.0)

    def test_malformed(self):
        with pytest.raises(ConsistencyError):
            parse_candidate_id("no-separator")
        with pytest.raises(ConsistencyError):
            parse_candidate_id("session@notanumber")

    def test_candidate_validation(self):
        with pytest.raises(ValueError):
            cand(score=0.0)
        with pytest.raises(ValueError):
            cand(score=1.0)
        with pytest.raises(ValueError):
            cand(status="maybe")


class TestReviewStore:
    def test_empty_store(self, tmp_path):
        store = ReviewStore(tmp_path / "r")
        assert store.candidates() == []
        assert store.decisions == {}

    def test_queue_sorted_by_score_then_id(self, tmp_path):
        store = ReviewStore(tmp_path / "r")
        items = [
            cand(start=1.0, score=0.7),
            cand(start=2.0, score=0.9),
            cand(start=1.5, score=0.7),
        ]
        store.save_candidates(items)
        queue = store.candidates()
        assert [c.score for c in queue] == [0.9, 0.7, 0.7]
        assert [c.id for c in queue] == [
            "session000@2.0", "session000@1.0", "session000@1.5",
        ]

    def test_decision_overlay_and_replay(self, tmp_path):
        root = tmp_path / "r"
        store = ReviewStore(root)
        store.save_candidates([cand(start=1.0), cand(start=2.0)])
        updated = store.record_decision("session000@1.0", "confirmed", note="clear call")
        assert updated.status == "confirmed"
        assert updated.reviewer_note == "clear call"
        assert updated.decided_at is not None

        # a fresh process sees the same state by replaying the log
        again = ReviewStore(root)
        assert again.get("session000@1.0").status == "confirmed"
        assert again.get("session000@2.0").status == "pending"

    def test_redecision_refused(self, tmp_path):
        store = ReviewStore(tmp_path / "r")
        store.save_candidates([cand()])
        store.record_decision(cand().id, "rejected")
        with pytest.raises(StateError, match="already decided"):
            store.record_decision(cand().id, "confirmed")

    def test_unknown_candidate(self, tmp_path):
        store = ReviewStore(tmp_path / "r")
        store.save_candidates([cand()])
        with pytest.raises(ConsistencyError, match="unknown"):
            store.record_decision("session999@0.0", "confirmed")
        with pytest.raises(KeyError):
            store.get("session999@0.0")

    def test_bad_decision_value(self, tmp_path):
        store = ReviewStore(tmp_path / "r")
        store.save_candidates([cand()])
        with pytest.raises(ValueError):
            store.record_decision(cand().id, "confirm")

    def test_torn_tail_dropped(self, tmp_path):
        root = tmp_path / "r"
        store = ReviewStore(root)
        store.save_candidates([cand(start=1.0), cand(start=2.0)])
        store.record_decision("session000@1.0", "confirmed")
        with open(store.decisions_path, "a") as fh:
            fh.write('{"id": "session000@2.0", "decision": "conf')  # crash mid-append

        again = ReviewStore(root)
        assert again.get("session000@1.0").status == "confirmed"
        assert again.get("session000@2.0").status == "pending"
        # and the store still accepts the decision that was torn
        again.record_decision("session000@2.0", "rejected")

    def test_corrupt_interior_line_refused(self, tmp_path):
        root = tmp_path / "r"
        store = ReviewStore(root)
        store.save_candidates([cand(start=1.0)])
        store.decisions_path.write_text('not json\n{"id": "x", "decision": "confirmed"}\n')
        with pytest.raises(FormatError, match=":1"):
            ReviewStore(root)

    def test_duplicate_decision_in_log_refused(self, tmp_path):
        root = tmp_path / "r"
        store = ReviewStore(root)
        store.save_candidates([cand(start=1.0)])
        rec = json.dumps({"id": "session000@1.0", "decision": "confirmed"})
        store.decisions_path.write_text(rec + "\n" + rec + "\n")
        with pytest.raises(FormatError, match="duplicate"):
            ReviewStore(root)

    def test_snapshot_replace_keeps_decisions(self, tmp_path):
        root = tmp_path / "r"
        store = ReviewStore(root)
        store.save_candidates([cand(start=1.0)])
        store.record_decision("session000@1.0", "confirmed")
        store.save_candidates([cand(start=1.0), cand(start=3.0)])
        assert store.get("session000@1.0").status == "confirmed"

    def test_decided_at_preserved(self, tmp_path):
        store = ReviewStore(tmp_path / "r")
        store.save_candidates([cand()])
        store.record_decision(cand().id, "confirmed", decided_at="2026-01-02T03:04:05+00:00")
        again = ReviewStore(tmp_path / "r")
        assert again.get(cand().id).decided_at == "2026-01-02T03:04:05+00:00"


class TestMining:
    def test_threshold_zero_returns_all_negatives(self, manifest, trained):
        ckpt, _ = trained
        mined = mine_candidates(ckpt, manifest, threshold=0.0)
        # scores live in (0,1) so every negative window qualifies
        n_neg = sum(1 for s in manifest.samples if s.label == "negative")
        assert len(mined) == n_neg
        scores = [c.score for c in mined]
        assert scores == sorted(scores, reverse=True)

    def test_above_max_returns_empty(self, manifest, trained):
        ckpt, _ = trained
        assert mine_candidates(ckpt, manifest, threshold=1.0) == []

    def test_limit(self, manifest, trained):
        ckpt, _ = trained
        few = mine_candidates(ckpt, manifest, threshold=0.0, limit=5)
        all_ = mine_candidates(ckpt, manifest, threshold=0.0)
        assert few == all_[:5]

    def test_deterministic(self, manifest, trained):
        ckpt, _ = trained
        a = mine_candidates(ckpt, manifest, threshold=0.2)
        b = mine_candidates(ckpt, manifest, threshold=0.2)
        assert a == b

    def test_never_mines_positives(self, manifest, trained):
        ckpt, _ = trained
        mined = mine_candidates(ckpt, manifest, threshold=0.0)
        positive_keys = {s.key for s in manifest.samples if s.label == "positive"}
        assert all((c.session_id, c.window_start_s) not in positive_keys for c in mined)

    def test_store_excludes_decided(self, manifest, trained, tmp_path):
        ckpt, _ = trained
        mined = mine_candidates(ckpt, manifest, threshold=0.0)
        store = ReviewStore(tmp_path / "r")
        store.save_candidates(mined[:3])
        store.record_decision(mined[0].id, "rejected")
        remined = mine_candidates(ckpt, manifest, threshold=0.0, store=store)
        assert mined[0].id not in {c.id for c in remined}
        assert len(remined) == len(mined) - 1
        full = mine_candidates(
            ckpt, manifest, threshold=0.0, store=store, include_decided=True
        )
        assert len(full) == len(mined)


class TestOracleConfirm:
    def test_confirms_only_hidden_overlap(self, tmp_path):
        # session001 has one hidden call at [2.1, 2.5]: >= 50% of it lies in
        # windows starting 1.5 and 2.0; window 3.0 misses entirely
        save_annotations(tmp_path / "session001.hidden.csv", [Annotation(2.1, 2.5)])
        candidates = [
            cand(sid="session001", start=1.5, score=0.9),
            cand(sid="session001", start=2.0, score=0.8),
            cand(sid="session001", start=3.0, score=0.7),
            cand(sid="session002", start=2.0, score=0.6),  # no sidecar at all
        ]
        confirmed, rejected = oracle_confirm(candidates, tmp_path)
        assert {c.id for c in confirmed} == {"session001@1.5", "session001@2.0"}
        assert {c.id for c in rejected} == {"session001@3.0", "session002@2.0"}

    def test_partition(self, tmp_path):
        save_annotations(tmp_path / "session001.hidden.csv", [Annotation(0.2, 0.4)])
        candidates = [cand(sid="session001", start=0.5 * k, score=0.5) for k in range(4)]
        confirmed, rejected = oracle_confirm(candidates, tmp_path)
        assert len(confirmed) + len(rejected) == 4
        assert not ({c.id for c in confirmed} & {c.id for c in rejected})


def decided_store(tmp_path, manifest, confirm_keys, reject_keys=()):
    store = ReviewStore(tmp_path / "review")
    items = [
        cand(sid=sid, start=start, score=0.8)
        for sid, start in list(confirm_keys) + list(reject_keys)
    ]
    store.save_candidates(items)
    for sid, start in confirm_keys:
        store.record_decision(candidate_id(sid, start), "confirmed")
    for sid, start in reject_keys:
        store.record_decision(candidate_id(sid, start), "rejected")
    return store


class TestApplyDecisions:
    def test_no_decisions_bumps_revision_only(self, manifest, tmp_path):
        store = ReviewStore(tmp_path / "review")
        merged = apply_decisions(manifest, store)
        assert merged.revision == manifest.revision + 1
        assert [s.label for s in merged.samples] == [s.label for s in manifest.samples]
        assert merged.split == manifest.split
        assert merged.norm_stats == manifest.norm_stats

    def test_confirmations_flip_to_feedback_positive(self, manifest, tmp_path):
        negatives = [s for s in manifest.samples if s.label == "negative"][:3]
        store = decided_store(
            tmp_path, manifest,
            confirm_keys=[negatives[0].key, negatives[1].key],
            reject_keys=[negatives[2].key],
        )
        merged = apply_decisions(manifest, store)
        by_key = {s.key: s for s in merged.samples}
        for s in negatives[:2]:
            assert by_key[s.key].label == "positive"
            assert by_key[s.key].origin == "feedback"
        assert by_key[negatives[2].key].label == "negative"
        n_pos_before = manifest.counts()[0]
        assert merged.counts()[0] == n_pos_before + 2
        # the source manifest is untouched
        assert manifest.counts()[0] == n_pos_before

    def test_unknown_key_refused(self, manifest, tmp_path):
        store = ReviewStore(tmp_path / "review")
        store.save_candidates([cand(sid="ghost", start=0.5)])
        store.record_decision("ghost@0.5", "confirmed")
        with pytest.raises(ConsistencyError, match="ghost"):
            apply_decisions(manifest, store)

    def test_idempotent_on_labels(self, manifest, tmp_path):
        negatives = [s for s in manifest.samples if s.label == "negative"][:2]
        store = decided_store(tmp_path, manifest, confirm_keys=[s.key for s in negatives])
        once = apply_decisions(manifest, store)
        twice = apply_decisions(once, store)
        assert [s.label for s in twice.samples] == [s.label for s in once.samples]
        assert [s.origin for s in twice.samples] == [s.origin for s in once.samples]
        assert twice.revision == once.revision + 1

    def test_confirming_existing_positive_is_noop(self, manifest, tmp_path):
        positive = next(s for s in manifest.samples if s.label == "positive")
        store = decided_store(tmp_path, manifest, confirm_keys=[positive.key])
        merged = apply_decisions(manifest, store)
        merged_sample = next(s for s in merged.samples if s.key == positive.key)
        assert merged_sample.label == "positive"
        assert merged_sample.origin == "expert"

    def test_positives_monotone(self, manifest, tmp_path):
        negatives = [s for s in manifest.samples if s.label == "negative"][:4]
        store = decided_store(
            tmp_path, manifest,
            confirm_keys=[s.key for s in negatives[:2]],
            reject_keys=[s.key for s in negatives[2:]],
        )
        merged = apply_decisions(manifest, store)
        assert merged.counts()[0] >= manifest.counts()[0]
        assert merged.counts()[0] + merged.counts()[1] == len(manifest.samples)

    def test_split_preserved(self, manifest, tmp_path):
        negatives = [s for s in manifest.samples if s.label == "negative"][:2]
        store = decided_store(tmp_path, manifest, confirm_keys=[s.key for s in negatives])
        merged = apply_decisions(manifest, store)
        assert merged.split == manifest.split

    def test_replay_equivalence(self, manifest, tmp_path):
        # applying a replayed store equals applying the original
        negatives = [s for s in manifest.samples if s.label == "negative"][:3]
        store = decided_store(tmp_path, manifest, confirm_keys=[s.key for s in negatives])
        merged_live = apply_decisions(manifest, store)
        reloaded = ReviewStore(tmp_path / "review")
        merged_replayed = apply_decisions(manifest, reloaded)
        assert [s.label for s in merged_live.samples] == [
            s.label for s in merged_replayed.samples
        ]


class TestExperiment:
    def test_nothing_withheld_changes_nothing(self, tmp_path):
        # withhold 0: the oracle confirms nothing, the merged manifest is
        # label-identical, and deterministic retraining reproduces the model
        from sirenia.feedback import feedback_experiment
        from sirenia.synth import SynthConfig
        from sirenia.training import TrainRecipe

        from conftest import TINY_MODEL

        cfg = SynthConfig(session_length_s=10.5, calls_per_session_range=(2, 3))
        recipe = TrainRecipe(epochs=1, batch_size=16, base_lr=1e-3, seed=0)
        report = feedback_experiment(
            cfg, recipe, config=TINY_MODEL, n_sessions=2, seeds=(0,),
            work_dir=tmp_path,
        )
        run = report["runs"][0]
        assert run["n_hidden_windows"] == 0
        assert run["n_confirmed"] == 0
        assert run["recovered_fraction"] == 0.0
        assert run["f1_after"] == run["f1_before"]
        assert report["f1_before_mean"] == run["f1_before"]

    def test_retrain_recipe_trains_post_review_model(self, tmp_path):
        # before-model from recipe, after-model from retrain_recipe: both
        # must match models trained directly on the persisted corpus
        from sirenia import dataset as ds
        from sirenia import training as tr
        from sirenia.feedback import feedback_experiment
        from sirenia.synth import SynthConfig

        from conftest import TINY_MODEL

        cfg = SynthConfig(session_length_s=10.5, calls_per_session_range=(2, 3))
        screen = tr.TrainRecipe(epochs=1, batch_size=16, base_lr=1e-3, seed=0)
        retrain = tr.TrainRecipe(epochs=2, batch_size=16, base_lr=1e-3, seed=0)
        report = feedback_experiment(
            cfg, screen, config=TINY_MODEL, n_sessions=2, seeds=(0,),
            retrain_recipe=retrain, work_dir=tmp_path,
        )
        run = report["runs"][0]

        registry = SessionRegistry(tmp_path / "seed0" / "corpus")
        manifest = ds.split_train_test(
            ds.build_manifest(registry), train_fraction=0.7, seed=0,
            registry=registry,
        )
        ckpt_screen, _ = tr.train(manifest, TINY_MODEL, screen, registry=registry)
        ckpt_retrain, _ = tr.train(manifest, TINY_MODEL, retrain, registry=registry)
        assert run["f1_before"] == tr.evaluate(ckpt_screen, manifest).f1
        assert run["f1_after"] == tr.evaluate(ckpt_retrain, manifest).f1
