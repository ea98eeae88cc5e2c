"""False-positive mining, review persistence, and relabel merging.

The loop: score every negatively-labelled window, queue the high scorers
for expert review, persist confirm/reject decisions in an append-only
log, and fold confirmations back into the manifest as new positives.
`feedback_experiment` runs the whole cycle against synthetic sessions
whose withheld annotations act as the ground truth an expert would know.
"""

from __future__ import annotations

import json
import tempfile
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import synth as syn
from . import training as tr
from .dataset import WINDOW_S, DatasetManifest, LABEL_RULES, SessionRegistry
from .errors import ConsistencyError, FormatError, StateError
from .model import Checkpoint, ModelConfig

DECISIONS = ("confirmed", "rejected")


@dataclass(frozen=True)
class Candidate:
    id: str
    session_id: str
    window_start_s: float
    score: float
    status: str = "pending"  # pending | confirmed | rejected
    decided_at: str | None = None
    reviewer_note: str | None = None

    def __post_init__(self):
        if self.status not in ("pending", "confirmed", "rejected"):
            raise ValueError(f"bad status {self.status!r}")
        if not 0.0 < self.score < 1.0:
            raise ValueError(f"score must be in (0,1), got {self.score}")

    def to_doc(self) -> dict:
        doc = {
            "id": self.id,
            "session_id": self.session_id,
            "window_start_s": self.window_start_s,
            "score": self.score,
            "status": self.status,
        }
        if self.decided_at is not None:
            doc["decided_at"] = self.decided_at
        if self.reviewer_note is not None:
            doc["reviewer_note"] = self.reviewer_note
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "Candidate":
        return cls(
            id=doc["id"],
            session_id=doc["session_id"],
            window_start_s=doc["window_start_s"],
            score=doc["score"],
            status=doc.get("status", "pending"),
            decided_at=doc.get("decided_at"),
            reviewer_note=doc.get("reviewer_note"),
        )


def candidate_id(session_id: str, window_start_s: float) -> str:
    return f"{session_id}@{window_start_s:.1f}"


def parse_candidate_id(cid: str) -> tuple:
    """Back to (session_id, window_start_s); inverse of candidate_id."""
    sid, _, start = cid.rpartition("@")
    if not sid:
        raise ConsistencyError(f"malformed candidate id {cid!r}")
    try:
        return sid, float(start)
    except ValueError:
        raise ConsistencyError(f"malformed candidate id {cid!r}") from None


class ReviewStore:
    """Candidate queue plus an append-only decision log under one directory.

    The log is the source of truth: the in-memory status view is rebuilt
    by replaying it, and a torn final line (crash mid-append) is dropped.
    Appends are serialized by a lock; decisions are immutable once made.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._candidates: dict[str, Candidate] = {}
        self._decisions: dict[str, dict] = {}
        self._load_candidates()
        self._replay()

    @property
    def candidates_path(self) -> Path:
        return self.root / "candidates.json"

    @property
    def decisions_path(self) -> Path:
        return self.root / "decisions.ndjson"

    def _load_candidates(self) -> None:
        if not self.candidates_path.exists():
            return
        try:
            docs = json.loads(self.candidates_path.read_text(encoding="utf-8"))
            self._candidates = {d["id"]: Candidate.from_doc(d) for d in docs}
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise FormatError(f"{self.candidates_path}: unreadable queue ({e})") from None

    def _replay(self) -> None:
        if not self.decisions_path.exists():
            return
        lines = self.decisions_path.read_text(encoding="utf-8").splitlines()
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                if lineno == len(lines):
                    break  # torn tail from an interrupted append
                raise FormatError(f"{self.decisions_path}:{lineno}: bad record") from None
            cid = rec.get("id")
            if cid is None or rec.get("decision") not in DECISIONS:
                raise FormatError(f"{self.decisions_path}:{lineno}: bad record")
            if cid in self._decisions:
                raise FormatError(
                    f"{self.decisions_path}:{lineno}: duplicate decision for {cid}"
                )
            self._decisions[cid] = rec

    def save_candidates(self, candidates) -> None:
        """Replace the queue snapshot (does not touch the decision log)."""
        docs = [c.to_doc() for c in candidates]
        tmp = self.candidates_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(docs, indent=2) + "\n", encoding="utf-8")
        tmp.replace(self.candidates_path)
        self._candidates = {c.id: c for c in candidates}

    def candidates(self) -> list:
        """Queue with decision statuses overlaid, score descending."""
        out = []
        for c in self._candidates.values():
            rec = self._decisions.get(c.id)
            if rec is not None:
                c = replace(
                    c, status=rec["decision"], decided_at=rec.get("decided_at"),
                    reviewer_note=rec.get("note"),
                )
            out.append(c)
        out.sort(key=lambda c: (-c.score, c.id))
        return out

    def get(self, cid: str) -> Candidate:
        if cid not in self._candidates:
            raise KeyError(cid)
        c = self._candidates[cid]
        rec = self._decisions.get(cid)
        if rec is not None:
            c = replace(
                c, status=rec["decision"], decided_at=rec.get("decided_at"),
                reviewer_note=rec.get("note"),
            )
        return c

    @property
    def decisions(self) -> dict:
        return dict(self._decisions)

    def record_decision(
        self, cid: str, decision: str, note: str | None = None, decided_at: str | None = None
    ) -> Candidate:
        """Append one decision; unknown id or re-decision are refused."""
        if decision not in DECISIONS:
            raise ValueError(f"decision must be one of {DECISIONS}, got {decision!r}")
        with self._lock:
            if cid not in self._candidates:
                raise ConsistencyError(f"unknown candidate {cid!r}")
            if cid in self._decisions:
                raise StateError(f"candidate {cid!r} already decided")
            rec = {
                "id": cid,
                "decision": decision,
                "decided_at": decided_at or datetime.now(timezone.utc).isoformat(),
            }
            if note is not None:
                rec["note"] = note
            with open(self.decisions_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec) + "\n")
                fh.flush()
            self._decisions[cid] = rec
        return self.get(cid)


def mine_candidates(
    ckpt: Checkpoint,
    manifest: DatasetManifest,
    threshold: float = 0.5,
    limit: int | None = None,
    store: ReviewStore | None = None,
    include_decided: bool = False,
) -> list:
    """Negatively-labelled windows scoring >= threshold, best first.

    Ties break on id so the order is reproducible. When a store is given,
    already-decided windows stay out of the queue unless asked for.
    """
    negatives = [s for s in manifest.samples if s.label == "negative"]
    if store is not None and not include_decided:
        decided = set(store.decisions)
        negatives = [s for s in negatives if candidate_id(*s.key) not in decided]
    if not negatives:
        return []
    scores = tr.score_samples(ckpt, manifest, negatives)
    picked = [
        Candidate(
            id=candidate_id(s.session_id, s.window_start_s),
            session_id=s.session_id,
            window_start_s=s.window_start_s,
            score=float(score),
        )
        for s, score in zip(negatives, scores)
        if score >= threshold
    ]
    picked.sort(key=lambda c: (-c.score, c.id))
    return picked[:limit] if limit is not None else picked


def apply_decisions(manifest: DatasetManifest, store: ReviewStore) -> DatasetManifest:
    """Fold confirmations into a new manifest revision.

    Confirmed windows flip to positive with origin=feedback; rejections
    and unreviewed windows are untouched; split assignments carry over.
    Norm stats are label-independent (same train windows, same audio), so
    they carry over too. Applying the same store twice is a no-op the
    second time apart from the revision stamp.
    """
    by_key = {s.key: i for i, s in enumerate(manifest.samples)}
    samples = list(manifest.samples)
    for cid in sorted(store.decisions):
        rec = store.decisions[cid]
        key = parse_candidate_id(cid)
        if key not in by_key:
            raise ConsistencyError(f"decision {cid!r} references no manifest sample")
        if rec["decision"] != "confirmed":
            continue
        i = by_key[key]
        if samples[i].label == "positive":
            continue
        samples[i] = replace(samples[i], label="positive", origin="feedback")
    return replace(
        manifest,
        samples=samples,
        split=dict(manifest.split),
        warnings=list(manifest.warnings),
        revision=manifest.revision + 1,
    )


def _truth_labels(samples, registry_root, rule: str) -> np.ndarray:
    """1/0 labels under visible+hidden annotations together."""
    predicate = LABEL_RULES[rule]
    hidden_cache: dict[str, list] = {}
    out = np.zeros(len(samples))
    for i, s in enumerate(samples):
        if s.label == "positive":
            out[i] = 1.0
            continue
        if s.session_id not in hidden_cache:
            hidden_cache[s.session_id] = syn.load_hidden_annotations(
                registry_root, s.session_id
            )
        w0 = s.window_start_s
        if any(predicate(a, w0, w0 + WINDOW_S) for a in hidden_cache[s.session_id]):
            out[i] = 1.0
    return out


def oracle_confirm(candidates, registry_root, rule: str = "call") -> tuple:
    """Split candidates into (confirmed, rejected) like an expert with the
    withheld annotations in hand: confirm iff the window is positive under
    the same overlap rule against a hidden annotation."""
    predicate = LABEL_RULES[rule]
    hidden_cache: dict[str, list] = {}
    confirmed, rejected = [], []
    for c in candidates:
        if c.session_id not in hidden_cache:
            hidden_cache[c.session_id] = syn.load_hidden_annotations(
                registry_root, c.session_id
            )
        w0 = c.window_start_s
        hit = any(predicate(a, w0, w0 + WINDOW_S) for a in hidden_cache[c.session_id])
        (confirmed if hit else rejected).append(c)
    return confirmed, rejected


def feedback_experiment(
    cfg: syn.SynthConfig,
    recipe: tr.TrainRecipe,
    config: ModelConfig | None = None,
    n_sessions: int = 20,
    seeds=(0,),
    mine_threshold: float = 0.3,
    retrain_recipe: tr.TrainRecipe | None = None,
    work_dir=None,
) -> dict:
    """Full mine -> oracle-confirm -> retrain cycle on synthetic sessions.

    Per seed: generate a corpus with withheld annotations, train on the
    visible labels, mine candidates, let the oracle expert confirm the
    true positives, retrain on the merged manifest, and score both models
    on the held-out split against the full (visible+hidden) truth.

    The default mining threshold sits below 0.5 on purpose: look-alike
    calls whose twins are labelled negative equilibrate below the decision
    boundary, and the oracle discards anything mined in error.

    `recipe` trains the screening model that mines; `retrain_recipe`
    (default: same) trains the post-review model. Keeping the screening
    pass short matters when labels contradict: given enough epochs the
    model memorizes mislabelled twins as the negatives they are marked,
    pushing their scores under any usable mining threshold, whereas the
    post-review model benefits from the full budget.
    """
    config = config or ModelConfig()
    retrain_recipe = retrain_recipe or recipe
    runs = []
    for seed in seeds:
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(work_dir) / f"seed{seed}" if work_dir else Path(tmp)
            corpus = root / "corpus"
            seed_recipe = replace(recipe, seed=seed)
            syn.write_registry(corpus, cfg, n_sessions=n_sessions, seed=seed)
            registry = SessionRegistry(corpus)
            manifest = ds.split_train_test(
                ds.build_manifest(registry), train_fraction=0.7, seed=seed,
                registry=registry,
            )
            ckpt_before, _ = tr.train(manifest, config, seed_recipe, registry=registry)

            test = manifest.split_samples("test")
            truth_test = _truth_labels(test, corpus, manifest.label_rule)
            scores_before = tr.score_windows(
                ckpt_before, registry, test, manifest.norm_stats
            )
            f1_before = tr.metrics_at(scores_before, truth_test, 0.5).f1

            mined = mine_candidates(ckpt_before, manifest, threshold=mine_threshold)
            confirmed, rejected = oracle_confirm(mined, corpus, manifest.label_rule)
            store = ReviewStore(root / "review")
            store.save_candidates(mined)
            for c in confirmed:
                store.record_decision(c.id, "confirmed", note="oracle")
            for c in rejected:
                store.record_decision(c.id, "rejected", note="oracle")

            merged = apply_decisions(manifest, store)
            seed_retrain = replace(retrain_recipe, seed=seed)
            ckpt_after, _ = tr.train(merged, config, seed_retrain, registry=registry)
            scores_after = tr.score_windows(
                ckpt_after, registry, test, merged.norm_stats
            )
            f1_after = tr.metrics_at(scores_after, truth_test, 0.5).f1

            visible_labels = np.array(
                [1.0 if s.label == "positive" else 0.0 for s in manifest.samples]
            )
            truth_all = _truth_labels(manifest.samples, corpus, manifest.label_rule)
            n_hidden = int(np.sum((truth_all == 1.0) & (visible_labels == 0.0)))
            recovered = len(confirmed) / n_hidden if n_hidden else 0.0

            runs.append(
                {
                    "seed": seed,
                    "f1_before": f1_before,
                    "f1_after": f1_after,
                    "n_mined": len(mined),
                    "n_confirmed": len(confirmed),
                    "n_hidden_windows": n_hidden,
                    "recovered_fraction": recovered,
                }
            )

    def mean(key):
        return float(np.mean([r[key] for r in runs]))

    return {
        "runs": runs,
        "f1_before_mean": mean("f1_before"),
        "f1_after_mean": mean("f1_after"),
        "recovered_fraction_mean": mean("recovered_fraction"),
    }
