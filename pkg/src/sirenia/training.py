"""Training loop and evaluation artifacts.

The recipe follows the fixed schedule: weighted binary cross-entropy,
Adam with decoupled weight decay, learning rate halved every 5 epochs,
fresh additive noise drawn per sample per epoch on the train split only.
Evaluation always scores clean windows.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import dataset as ds
from . import model as mdl
from .dataset import DatasetManifest, SessionRegistry
from .errors import StateError
from .model import AdamState, Checkpoint, ModelConfig

EVAL_BATCH = 128


@dataclass(frozen=True)
class TrainRecipe:
    epochs: int = 25
    batch_size: int = 32
    base_lr: float = 1e-3  # full-size pretrained models want far less (1e-6)
    weight_decay: float = 5e-7
    snr_db: float = 10.0
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    threshold: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int, threshold: float) -> "Metrics":
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        return cls(tp=tp, fp=fp, fn=fn, tn=tn,
                   precision=precision, recall=recall, f1=f1, threshold=threshold)


@dataclass(frozen=True)
class PRCurve:
    points: tuple  # of (threshold, precision, recall), thresholds descending
    average_precision: float


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    test_metrics: Metrics | None


def _labels(samples) -> np.ndarray:
    return np.array([1.0 if s.label == "positive" else 0.0 for s in samples])


def _require_ready(manifest: DatasetManifest) -> None:
    if not manifest.split:
        raise StateError("manifest has no train/test split")
    if manifest.norm_stats is None:
        raise StateError("manifest has no normalization stats")


def score_windows(
    ckpt: Checkpoint,
    registry: SessionRegistry,
    samples: list,
    stats,
    batch: int = EVAL_BATCH,
) -> np.ndarray:
    """Clean (noise-free) scores for a list of samples, batched."""
    out = np.empty(len(samples))
    for lo in range(0, len(samples), batch):
        chunk = samples[lo : lo + batch]
        x = np.stack([ds.sample_feature(registry, s, stats=stats).values for s in chunk])
        out[lo : lo + len(chunk)] = ckpt.score_batch(x)
    return out


def score_samples(ckpt: Checkpoint, manifest: DatasetManifest, samples: list) -> np.ndarray:
    """Scores for arbitrary manifest samples using the checkpoint's own stats."""
    registry = SessionRegistry(manifest.registry_root)
    stats = _stats_for(ckpt, manifest)
    return score_windows(ckpt, registry, samples, stats)


def _stats_for(ckpt: Checkpoint, manifest: DatasetManifest):
    """The model scores with the stats it was trained under; the manifest's
    stats are a fallback for checkpoints that predate the field."""
    from .features import NormStats

    if ckpt.norm_stats is not None:
        return NormStats(mean=ckpt.norm_stats[0], std=ckpt.norm_stats[1])
    if manifest.norm_stats is None:
        raise StateError("neither checkpoint nor manifest carries norm stats")
    return manifest.norm_stats


def train(
    manifest: DatasetManifest,
    config: ModelConfig | None = None,
    recipe: TrainRecipe | None = None,
    registry: SessionRegistry | None = None,
) -> tuple:
    """Run the full recipe; returns (Checkpoint, list of EpochRecord)."""
    config = config or ModelConfig()
    recipe = recipe or TrainRecipe()
    _require_ready(manifest)
    if registry is None:
        registry = SessionRegistry(manifest.registry_root)
    train_samples = manifest.split_samples("train")
    test_samples = manifest.split_samples("test")
    if not train_samples:
        raise StateError("train split is empty")
    w_pos, w_neg = ds.class_weights(manifest)
    stats = manifest.norm_stats

    params = mdl.init_params(config, seed=recipe.seed)
    opt = AdamState.zeros_like(params)
    labels_all = _labels(train_samples)

    history = []
    for epoch in range(recipe.epochs):
        lr = mdl.lr_at_epoch(recipe.base_lr, epoch)
        shuffle = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((recipe.seed, epoch)))
        )
        order = shuffle.permutation(len(train_samples))

        total_loss, total_n = 0.0, 0
        for lo in range(0, len(order), recipe.batch_size):
            idx = order[lo : lo + recipe.batch_size]
            feats = []
            for i in idx:
                rng = ds.noise_rng(recipe.seed, epoch, int(i))
                feats.append(
                    ds.sample_feature(
                        registry, train_samples[i], stats=stats,
                        noise_rng=rng, snr_db=recipe.snr_db,
                    ).values
                )
            x = np.stack(feats)
            y = labels_all[idx]
            scores, cache = mdl.forward_batch(params, x, config, want_cache=True)
            batch_loss, dlogits = mdl.loss_batch(scores, y, w_pos, w_neg)
            grads = mdl.backward_batch(params, x, dlogits, config, cache)
            params, opt = mdl.adam_step(
                params, grads, opt, lr, weight_decay=recipe.weight_decay
            )
            total_loss += batch_loss * len(idx)
            total_n += len(idx)

        ckpt = Checkpoint(
            config=config, params=params, opt_state=opt, epoch=epoch + 1,
            norm_stats=(stats.mean, stats.std),
        )
        test_metrics = None
        if test_samples:
            test_scores = score_windows(ckpt, registry, test_samples, stats)
            test_metrics = metrics_at(test_scores, _labels(test_samples), threshold=0.5)
        history.append(
            EpochRecord(epoch=epoch, lr=lr, train_loss=total_loss / total_n,
                        test_metrics=test_metrics)
        )

    return ckpt, history


def metrics_at(scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> Metrics:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pred = scores >= threshold
    pos = labels == 1
    return Metrics.from_counts(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
        tn=int(np.sum(~pred & ~pos)),
        threshold=threshold,
    )


def evaluate(
    ckpt: Checkpoint,
    manifest: DatasetManifest,
    split: str = "test",
    threshold: float = 0.5,
) -> Metrics:
    """Confusion metrics over a split; scoring is always noise-free."""
    samples = manifest.split_samples(split) if manifest.split else list(manifest.samples)
    if not samples:
        raise ValueError(f"split {split!r} holds no samples")
    scores = score_samples(ckpt, manifest, samples)
    return metrics_at(scores, _labels(samples), threshold=threshold)


def pr_curve(scores, labels) -> PRCurve:
    """Precision/recall at every distinct score threshold, descending.

    A prediction is positive iff score >= threshold; average precision is
    the step-interpolated sum over the sweep.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-d sequences")
    n_pos = int(np.sum(labels == 1))
    if n_pos == 0:
        raise ValueError("pr_curve needs at least one positive label")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = (labels[order] == 1).astype(np.int64)
    cum_tp = np.cumsum(sorted_labels)
    n = len(scores)
    # last index of each distinct-score run = confusion state at that threshold
    last_of_run = np.nonzero(np.diff(sorted_scores, append=-np.inf))[0]

    points = []
    ap = 0.0
    prev_recall = 0.0
    for i in last_of_run:
        tp = int(cum_tp[i])
        m = i + 1
        precision = tp / m
        recall = tp / n_pos
        points.append((float(sorted_scores[i]), precision, recall))
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return PRCurve(points=tuple(points), average_precision=ap)


def compare_runs(runs_a, runs_b, name_a: str = "baseline", name_b: str = "improved") -> str:
    """Fixed-width table of mean +/- population std of P/R/F1 per arm.

    F1 is averaged per run, not recomputed from averaged P/R, so the
    reported F1 can sit slightly off 2PR/(P+R) of the reported means.
    """
    for name, runs in ((name_a, runs_a), (name_b, runs_b)):
        if len(runs) < 2:
            raise ValueError(f"arm {name!r} has {len(runs)} run(s); need >= 2")

    def cell(values):
        arr = np.asarray(values, dtype=np.float64)
        return f"{arr.mean():.3f} ± {arr.std():.3f}"

    lines = [f"{'arm':<10}  {'n':>2}  {'precision':<13}  {'recall':<13}  {'f1':<13}"]
    for name, runs in ((name_a, runs_a), (name_b, runs_b)):
        lines.append(
            f"{name:<10}  {len(runs):>2}  "
            f"{cell([m.precision for m in runs]):<13}  "
            f"{cell([m.recall for m in runs]):<13}  "
            f"{cell([m.f1 for m in runs]):<13}"
        )
    return "\n".join(line.rstrip() for line in lines)


def save_history(path, history: list) -> None:
    """One JSON record per epoch."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in history:
            doc = {"epoch": rec.epoch, "lr": rec.lr, "train_loss": rec.train_loss}
            if rec.test_metrics is not None:
                doc["test"] = asdict(rec.test_metrics)
            fh.write(json.dumps(doc) + "\n")


def save_pr_csv(path, curve: PRCurve) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("threshold,precision,recall\n")
        for t, p, r in curve.points:
            fh.write(f"{t:.10g},{p:.10g},{r:.10g}\n")
