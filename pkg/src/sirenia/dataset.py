"""Windowing, labeling, splitting and the manifest file format.

Sessions are cut into 1 s windows on a 0.5 s grid. A window is positive
when at least half of some annotated call lies inside it (the labeling
rule is pluggable so the alternative window-coverage reading stays
testable). Manifests are versioned JSON documents that reference source
audio by (session_id, window_start_s) instead of storing features, so
features can be recomputed with fresh noise every epoch.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio import AudioClip, RecordingSession, cut_clip, load_annotations, load_wav
from .errors import DegenerateDataError, FormatError
from .features import FilterbankFeature, NormStats, compute_stats, log_mel

MANIFEST_VERSION = 1
WINDOW_S = 1.0
HOP_S = 0.5


@dataclass(frozen=True)
class LabeledSample:
    session_id: str
    window_start_s: float
    label: str  # "positive" | "negative"
    origin: str = "expert"  # "expert" | "feedback"

    def __post_init__(self):
        if self.label not in ("positive", "negative"):
            raise ValueError(f"label must be positive/negative, got {self.label!r}")
        if self.origin not in ("expert", "feedback"):
            raise ValueError(f"origin must be expert/feedback, got {self.origin!r}")
        if self.window_start_s < 0 or round(self.window_start_s * 2) != self.window_start_s * 2:
            raise ValueError(
                f"window_start_s must be a nonnegative multiple of 0.5, got {self.window_start_s}"
            )

    @property
    def key(self) -> tuple:
        return (self.session_id, self.window_start_s)


@dataclass
class DatasetManifest:
    samples: list
    split: dict = field(default_factory=dict)  # key -> "train" | "test"
    norm_stats: NormStats | None = None
    seed: int | None = None
    registry_root: str | None = None
    label_rule: str = "call"
    warnings: list = field(default_factory=list)
    revision: int = 0

    def counts(self, split_name: str | None = None) -> tuple:
        """(n_pos, n_neg) over one split, or over everything when None."""
        n_pos = n_neg = 0
        for s in self.samples:
            if split_name is not None and self.split.get(s.key) != split_name:
                continue
            if s.label == "positive":
                n_pos += 1
            else:
                n_neg += 1
        return n_pos, n_neg

    def split_samples(self, split_name: str) -> list:
        return [s for s in self.samples if self.split.get(s.key) == split_name]


def window_starts(duration_s: float) -> list:
    """Starts on the 0.5 s grid whose windows tile and cover the session.

    Windows run while window_start < duration - 0.5 (minimum one window),
    so only a session whose length is not a multiple of the hop needs a
    zero-filled tail. A 600 s session yields 1199 windows.
    """
    if duration_s <= 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    n = max(1, math.ceil(2.0 * duration_s - 1.0 - 1e-9))
    return [0.5 * k for k in range(n)]


def overlap_s(a_start: float, a_end: float, b_start: float, b_end: float) -> float:
    return max(0.0, min(a_end, b_end) - max(a_start, b_start))


def call_overlap_rule(annotation, w_start: float, w_end: float) -> bool:
    """Positive iff >= 50% of the CALL lies inside the window."""
    o = overlap_s(annotation.start_s, annotation.end_s, w_start, w_end)
    return o / annotation.duration_s >= 0.5


def window_coverage_rule(annotation, w_start: float, w_end: float) -> bool:
    """Alternative reading: positive iff >= 50% of the WINDOW is covered."""
    o = overlap_s(annotation.start_s, annotation.end_s, w_start, w_end)
    return o / (w_end - w_start) >= 0.5


LABEL_RULES = {"call": call_overlap_rule, "window": window_coverage_rule}


def window_and_label(session: RecordingSession, rule: str = "call") -> list:
    predicate = LABEL_RULES[rule]
    samples = []
    for start in window_starts(session.duration_s):
        end = start + WINDOW_S
        positive = any(predicate(a, start, end) for a in session.annotations)
        samples.append(
            LabeledSample(
                session_id=session.id,
                window_start_s=start,
                label="positive" if positive else "negative",
            )
        )
    return samples


class SessionRegistry:
    """Directory of <id>.wav + <id>.csv pairs, loaded lazily and cached."""

    def __init__(self, root):
        self.root = Path(root)
        self._cache = {}

    def session_ids(self) -> list:
        return sorted(p.stem for p in self.root.glob("*.wav"))

    def load(self, session_id: str) -> RecordingSession:
        if session_id not in self._cache:
            wav_path = self.root / f"{session_id}.wav"
            csv_path = self.root / f"{session_id}.csv"
            if not wav_path.exists():
                raise FileNotFoundError(f"session {session_id}: missing {wav_path}")
            if not csv_path.exists():
                raise FileNotFoundError(f"session {session_id}: missing {csv_path}")
            self._cache[session_id] = RecordingSession(
                id=session_id,
                clip=load_wav(wav_path),
                annotations=tuple(load_annotations(csv_path)),
            )
        return self._cache[session_id]

    def window_clip(self, sample: LabeledSample) -> AudioClip:
        return cut_clip(self.load(sample.session_id), sample.window_start_s, WINDOW_S)


def sample_feature(
    registry: SessionRegistry,
    sample: LabeledSample,
    stats: NormStats | None = None,
    noise_rng: np.random.Generator | None = None,
    snr_db: float = 10.0,
) -> FilterbankFeature:
    """Materialize one sample's feature, optionally noise-injected/normalized."""
    clip = registry.window_clip(sample)
    if noise_rng is not None:
        clip = inject_noise(clip, snr_db=snr_db, rng=noise_rng)
    feature = log_mel(clip)
    if stats is not None:
        from .features import normalize

        feature = normalize(feature, stats)
    return feature


def build_manifest(registry: SessionRegistry, rule: str = "call") -> DatasetManifest:
    """Window and label every session in the registry (unsplit)."""
    samples = []
    for sid in registry.session_ids():
        samples.extend(window_and_label(registry.load(sid), rule=rule))
    return DatasetManifest(
        samples=samples, registry_root=str(registry.root), label_rule=rule
    )


def split_train_test(
    manifest: DatasetManifest,
    train_fraction: float = 0.7,
    seed: int = 0,
    registry: SessionRegistry | None = None,
) -> DatasetManifest:
    """Uniform sample-level split; norm stats computed on the train split only."""
    if registry is None:
        if manifest.registry_root is None:
            raise ValueError("manifest has no registry_root; pass a registry")
        registry = SessionRegistry(manifest.registry_root)
    if manifest.split:
        raise ValueError("manifest is already split")
    if not (0 < train_fraction <= 1):
        raise ValueError(f"train_fraction must be in (0, 1], got {train_fraction}")
    n = len(manifest.samples)
    if n == 0:
        raise ValueError("manifest holds no samples")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(n)
    n_train = int(round(train_fraction * n))
    assignment = {}
    for rank, idx in enumerate(order):
        assignment[manifest.samples[idx].key] = "train" if rank < n_train else "test"

    out = replace(manifest, split=assignment, seed=seed, warnings=list(manifest.warnings))
    train_pos, _ = out.counts("train")
    if train_pos == 0:
        out.warnings.append("train split contains zero positive samples")
    out.norm_stats = compute_train_stats(out, registry)
    return out


def compute_train_stats(manifest: DatasetManifest, registry: SessionRegistry) -> NormStats:
    """Stats over clean (noise-free) train-split features; test never leaks in."""
    train = manifest.split_samples("train")
    if not train:
        raise ValueError("train split is empty")
    return compute_stats(sample_feature(registry, s) for s in train)


def inject_noise(clip: AudioClip, snr_db: float = 10.0, rng=None) -> AudioClip:
    """Additive white Gaussian noise at the requested SNR, waveform domain.

    Noise variance is P_signal / 10^(snr/10) with P_signal the mean squared
    amplitude. All-zero clips come back unchanged (SNR undefined).
    """
    if rng is None:
        raise ValueError("inject_noise requires an explicit seeded generator")
    p_signal = float(np.mean(clip.samples**2))
    if p_signal == 0.0:
        return clip
    sigma = math.sqrt(p_signal / (10.0 ** (snr_db / 10.0)))
    noise = rng.normal(0.0, sigma, size=len(clip.samples))
    return AudioClip(samples=clip.samples + noise, sample_rate_hz=clip.sample_rate_hz)


def noise_rng(seed: int, epoch: int, sample_index: int) -> np.random.Generator:
    """Per-sample noise stream so parallel or reordered epochs stay deterministic."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, epoch, sample_index))))


def class_weights(manifest: DatasetManifest) -> tuple:
    """(w_pos, w_neg) = (1, 20 * n_pos / n_neg) over the train split."""
    n_pos, n_neg = manifest.counts("train")
    if n_pos == 0 or n_neg == 0:
        raise DegenerateDataError(
            f"train split needs both classes, got n_pos={n_pos}, n_neg={n_neg}"
        )
    return 1.0, 20.0 * n_pos / n_neg


_KNOWN_MANIFEST_FIELDS = {
    "version",
    "seed",
    "registry_root",
    "label_rule",
    "norm_stats",
    "warnings",
    "revision",
    "samples",
}


def save_manifest(path, manifest: DatasetManifest) -> None:
    """Write the manifest atomically (temp file + rename)."""
    if manifest.norm_stats is None:
        raise ValueError("refusing to save a manifest without norm_stats (unsplit?)")
    doc = {
        "version": MANIFEST_VERSION,
        "seed": manifest.seed,
        "registry_root": manifest.registry_root,
        "label_rule": manifest.label_rule,
        "norm_stats": {"mean": manifest.norm_stats.mean, "std": manifest.norm_stats.std},
        "warnings": manifest.warnings,
        "revision": manifest.revision,
        "samples": [
            {
                "session_id": s.session_id,
                "window_start_s": s.window_start_s,
                "label": s.label,
                "origin": s.origin,
                "split": manifest.split.get(s.key),
            }
            for s in manifest.samples
        ],
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1), encoding="utf-8")
    os.replace(tmp, path)


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: not valid JSON ({e})") from None
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: manifest must be a JSON object")
    version = doc.get("version")
    if version != MANIFEST_VERSION:
        raise FormatError(
            f"{path}: manifest version {version!r}, this build reads version {MANIFEST_VERSION}"
        )
    unknown = set(doc) - _KNOWN_MANIFEST_FIELDS
    if unknown:
        warnings.warn(f"{path}: ignoring unknown manifest fields {sorted(unknown)}")
    if "norm_stats" not in doc or doc["norm_stats"] is None:
        raise FormatError(f"{path}: manifest missing norm_stats")
    if "samples" not in doc:
        raise FormatError(f"{path}: manifest missing samples")

    samples = []
    split = {}
    for row in doc["samples"]:
        s = LabeledSample(
            session_id=row["session_id"],
            window_start_s=float(row["window_start_s"]),
            label=row["label"],
            origin=row.get("origin", "expert"),
        )
        samples.append(s)
        if row.get("split") is not None:
            split[s.key] = row["split"]
    return DatasetManifest(
        samples=samples,
        split=split,
        norm_stats=NormStats(**doc["norm_stats"]),
        seed=doc.get("seed"),
        registry_root=doc.get("registry_root"),
        label_rule=doc.get("label_rule", "call"),
        warnings=list(doc.get("warnings", [])),
        revision=int(doc.get("revision", 0)),
    )
