"""Scikit-learn estimator facade over the feature pipeline and detector.

For notebook and cross-validation workflows: X is a plain 2-d array of
1 s waveform windows (n_samples, 48000) at 48 kHz, y is 0/1. The
transformer yields normalized log-mel features; the classifier wraps the
transformer training loop behind fit/predict/predict_proba so it clones,
grid-searches, and pipelines like any other estimator.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import model as mdl
from .audio import PIPELINE_RATE_HZ, AudioClip
from .dataset import inject_noise, noise_rng
from .features import NormStats, compute_stats, log_mel, normalize
from .model import AdamState, Checkpoint, ModelConfig

WINDOW_SAMPLES = PIPELINE_RATE_HZ  # one second per window


def _as_windows(X) -> np.ndarray:
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != WINDOW_SAMPLES:
        raise ValueError(
            f"X must hold 1 s windows of {WINDOW_SAMPLES} samples, got {X.shape[1]}"
        )
    return X


def _features_of(X: np.ndarray) -> list:
    return [log_mel(AudioClip(samples=row, sample_rate_hz=PIPELINE_RATE_HZ)) for row in X]


class LogMelTransformer(BaseEstimator, TransformerMixin):
    """Waveform windows -> normalized log-mel features.

    fit() learns the global scalar mean/std on the training windows only;
    transform() applies them, flattening to (n, 8192) unless flatten=False.
    """

    def __init__(self, flatten: bool = True):
        self.flatten = flatten

    def fit(self, X, y=None):
        X = _as_windows(X)
        stats = compute_stats(_features_of(X))
        self.mean_ = stats.mean
        self.std_ = stats.std
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "mean_")
        X = _as_windows(X)
        stats = NormStats(mean=self.mean_, std=self.std_)
        out = np.stack([normalize(f, stats).values for f in _features_of(X)])
        return out.reshape(len(out), -1) if self.flatten else out


class CallDetector(BaseEstimator, ClassifierMixin):
    """The full detector behind the scikit-learn classifier protocol.

    fit() runs the training recipe in memory: per-epoch seeded shuffle,
    fresh additive noise per sample (augment=True), class reweighting,
    Adam on the transformer weights. Scores come from decision_function
    as raw sigmoid outputs in (0,1).
    """

    def __init__(
        self,
        embed_dim: int = 64,
        n_layers: int = 2,
        n_heads: int = 4,
        epochs: int = 25,
        batch_size: int = 32,
        base_lr: float = 1e-3,
        weight_decay: float = 5e-7,
        snr_db: float = 10.0,
        augment: bool = True,
        neg_weight_scale: float = 20.0,
        threshold: float = 0.5,
        seed: int = 0,
    ):
        self.embed_dim = embed_dim
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.weight_decay = weight_decay
        self.snr_db = snr_db
        self.augment = augment
        self.neg_weight_scale = neg_weight_scale
        self.threshold = threshold
        self.seed = seed

    def _config(self) -> ModelConfig:
        return ModelConfig(
            embed_dim=self.embed_dim, n_layers=self.n_layers, n_heads=self.n_heads
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        X = _as_windows(X)
        y = np.asarray(y)
        classes = np.unique(y)
        if not np.all(np.isin(classes, (0, 1))):
            raise ValueError(f"y must be binary 0/1, got classes {classes}")
        n_pos = int(np.sum(y == 1))
        n_neg = int(np.sum(y == 0))
        if n_pos == 0 or n_neg == 0:
            raise ValueError(f"need both classes to fit, got n_pos={n_pos} n_neg={n_neg}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

        stats = compute_stats(_features_of(X))
        config = self._config()
        params = mdl.init_params(config, seed=self.seed)
        opt = AdamState.zeros_like(params)
        w_pos, w_neg = 1.0, self.neg_weight_scale * n_pos / n_neg
        yf = y.astype(np.float64)

        for epoch in range(self.epochs):
            lr = mdl.lr_at_epoch(self.base_lr, epoch)
            shuffle = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence((self.seed, epoch)))
            )
            order = shuffle.permutation(len(X))
            for lo in range(0, len(order), self.batch_size):
                idx = order[lo : lo + self.batch_size]
                feats = []
                for i in idx:
                    clip = AudioClip(samples=X[i], sample_rate_hz=PIPELINE_RATE_HZ)
                    if self.augment:
                        clip = inject_noise(
                            clip, snr_db=self.snr_db,
                            rng=noise_rng(self.seed, epoch, int(i)),
                        )
                    feats.append(normalize(log_mel(clip), stats).values)
                xb = np.stack(feats)
                scores, cache = mdl.forward_batch(params, xb, config, want_cache=True)
                _, dlogits = mdl.loss_batch(scores, yf[idx], w_pos, w_neg)
                grads = mdl.backward_batch(params, xb, dlogits, config, cache)
                params, opt = mdl.adam_step(
                    params, grads, opt, lr, weight_decay=self.weight_decay
                )

        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        self.checkpoint_ = Checkpoint(
            config=config, params=params, opt_state=opt, epoch=self.epochs,
            norm_stats=(stats.mean, stats.std),
        )
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "checkpoint_")
        X = _as_windows(X)
        stats = NormStats(*self.checkpoint_.norm_stats)
        feats = np.stack([normalize(f, stats).values for f in _features_of(X)])
        return self.checkpoint_.score_batch(feats)

    def predict_proba(self, X) -> np.ndarray:
        p = self.decision_function(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) >= self.threshold).astype(np.int64)
