"""Log-Mel filterbank features for 1-second windows.

Canonical geometry: 48000-sample clips are framed at length 750 with hop
375 (50% overlap, tail zero-padded to 48375 samples) so exactly 128 frames
come out; 376 DFT bins feed 64 mel triangles spanning [2 kHz, 24 kHz].
The result is the (64, 128) log-energy matrix the classifier consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioClip
from .errors import DegenerateDataError, StateError

N_MELS = 64
N_FRAMES = 128
FRAME_LEN = 750
HOP_LEN = 375
N_FFT_BINS = FRAME_LEN // 2 + 1  # 376
FMIN_HZ = 2000.0
FMAX_HZ = 24000.0
LOG_FLOOR = 1e-10
FEATURE_SHAPE = (N_MELS, N_FRAMES)
SECONDS_PER_FRAME = HOP_LEN / 48000.0


@dataclass(frozen=True)
class FilterbankFeature:
    """(64, 128) log-mel matrix plus a flag tracking normalization state."""

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != FEATURE_SHAPE:
            raise ValueError(f"feature shape must be {FEATURE_SHAPE}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature contains non-finite entries")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class NormStats:
    """Global scalar mean/std over all entries of all training features."""

    mean: float
    std: float

    def __post_init__(self):
        if not (self.std > 0):
            raise ValueError(f"std must be > 0, got {self.std}")


def hamming_window(n: int) -> np.ndarray:
    """w[k] = 0.54 - 0.46 cos(2 pi k / (n - 1))."""
    if n < 2:
        raise ValueError(f"window length must be >= 2, got {n}")
    k = np.arange(n, dtype=np.float64)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def mel_scale(f_hz):
    """HTK mel: 2595 log10(1 + f/700)."""
    f = np.asarray(f_hz, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequency must be >= 0")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if np.isscalar(f_hz) else out


def mel_to_hz(mel):
    m = np.asarray(mel, dtype=np.float64)
    out = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(out) if np.isscalar(mel) else out


def stft_power(clip: AudioClip) -> np.ndarray:
    """Power spectrogram (376 bins x 128 frames) of a 1 s clip.

    DFT length equals the frame length (750), no power-of-two padding,
    keeping bin k centered at exactly k * 64 Hz.
    """
    if len(clip.samples) != 48000:
        raise ValueError(f"clip must hold exactly 48000 samples, got {len(clip.samples)}")
    if clip.sample_rate_hz != 48000:
        raise ValueError(f"clip must be 48 kHz, got {clip.sample_rate_hz}")
    padded = np.zeros(HOP_LEN * (N_FRAMES - 1) + FRAME_LEN, dtype=np.float64)  # 48375
    padded[:48000] = clip.samples
    idx = HOP_LEN * np.arange(N_FRAMES)[:, None] + np.arange(FRAME_LEN)[None, :]
    frames = padded[idx] * hamming_window(FRAME_LEN)[None, :]
    spectrum = np.fft.rfft(frames, axis=1)
    return (spectrum.real**2 + spectrum.imag**2).T


@dataclass(frozen=True)
class MelFilterbank:
    """64 triangular filters, mel-equally spaced between 2 and 24 kHz.

    Triangles are piecewise-linear in mel space, so adjacent filters are
    exactly complementary and interior FFT bins see unit total weight.
    """

    weights: np.ndarray
    center_freqs_hz: np.ndarray
    fmin_hz: float = FMIN_HZ
    fmax_hz: float = FMAX_HZ


def build_mel_filterbank(
    n_fft_bins: int = N_FFT_BINS,
    n_mels: int = N_MELS,
    fmin_hz: float = FMIN_HZ,
    fmax_hz: float = FMAX_HZ,
    sample_rate_hz: int = 48000,
) -> MelFilterbank:
    nyquist = sample_rate_hz / 2.0
    if not (0 <= fmin_hz < fmax_hz):
        raise ValueError(f"need 0 <= fmin < fmax, got ({fmin_hz}, {fmax_hz})")
    if fmax_hz > nyquist:
        raise ValueError(f"fmax {fmax_hz} Hz exceeds Nyquist {nyquist} Hz")

    n_fft = 2 * (n_fft_bins - 1)
    bin_freqs = np.arange(n_fft_bins) * (sample_rate_hz / n_fft)
    edges_mel = np.linspace(mel_scale(fmin_hz), mel_scale(fmax_hz), n_mels + 2)
    bins_mel = mel_scale(bin_freqs)

    lower = edges_mel[:-2][:, None]
    peak = edges_mel[1:-1][:, None]
    upper = edges_mel[2:][:, None]
    rising = (bins_mel[None, :] - lower) / (peak - lower)
    falling = (upper - bins_mel[None, :]) / (upper - peak)
    weights = np.maximum(0.0, np.minimum(rising, falling))

    return MelFilterbank(
        weights=weights,
        center_freqs_hz=mel_to_hz(edges_mel[1:-1]),
        fmin_hz=fmin_hz,
        fmax_hz=fmax_hz,
    )


_DEFAULT_BANK = None


def default_filterbank() -> MelFilterbank:
    """The canonical 64-filter bank, built once and shared (immutable)."""
    global _DEFAULT_BANK
    if _DEFAULT_BANK is None:
        _DEFAULT_BANK = build_mel_filterbank()
    return _DEFAULT_BANK


def log_mel(clip: AudioClip, bank: MelFilterbank | None = None) -> FilterbankFeature:
    """ln(mel_weights @ power + 1e-10), shape (64, 128), unnormalized."""
    bank = bank or default_filterbank()
    power = stft_power(clip)
    values = np.log(bank.weights @ power + LOG_FLOOR)
    return FilterbankFeature(values=values, normalized=False)


def compute_stats(features) -> NormStats:
    """Population mean/std over ALL entries of all features (one scalar pair)."""
    features = list(features)
    if not features:
        raise ValueError("cannot compute stats over an empty collection")
    stacked = np.stack([f.values for f in features])
    mean = float(stacked.mean())
    std = float(stacked.std())
    if std == 0.0:
        raise DegenerateDataError("zero variance across the feature collection")
    return NormStats(mean=mean, std=std)


def normalize(feature: FilterbankFeature, stats: NormStats) -> FilterbankFeature:
    if feature.normalized:
        raise StateError("feature is already normalized")
    return FilterbankFeature(
        values=(feature.values - stats.mean) / stats.std, normalized=True
    )
