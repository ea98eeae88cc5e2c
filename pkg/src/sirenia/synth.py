"""Ground-truthed synthetic underwater sessions.

Calls are harmonic stacks (fundamental >= 2 kHz, linear +/-10% sweep,
raised-cosine onset/offset) mixed over a white + 1/f background at a
random SNR. Broadband distractor bursts carry comparable energy but no
harmonic structure, so an energy detector cannot ace the benchmark.
A configurable fraction of true calls is withheld from the annotation
list, reproducing the partial-positive-label setting the feedback loop
is built for.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .audio import Annotation, AudioClip, RecordingSession, save_annotations, save_wav
from .errors import CapacityError

RATE = 48000


@dataclass(frozen=True)
class SynthConfig:
    f0_range_hz: tuple = (2000.0, 5000.0)
    n_harmonics: int = 6
    harmonic_decay: float = 0.7
    duration_range_s: tuple = (0.10, 0.60)
    call_snr_db_range: tuple = (0.0, 20.0)
    session_length_s: float = 60.5
    calls_per_session_range: tuple = (3, 6)
    distractor_rate_per_min: float = 6.0
    withhold_fraction: float = 0.0
    background_white_level: float = 0.05
    background_pink_level: float = 0.05

    def __post_init__(self):
        lo, hi = self.f0_range_hz
        if not (2000.0 <= lo <= hi):
            raise ValueError(f"f0 range must sit at or above 2 kHz, got {self.f0_range_hz}")
        if hi * 1.1 > RATE / 2:
            raise ValueError(f"f0 up to {hi} Hz (with sweep headroom) exceeds Nyquist")
        dlo, dhi = self.duration_range_s
        if not (0.05 <= dlo <= dhi <= 1.0):
            raise ValueError(f"duration range must lie in [0.05, 1.0], got {self.duration_range_s}")
        if self.session_length_s <= 0:
            raise ValueError(f"session_length_s must be positive, got {self.session_length_s}")
        if not (0.0 <= self.withhold_fraction <= 1.0):
            raise ValueError(f"withhold_fraction in [0,1], got {self.withhold_fraction}")
        if self.calls_per_session_range[0] < 0 or (
            self.calls_per_session_range[0] > self.calls_per_session_range[1]
        ):
            raise ValueError(f"bad calls_per_session_range {self.calls_per_session_range}")


def synth_call(cfg: SynthConfig, rng: np.random.Generator):
    """One call waveform: (AudioClip, duration_s).

    Sum over harmonics h of decay^(h-1) sin(2 pi h integral(f0(t))) with a
    linear f0 sweep of a random +/-10% and a raised-cosine envelope over
    the first and last 10% of the duration.
    """
    duration_s = float(rng.uniform(*cfg.duration_range_s))
    n = int(round(duration_s * RATE))
    t = np.arange(n) / RATE
    f0_start = rng.uniform(*cfg.f0_range_hz)
    sweep = rng.uniform(-0.10, 0.10)
    # instantaneous f0: linear from f0_start to f0_start*(1+sweep)
    f0_t = f0_start * (1.0 + sweep * t / duration_s)
    phase0 = 2.0 * np.pi * np.cumsum(f0_t) / RATE
    f0_peak = f0_start * max(1.0, 1.0 + sweep)
    x = np.zeros(n, dtype=np.float64)
    for h in range(1, cfg.n_harmonics + 1):
        phi = rng.uniform(0.0, 2.0 * np.pi)
        if h * f0_peak >= RATE / 2:  # keep every generated partial below Nyquist
            continue
        x += cfg.harmonic_decay ** (h - 1) * np.sin(h * phase0 + phi)

    ramp = max(1, int(round(0.10 * n)))
    envelope = np.ones(n)
    edge = 0.5 * (1.0 - np.cos(np.pi * np.arange(ramp) / ramp))
    envelope[:ramp] = edge
    envelope[n - ramp :] = edge[::-1]
    x *= envelope
    x /= max(1e-12, np.max(np.abs(x)))
    return AudioClip(samples=x, sample_rate_hz=RATE), duration_s


def _distractor_burst(rng: np.random.Generator) -> np.ndarray:
    """Broadband (no harmonic structure) burst, 20-100 ms, band-limited >= 2 kHz."""
    dur = rng.uniform(0.020, 0.100)
    n = int(round(dur * RATE))
    burst = rng.normal(0.0, 1.0, n)
    # crude high-pass: remove the running mean so energy sits broadband
    spectrum = np.fft.rfft(burst)
    freqs = np.fft.rfftfreq(n, d=1.0 / RATE)
    spectrum[freqs < 2000.0] = 0.0
    burst = np.fft.irfft(spectrum, n)
    ramp = max(1, n // 10)
    edge = 0.5 * (1.0 - np.cos(np.pi * np.arange(ramp) / ramp))
    burst[:ramp] *= edge
    burst[n - ramp :] *= edge[::-1]
    peak = np.max(np.abs(burst))
    return burst / max(1e-12, peak)


def _background(cfg: SynthConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    """White Gaussian plus 1/f-shaped low-frequency rumble."""
    white = rng.normal(0.0, cfg.background_white_level, n)
    spectrum = np.fft.rfft(rng.normal(0.0, 1.0, n))
    freqs = np.fft.rfftfreq(n, d=1.0 / RATE)
    shaping = np.zeros_like(freqs)
    nonzero = freqs > 0
    shaping[nonzero] = 1.0 / np.sqrt(freqs[nonzero])
    pink = np.fft.irfft(spectrum * shaping, n)
    pink_rms = float(np.sqrt(np.mean(pink**2)))
    if pink_rms > 0:
        pink *= cfg.background_pink_level / pink_rms
    return white + pink


def _mix_at_snr(background_power: float, call: np.ndarray, snr_db: float) -> np.ndarray:
    """Scale a call so 10 log10(P_call / P_background) equals snr_db."""
    p_call = float(np.mean(call**2))
    if p_call == 0:
        return call
    target = background_power * 10.0 ** (snr_db / 10.0)
    return call * math.sqrt(target / p_call)


def synth_session(cfg: SynthConfig, rng: np.random.Generator):
    """Build one session: (RecordingSession, hidden annotations).

    Calls are placed uniformly at random without overlap (0.05 s guard),
    each mixed at a random SNR from cfg.call_snr_db_range. The returned
    `hidden` list holds the withheld fraction of true calls; visible and
    hidden together are the full ground truth.
    """
    n = int(round(cfg.session_length_s * RATE))
    audio = _background(cfg, n, rng)
    background_power = float(np.mean(audio**2))

    n_calls = int(rng.integers(cfg.calls_per_session_range[0], cfg.calls_per_session_range[1] + 1))
    placed = []  # (start_s, end_s)
    guard = 0.05
    for _ in range(n_calls):
        call, duration_s = synth_call(cfg, rng)
        placed_ok = False
        for _attempt in range(200):
            start_s = float(rng.uniform(0.0, cfg.session_length_s - duration_s))
            end_s = start_s + duration_s
            if all(
                end_s + guard <= s or start_s >= e + guard for s, e in placed
            ):
                placed_ok = True
                break
        if not placed_ok:
            raise CapacityError(
                f"could not place {n_calls} non-overlapping calls in "
                f"{cfg.session_length_s} s"
            )
        snr_db = float(rng.uniform(*cfg.call_snr_db_range))
        scaled = _mix_at_snr(background_power, call.samples, snr_db)
        i0 = int(round(start_s * RATE))
        audio[i0 : i0 + len(scaled)] += scaled
        placed.append((start_s, end_s))

    n_bursts = rng.poisson(cfg.distractor_rate_per_min * cfg.session_length_s / 60.0)
    for _ in range(int(n_bursts)):
        burst = _distractor_burst(rng)
        snr_db = float(rng.uniform(*cfg.call_snr_db_range))
        scaled = _mix_at_snr(background_power, burst, snr_db)
        start_s = float(rng.uniform(0.0, cfg.session_length_s - len(burst) / RATE))
        i0 = int(round(start_s * RATE))
        audio[i0 : i0 + len(scaled)] += scaled

    peak = float(np.max(np.abs(audio)))
    if peak > 1.0:
        audio /= peak * 1.01

    placed.sort()
    all_annotations = [Annotation(start_s=s, end_s=e) for s, e in placed]
    n_hidden = int(round(cfg.withhold_fraction * len(all_annotations)))
    hidden_idx = set(
        rng.choice(len(all_annotations), size=n_hidden, replace=False).tolist()
    ) if n_hidden else set()
    visible = [a for i, a in enumerate(all_annotations) if i not in hidden_idx]
    hidden = [a for i, a in enumerate(all_annotations) if i in hidden_idx]

    session = RecordingSession(
        id="synth", clip=AudioClip(samples=audio, sample_rate_hz=RATE), annotations=tuple(visible)
    )
    return session, hidden


def session_rng(seed: int, session_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, session_index))))


def write_registry(out_dir, cfg: SynthConfig, n_sessions: int, seed: int = 0) -> list:
    """Emit <id>.wav + <id>.csv (+ <id>.hidden.csv sidecar) per session.

    Returns the session ids written. Deterministic given (cfg, seed).
    """
    from pathlib import Path

    if n_sessions <= 0:
        raise ValueError(f"n_sessions must be positive, got {n_sessions}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = []
    for i in range(n_sessions):
        session, hidden = synth_session(cfg, session_rng(seed, i))
        sid = f"session{i:03d}"
        save_wav(out_dir / f"{sid}.wav", session.clip, bit_depth=24)
        save_annotations(out_dir / f"{sid}.csv", session.annotations)
        save_annotations(out_dir / f"{sid}.hidden.csv", hidden)
        ids.append(sid)
    return ids


def load_hidden_annotations(registry_root, session_id: str) -> list:
    """Oracle sidecar access for tests and the simulated expert."""
    from pathlib import Path

    from .audio import load_annotations

    path = Path(registry_root) / f"{session_id}.hidden.csv"
    if not path.exists():
        return []
    return load_annotations(path)
