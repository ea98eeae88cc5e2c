"""Audio and annotation ingest.

WAV parsing is done by hand because the pipeline needs 24-bit PCM and
32-bit float support with precise error reporting, which the stdlib
``wave`` module does not offer. Only RIFF PCM is in scope; no resampling.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, SampleRateError

PIPELINE_RATE_HZ = 48000

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform, amplitudes nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int = PIPELINE_RATE_HZ

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain non-finite values")
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class Annotation:
    """Positive call interval in seconds."""

    start_s: float
    end_s: float

    def __post_init__(self):
        if not (0 <= self.start_s < self.end_s):
            raise ValueError(
                f"annotation requires 0 <= start < end, got [{self.start_s}, {self.end_s}]"
            )

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class RecordingSession:
    """One recording plus its positive-only call annotations.

    Absence of an annotation does NOT imply absence of a call: the labels
    are partial, which is what the feedback loop exists to repair.
    """

    id: str
    clip: AudioClip
    annotations: tuple = field(default_factory=tuple)

    def __post_init__(self):
        anns = tuple(self.annotations)
        starts = [a.start_s for a in anns]
        if starts != sorted(starts):
            raise ValueError("annotations must be sorted ascending by start_s")
        for a in anns:
            if a.end_s > self.clip.duration_s + 1e-9:
                raise ValueError(
                    f"annotation [{a.start_s}, {a.end_s}] extends past session "
                    f"end at {self.clip.duration_s:.3f} s"
                )
        object.__setattr__(self, "annotations", anns)

    @property
    def duration_s(self) -> float:
        return self.clip.duration_s


def _sign_extend_24bit(raw: np.ndarray) -> np.ndarray:
    """raw: uint8 array of length 3*n, little-endian 24-bit samples."""
    b = raw.reshape(-1, 3).astype(np.int32)
    value = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
    return value - ((value & 0x800000) << 1)


def _read_chunks(data: bytes):
    """Yield (chunk_id, payload) over a RIFF body, honoring word alignment."""
    pos = 0
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        pos += 8
        payload = data[pos : pos + size]
        if len(payload) < size:
            raise FormatError(f"truncated {cid!r} chunk: need {size} bytes, have {len(payload)}")
        yield cid, payload
        pos += size + (size & 1)


def load_wav(path) -> AudioClip:
    """Load a PCM WAV file as a mono AudioClip.

    Supports 16/24-bit integer and 32-bit float encodings. Multi-channel
    files keep channel 0 only. Any sample rate other than 48 kHz is
    rejected rather than resampled.
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    frames = None
    for cid, payload in _read_chunks(data[12:]):
        if cid == b"fmt ":
            if len(payload) < 16:
                raise FormatError(f"{path}: fmt chunk too short ({len(payload)} bytes)")
            fmt = struct.unpack_from("<HHIIHH", payload, 0)
            if fmt[0] == _WAVE_FORMAT_EXTENSIBLE:
                if len(payload) < 40:
                    raise FormatError(f"{path}: extensible fmt chunk too short")
                sub_format = struct.unpack_from("<H", payload, 24)[0]
                fmt = (sub_format,) + fmt[1:]
        elif cid == b"data":
            frames = payload
    if fmt is None or frames is None:
        raise FormatError(f"{path}: missing fmt or data chunk")

    format_tag, n_channels, rate, _, block_align, bits = fmt
    if n_channels < 1 or block_align == 0:
        raise FormatError(f"{path}: invalid channel layout")

    if format_tag == _WAVE_FORMAT_PCM and bits == 16:
        flat = np.frombuffer(frames[: len(frames) - len(frames) % 2], dtype="<i2")
        scale = 1.0 / 32768.0
    elif format_tag == _WAVE_FORMAT_PCM and bits == 24:
        usable = len(frames) - len(frames) % 3
        flat = _sign_extend_24bit(np.frombuffer(frames[:usable], dtype=np.uint8))
        scale = 1.0 / 8388608.0
    elif format_tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        flat = np.frombuffer(frames[: len(frames) - len(frames) % 4], dtype="<f4")
        scale = 1.0
    else:
        raise FormatError(
            f"{path}: unsupported encoding (format tag {format_tag}, {bits}-bit); "
            "expected 16/24-bit PCM or 32-bit float"
        )

    if rate != PIPELINE_RATE_HZ:
        raise SampleRateError(rate)

    mono = flat[:: n_channels] if n_channels > 1 else flat
    samples = np.asarray(mono, dtype=np.float64) * scale
    return AudioClip(samples=samples, sample_rate_hz=rate)


def wav_bytes(clip: AudioClip, bit_depth: int = 24) -> bytes:
    """Serialize a mono clip to WAV bytes at 16/24-bit PCM or 32-bit float.

    Integer depths clip amplitudes to [-1, 1] before quantizing.
    """
    if bit_depth not in (16, 24, 32):
        raise ValueError(f"bit_depth must be 16, 24 or 32, got {bit_depth}")
    x = clip.samples
    rate = clip.sample_rate_hz
    if bit_depth == 32:
        format_tag = _WAVE_FORMAT_IEEE_FLOAT
        payload = x.astype("<f4").tobytes()
    else:
        format_tag = _WAVE_FORMAT_PCM
        full = 1 << (bit_depth - 1)
        q = np.clip(np.rint(np.clip(x, -1.0, 1.0) * full), -full, full - 1).astype(np.int64)
        if bit_depth == 16:
            payload = q.astype("<i2").tobytes()
        else:
            as32 = np.ascontiguousarray(q.astype("<i4")).view(np.uint8).reshape(-1, 4)
            payload = as32[:, :3].tobytes()

    block_align = bit_depth // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        format_tag,
        1,
        rate,
        rate * block_align,
        block_align,
        bit_depth,
        b"data",
        len(payload),
    )
    return header + payload


def save_wav(path, clip: AudioClip, bit_depth: int = 24) -> None:
    """Write a mono WAV file; see wav_bytes for the encoding contract."""
    Path(path).write_bytes(wav_bytes(clip, bit_depth=bit_depth))


def load_annotations(path) -> list[Annotation]:
    """Read a `start_s,end_s` CSV into a sorted annotation list.

    Rejects non-numeric fields and inverted intervals, reporting the
    offending row number (1-based, header excluded).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty annotation file (missing header)") from None
        if [h.strip() for h in header[:2]] != ["start_s", "end_s"]:
            raise FormatError(f"{path}: expected header 'start_s,end_s', got {header!r}")
        annotations = []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < 2:
                raise FormatError(f"{path} row {row_no}: expected 2 fields, got {len(row)}")
            try:
                start_s, end_s = float(row[0]), float(row[1])
            except ValueError:
                raise FormatError(f"{path} row {row_no}: non-numeric field in {row!r}") from None
            if not (0 <= start_s < end_s):
                raise ValueError(
                    f"{path} row {row_no}: requires 0 <= start_s < end_s, "
                    f"got ({start_s}, {end_s})"
                )
            annotations.append(Annotation(start_s=start_s, end_s=end_s))
    annotations.sort(key=lambda a: a.start_s)
    return annotations


def save_annotations(path, annotations) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["start_s", "end_s"])
        for a in annotations:
            writer.writerow([f"{a.start_s:.6f}", f"{a.end_s:.6f}"])


def cut_clip(session: RecordingSession, start_s: float, dur_s: float) -> AudioClip:
    """Cut ``round(dur_s * rate)`` samples starting at ``start_s``.

    The region past the session end is zero-filled so windowing always
    yields uniform lengths.
    """
    if start_s < 0:
        raise ValueError(f"start_s must be >= 0, got {start_s}")
    if dur_s <= 0:
        raise ValueError(f"dur_s must be > 0, got {dur_s}")
    rate = session.clip.sample_rate_hz
    n_out = int(round(dur_s * rate))
    i0 = int(round(start_s * rate))
    out = np.zeros(n_out, dtype=np.float64)
    src = session.clip.samples
    take = max(0, min(len(src) - i0, n_out))
    if take > 0:
        out[:take] = src[i0 : i0 + take]
    return AudioClip(samples=out, sample_rate_hz=rate)
