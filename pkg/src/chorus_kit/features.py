"""Audio ingestion and Mel-spectrogram extraction.

The front end resamples to 22,050 Hz and takes 2048-sample Hann windows every
512 samples, mapping each window's magnitude spectrum onto 128 Slaney-style
Mel bands between 0 Hz and Nyquist. Magnitudes are left linear unless
``log=True`` asks for ``log(1 + m)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction
from math import gcd
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .errors import FormatError, UsageError

SAMPLE_RATE = 22050
N_FFT = 2048
HOP = 512
N_MELS = 128

FEATURE_MAGIC = b"DCF1"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sIIQd")


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise UsageError(f"sample rate must be positive, got {self.sample_rate}")
        if self.samples.ndim != 1:
            raise UsageError("AudioClip holds mono samples only")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MelSpectrogram:
    """Frame-major Mel magnitudes, ``data[frame, band]``."""

    data: np.ndarray
    fps: Fraction | float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise UsageError(f"Mel data must be 2-D (frames, bands), got {self.data.shape}")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_mels(self) -> int:
        return self.data.shape[1]


# ---------------------------------------------------------------------------
# WAV reading


_PCM, _FLOAT, _EXTENSIBLE = 1, 3, 0xFFFE


def load_wav(path) -> AudioClip:
    """Read a 16-bit PCM or 32-bit float WAV file as mono in ``[-1, 1]``."""
    buf = Path(path).read_bytes()
    if len(buf) < 12 or buf[:4] != b"RIFF" or buf[8:12] != b"WAVE":
        raise FormatError("not a RIFF/WAVE file", offset=0, path=path)
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(buf):
        cid = buf[pos:pos + 4]
        (size,) = struct.unpack_from("<I", buf, pos + 4)
        body = pos + 8
        if body + size > len(buf):
            raise FormatError(f"chunk {cid!r} runs past end of file", offset=pos, path=path)
        if cid == b"fmt ":
            if size < 16:
                raise FormatError("fmt chunk too short", offset=pos, path=path)
            tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", buf, body)
            if tag == _EXTENSIBLE and size >= 40:
                (tag,) = struct.unpack_from("<H", buf, body + 24)
            fmt = (tag, channels, rate, bits, body)
        elif cid == b"data":
            data = (body, size)
        pos = body + size + (size & 1)
    if fmt is None:
        raise FormatError("missing fmt chunk", offset=pos, path=path)
    if data is None:
        raise FormatError("missing data chunk", offset=pos, path=path)
    tag, channels, rate, bits, fmt_at = fmt
    if channels < 1 or rate < 1:
        raise FormatError(f"invalid channel count {channels} or rate {rate}", offset=fmt_at, path=path)
    if tag == _PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == _FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise FormatError(f"unsupported codec (format tag {tag}, {bits}-bit)", offset=fmt_at, path=path)
    start, size = data
    frame_bytes = dtype.itemsize * channels
    n = size // frame_bytes
    raw = np.frombuffer(buf, dtype=dtype, count=n * channels, offset=start)
    samples = raw.astype(np.float64).reshape(n, channels).mean(axis=1) * scale
    return AudioClip(samples, rate)


def write_wav(path, clip: AudioClip, float32: bool = False) -> None:
    """Write mono 16-bit PCM (default) or 32-bit float WAV."""
    if float32:
        payload = np.asarray(clip.samples, dtype="<f4").tobytes()
        tag, bits = _FLOAT, 32
    else:
        pcm = np.clip(np.round(clip.samples * 32767.0), -32768, 32767)
        payload = pcm.astype("<i2").tobytes()
        tag, bits = _PCM, 16
    block = bits // 8
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    fmt = b"fmt " + struct.pack("<IHHIIHH", 16, tag, 1, clip.sample_rate, clip.sample_rate * block, block, bits)
    Path(path).write_bytes(header + fmt + b"data" + struct.pack("<I", len(payload)) + payload)


# ---------------------------------------------------------------------------
# resampling and spectra


def resample(clip: AudioClip, target_rate: int = SAMPLE_RATE) -> AudioClip:
    """Polyphase band-limited resampling (Kaiser-windowed FIR)."""
    if target_rate <= 0:
        raise UsageError(f"target rate must be positive, got {target_rate}")
    if clip.sample_rate == target_rate:
        return clip
    g = gcd(int(clip.sample_rate), int(target_rate))
    up, down = target_rate // g, clip.sample_rate // g
    y = resample_poly(clip.samples, up, down, padtype="line")
    return AudioClip(y, target_rate)


def hz_to_mel(hz):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    hz = np.asarray(hz, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz, min_log_mel = 1000.0, 1000.0 / f_sp
    logstep = np.log(6.4) / 27.0
    safe = np.maximum(hz, min_log_hz)
    return np.where(hz >= min_log_hz, min_log_mel + np.log(safe / min_log_hz) / logstep, hz / f_sp)


def mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz, min_log_mel = 1000.0, 1000.0 / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(mel >= min_log_mel, min_log_hz * np.exp(logstep * (mel - min_log_mel)), f_sp * mel)


def mel_filterbank(
    sample_rate: int = SAMPLE_RATE,
    n_fft: int = N_FFT,
    n_mels: int = N_MELS,
    fmin: float = 0.0,
    fmax: float | None = None,
) -> np.ndarray:
    """Triangular filters, area-normalised, shape ``(n_mels, n_fft // 2 + 1)``."""
    fmax = sample_rate / 2 if fmax is None else fmax
    fft_hz = np.linspace(0, sample_rate / 2, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    widths = np.diff(edges)
    ramps = edges[:, None] - fft_hz[None, :]
    lower = -ramps[:-2] / widths[:-1, None]
    upper = ramps[2:] / widths[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    return weights


def mel_center_frequencies(n_mels: int = N_MELS, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2), n_mels + 2))
    return edges[1:-1]


def stft_magnitude(samples: np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Centred (reflect-padded) periodic-Hann STFT magnitudes, ``(frames, bins)``."""
    pad = n_fft // 2
    padded = np.pad(samples, pad, mode="reflect")
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n_fft) / n_fft)
    frames = np.lib.stride_tricks.sliding_window_view(padded, n_fft)[::hop]
    out = np.empty((frames.shape[0], n_fft // 2 + 1), dtype=np.float64)
    chunk = 1024
    for i in range(0, frames.shape[0], chunk):
        out[i:i + chunk] = np.abs(np.fft.rfft(frames[i:i + chunk] * window, axis=-1))
    return out


def mel_spectrogram(clip: AudioClip, log: bool = False) -> MelSpectrogram:
    """128-band Mel magnitude spectrogram; the clip must already be at 22,050 Hz."""
    if clip.sample_rate != SAMPLE_RATE:
        raise UsageError(f"mel_spectrogram expects {SAMPLE_RATE} Hz audio, got {clip.sample_rate}; resample first")
    if len(clip.samples) < N_FFT:
        raise FormatError(f"clip has {len(clip.samples)} samples, fewer than one {N_FFT}-sample window")
    mag = stft_magnitude(clip.samples)
    mel = mag @ mel_filterbank().T
    if log:
        mel = np.log1p(mel)
    return MelSpectrogram(mel.astype(np.float32), Fraction(SAMPLE_RATE, HOP))


def extract(path, log: bool = False) -> MelSpectrogram:
    return mel_spectrogram(resample(load_wav(path)), log=log)


# ---------------------------------------------------------------------------
# feature files


def write_features(m: MelSpectrogram, path) -> None:
    """Layout: ``DCF1``, u32 version, u32 n_mels, u64 n_frames, f64 fps, f32 frame-major data."""
    if m.n_frames == 0:
        raise UsageError("refusing to write a feature file with zero frames")
    header = _FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, m.n_mels, m.n_frames, float(m.fps))
    Path(path).write_bytes(header + np.ascontiguousarray(m.data, dtype="<f4").tobytes())


def read_features(path) -> MelSpectrogram:
    buf = Path(path).read_bytes()
    if len(buf) < _FEATURE_HEADER.size:
        raise FormatError("truncated feature header", offset=len(buf), path=path)
    magic, version, n_mels, n_frames, fps = _FEATURE_HEADER.unpack_from(buf)
    if magic != FEATURE_MAGIC:
        raise FormatError("bad magic, expected DCF1", offset=0, path=path)
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature version {version}", offset=4, path=path)
    if n_frames == 0 or n_mels == 0:
        raise FormatError("feature file declares an empty matrix", offset=8, path=path)
    expected = _FEATURE_HEADER.size + 4 * n_mels * n_frames
    if len(buf) != expected:
        raise FormatError(f"expected {expected} bytes, found {len(buf)}", offset=min(len(buf), expected), path=path)
    data = np.frombuffer(buf, dtype="<f4", offset=_FEATURE_HEADER.size).reshape(n_frames, n_mels)
    frac = Fraction(fps).limit_denominator(1 << 20)
    return MelSpectrogram(data.astype(np.float32), frac if float(frac) == fps else fps)
