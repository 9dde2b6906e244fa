import math
import struct
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chorus_kit.errors import FormatError, UsageError
from chorus_kit.features import (
    HOP,
    SAMPLE_RATE,
    AudioClip,
    MelSpectrogram,
    load_wav,
    mel_filterbank,
    mel_spectrogram,
    read_features,
    resample,
    write_features,
    write_wav,
)


def sine(freq, seconds, rate, amp=0.5):
    t = np.arange(int(round(seconds * rate))) / rate
    return amp * np.sin(2 * np.pi * freq * t)


def slaney_centers_oracle(n_mels, fmax):
    """Band centres from the textbook Slaney formula, written out longhand."""

    def to_mel(f):
        return f / (200 / 3) if f < 1000 else 15 + math.log(f / 1000) * 27 / math.log(6.4)

    def to_hz(m):
        return m * 200 / 3 if m < 15 else 1000 * math.exp((m - 15) * math.log(6.4) / 27)

    top = to_mel(fmax)
    return [to_hz(top * (i + 1) / (n_mels + 1)) for i in range(n_mels)]


# -- wav ------------------------------------------------------------------------


def test_load_16bit_mono(tmp_path):
    path = tmp_path / "a.wav"
    write_wav(path, AudioClip(sine(440, 1.0, 44100, amp=0.5), 44100))
    clip = load_wav(path)
    assert clip.sample_rate == 44100
    assert len(clip.samples) == 44100
    assert abs(np.abs(clip.samples).max() - 0.5) < 1e-3


def test_load_float32(tmp_path):
    path = tmp_path / "f.wav"
    x = sine(220, 0.2, 8000, amp=0.9)
    write_wav(path, AudioClip(x, 8000), float32=True)
    np.testing.assert_allclose(load_wav(path).samples, x.astype(np.float32), rtol=0, atol=0)


def _stereo_pcm16(path, left, right, rate):
    inter = np.empty(2 * len(left), dtype="<i2")
    inter[0::2], inter[1::2] = left, right
    payload = inter.tobytes()
    fmt = struct.pack("<IHHIIHH", 16, 1, 2, rate, rate * 4, 4, 16)
    path.write_bytes(b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE" + b"fmt " + fmt
                     + b"data" + struct.pack("<I", len(payload)) + payload)


def test_stereo_antiphase_downmixes_to_silence(tmp_path):
    path = tmp_path / "s.wav"
    x = (sine(300, 0.1, 8000) * 20000).astype(np.int16)
    _stereo_pcm16(path, x, -x, 8000)
    clip = load_wav(path)
    assert np.all(clip.samples == 0)


def test_truncated_wav_is_format_error(tmp_path):
    path = tmp_path / "t.wav"
    write_wav(path, AudioClip(sine(440, 0.1, 8000), 8000))
    path.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(FormatError) as exc:
        load_wav(path)
    assert exc.value.offset is not None


def test_unsupported_codec(tmp_path):
    path = tmp_path / "u.wav"
    payload = bytes(30)
    fmt = struct.pack("<IHHIIHH", 16, 1, 1, 8000, 24000, 3, 24)
    path.write_bytes(b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE" + b"fmt " + fmt
                     + b"data" + struct.pack("<I", len(payload)) + payload)
    with pytest.raises(FormatError, match="unsupported codec"):
        load_wav(path)


# -- resample -------------------------------------------------------------------


def test_resample_identity():
    clip = AudioClip(np.arange(10.0), SAMPLE_RATE)
    assert resample(clip) is clip


def test_resample_halving_keeps_sine_amplitude():
    out = resample(AudioClip(sine(1000, 1.0, 44100, amp=0.5), 44100), 22050)
    direct = sine(1000, 1.0, 22050, amp=0.5)
    assert abs(len(out.samples) - len(direct)) <= 1
    n = min(len(out.samples), len(direct))
    win = np.hanning(n)
    spec_out = np.abs(np.fft.rfft(out.samples[:n] * win))
    spec_ref = np.abs(np.fft.rfft(direct[:n] * win))
    assert np.argmax(spec_out) == np.argmax(spec_ref)
    assert abs(spec_out.max() / spec_ref.max() - 1) < 0.01


def test_resample_preserves_dc():
    out = resample(AudioClip(np.full(8000, 0.5), 8000), 22050)
    assert abs(len(out.samples) - 22050) <= 1
    assert np.max(np.abs(out.samples - 0.5)) < 1e-3


# -- mel ------------------------------------------------------------------------


def test_frame_count_for_72_seconds():
    m = mel_spectrogram(AudioClip(np.zeros(72 * SAMPLE_RATE), SAMPLE_RATE))
    assert abs(m.n_frames - 3101) <= 1
    assert m.n_frames == 1 + (72 * SAMPLE_RATE) // HOP
    assert m.n_mels == 128


def test_silence_gives_zeros():
    m = mel_spectrogram(AudioClip(np.zeros(SAMPLE_RATE), SAMPLE_RATE))
    assert not m.data.any()


def test_sine_peaks_in_nearest_band():
    m = mel_spectrogram(AudioClip(sine(440, 2.0, SAMPLE_RATE), SAMPLE_RATE))
    centers = np.array(slaney_centers_oracle(128, SAMPLE_RATE / 2))
    nearest = int(np.argmin(np.abs(centers - 440)))
    interior = m.data[4:-4]
    assert set(np.argmax(interior, axis=1).tolist()) == {nearest}


def test_doubling_amplitude_doubles_mel():
    x = np.random.default_rng(0).standard_normal(SAMPLE_RATE) * 0.1
    a = mel_spectrogram(AudioClip(x, SAMPLE_RATE)).data.astype(np.float64)
    b = mel_spectrogram(AudioClip(2 * x, SAMPLE_RATE)).data.astype(np.float64)
    np.testing.assert_allclose(b, 2 * a, rtol=1e-5)


def test_filterbank_covers_interior_bins():
    fb = mel_filterbank()
    assert (fb >= 0).all()
    centers = slaney_centers_oracle(128, SAMPLE_RATE / 2)
    bins = np.linspace(0, SAMPLE_RATE / 2, fb.shape[1])
    inside = (bins >= centers[0]) & (bins <= centers[-1])
    assert (fb[:, inside].sum(axis=0) > 0).all()


def test_fps_is_exact_rational():
    m = mel_spectrogram(AudioClip(np.zeros(4096), SAMPLE_RATE))
    assert m.fps == Fraction(22050, 512)
    assert m.fps * HOP == SAMPLE_RATE


def test_too_short_clip():
    with pytest.raises(FormatError):
        mel_spectrogram(AudioClip(np.zeros(100), SAMPLE_RATE))


def test_wrong_rate_rejected():
    with pytest.raises(UsageError):
        mel_spectrogram(AudioClip(np.zeros(5000), 44100))


# -- feature files ----------------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(frames=st.integers(1, 50), seed=st.integers(0, 2**16))
def test_feature_round_trip_is_bit_exact(tmp_path_factory, frames, seed):
    path = tmp_path_factory.mktemp("f") / "x.dcf"
    data = np.random.default_rng(seed).random((frames, 128), dtype=np.float32)
    write_features(MelSpectrogram(data, Fraction(22050, 512)), path)
    back = read_features(path)
    assert back.data.tobytes() == data.tobytes()
    assert back.fps == Fraction(22050, 512)
    write_features(back, path.with_suffix(".again"))
    assert path.read_bytes() == path.with_suffix(".again").read_bytes()


def test_feature_header_layout(tmp_path):
    path = tmp_path / "x.dcf"
    write_features(MelSpectrogram(np.ones((2, 3)), 43), path)
    raw = path.read_bytes()
    magic, version, n_mels, n_frames, fps = struct.unpack_from("<4sIIQd", raw)
    assert (magic, version, n_mels, n_frames, fps) == (b"DCF1", 1, 3, 2, 43.0)
    assert len(raw) == 28 + 4 * 6


def test_feature_bad_magic(tmp_path):
    path = tmp_path / "x.dcf"
    write_features(MelSpectrogram(np.ones((2, 128)), 43), path)
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(FormatError):
        read_features(path)


def test_zero_frames_rejected_on_write(tmp_path):
    with pytest.raises(UsageError):
        write_features(MelSpectrogram(np.zeros((0, 128)), 43), tmp_path / "x.dcf")
