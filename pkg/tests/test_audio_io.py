import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from conftest import sine
from svcforge.audio_io import (LOG_FLOOR, Waveform, linear_spectrogram, load_wav, mel_spectrogram, num_frames,
                               resample, save_wav)
from svcforge.errors import AudioIOError, ConfigError, ContractError, EmptyInputError


def test_stereo_48k_is_downmixed_and_resampled(tmp_path):
    t = np.arange(48000) / 48000
    left, right = 0.4 * np.sin(2 * np.pi * 300 * t), 0.2 * np.sin(2 * np.pi * 300 * t)
    pcm = (np.stack([left, right], 1) * 32767).astype(np.int16)
    wavfile.write(tmp_path / "s.wav", 48000, pcm)
    w = load_wav(tmp_path / "s.wav", 24000)
    assert w.sample_rate == 24000
    assert abs(len(w) - 24000) <= 1
    assert np.max(np.abs(w.samples[100:-100])) == pytest.approx(0.3, abs=5e-3)


def test_native_rate_is_bitwise_identity(tmp_path):
    x = (np.random.default_rng(0).uniform(-0.5, 0.5, 2400)).astype(np.float32)
    wavfile.write(tmp_path / "f.wav", 24000, x)
    w = load_wav(tmp_path / "f.wav", 24000)
    assert np.array_equal(w.samples, x)


def test_load_errors(tmp_path):
    with pytest.raises(AudioIOError):
        load_wav(tmp_path / "missing.wav")
    (tmp_path / "junk.wav").write_bytes(b"not a wav")
    with pytest.raises(AudioIOError):
        load_wav(tmp_path / "junk.wav")
    wavfile.write(tmp_path / "empty.wav", 24000, np.zeros(0, dtype=np.int16))
    with pytest.raises(EmptyInputError):
        load_wav(tmp_path / "empty.wav")


def test_float_overs_are_clipped_on_read(tmp_path):
    wavfile.write(tmp_path / "hot.wav", 24000, np.array([0.5, 1.7, -2.0], dtype=np.float32))
    w = load_wav(tmp_path / "hot.wav")
    assert np.max(np.abs(w.samples)) <= 1.0


def test_save_writes_16bit_mono(tmp_path):
    save_wav(Waveform(np.array([0.0, 0.5, 2.0, -2.0]), 24000), tmp_path / "o.wav")
    rate, data = wavfile.read(tmp_path / "o.wav")
    assert rate == 24000 and data.dtype == np.int16 and data.ndim == 1
    assert list(data) == [0, 16384, 32767, -32767]


def test_waveform_rejects_nonfinite():
    with pytest.raises(ContractError):
        Waveform(np.array([0.0, np.nan]), 24000)


def test_sine_peaks_at_its_bin():
    spec = linear_spectrogram(sine(440.0))
    freqs = np.arange(spec.frames.shape[1]) * 24000 / 1024
    peak = freqs[np.argmax(spec.frames[50])]
    assert abs(peak - 440.0) <= 24000 / 1024 / 2


def test_silence_spectra():
    w = Waveform(np.zeros(24000), 24000)
    assert np.all(linear_spectrogram(w).frames == 0)
    mel = mel_spectrogram(w).frames
    assert np.allclose(mel, np.log(LOG_FLOOR))


def test_impulse_frame_matches_direct_dft():
    x = np.zeros(24000)
    x[12000] = 1.0
    spec = linear_spectrogram(Waveform(x, 24000)).frames
    # frame 50 is centred on the impulse; the Hann window is 1 there, so the DFT magnitude is flat 1
    assert np.allclose(spec[50], 1.0, atol=1e-5)
    # a frame whose window covers the impulse at offset k has magnitude w[k] in every bin
    k = 12000 - 49 * 240 + 512
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(1024) / 1024)
    assert np.allclose(spec[49], window[k], atol=1e-5)


def test_frame_count_formula():
    assert num_frames(24000, 240) == 101
    assert linear_spectrogram(Waveform(np.zeros(24000), 24000)).frames.shape[0] == 101


def test_mel_shapes_and_determinism():
    noise = Waveform(np.random.default_rng(1).standard_normal(12000) * 0.1, 24000)
    a, b = mel_spectrogram(noise), mel_spectrogram(noise)
    assert a.frames.shape == (linear_spectrogram(noise).frames.shape[0], 80)
    assert np.array_equal(a.frames, b.frames)


def test_config_errors():
    with pytest.raises(ConfigError):
        linear_spectrogram(sine(100.0), hop=2048, win=1024)
    with pytest.raises(ConfigError):
        mel_spectrogram(sine(100.0), fmax=13000)
    with pytest.raises(EmptyInputError):
        linear_spectrogram(Waveform(np.zeros(100), 24000))


@settings(max_examples=15, deadline=None)
@given(st.lists(st.tuples(st.floats(50, 9000), st.floats(0.05, 0.3)), min_size=1, max_size=4))
def test_resample_roundtrip(partials):
    t = np.arange(4800) / 24000
    x = sum(a * np.sin(2 * np.pi * f * t) for f, a in partials)
    w = Waveform(x, 24000)
    back = resample(resample(w, 48000), 24000)
    err = np.linalg.norm(back.samples - w.samples) / np.linalg.norm(w.samples)
    assert err < 1e-2


@settings(max_examples=20, deadline=None)
@given(st.integers(1024, 20000), st.sampled_from([120, 240, 256]))
def test_linear_and_mel_share_frames(n, hop):
    w = Waveform(np.random.default_rng(n).standard_normal(n) * 0.1, 24000)
    lin = linear_spectrogram(w, hop=hop)
    mel = mel_spectrogram(w, hop=hop)
    assert lin.frames.shape[0] == mel.frames.shape[0] == num_frames(n, hop)
