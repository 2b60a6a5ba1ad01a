import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import sine
from svcforge.audio_io import Waveform
from svcforge.errors import ContractError, DegenerateStatsError, EmptyInputError, NoVoicedFramesError
from svcforge.pitch import (F0Contour, F0Stats, QuantizedF0, extract_f0, f0_statistics, quantize_f0, read_f0,
                            register_f0_extractor, shift_f0, upsample_f0, write_f0)

voiced_hz = st.floats(50.0, 1100.0, allow_nan=False)


def test_sine_220_tracked():
    c = extract_f0(sine(220.0))
    assert len(c) == 101
    assert np.all(c.voiced[2:-2])
    assert abs(np.median(c.f0_hz[c.voiced]) - 220.0) < 2.0


@pytest.mark.parametrize("freq", [60.0, 110.0, 330.0, 700.0, 1000.0])
def test_sine_range(freq):
    c = extract_f0(sine(freq))
    assert abs(np.median(c.f0_hz[c.voiced]) / freq - 1) < 0.01


def test_silence_unvoiced():
    c = extract_f0(Waveform(np.zeros(24000), 24000))
    assert not c.voiced.any()
    assert np.all(c.f0_hz == 0)


def test_voicing_boundary():
    x = np.concatenate([sine(220.0).samples, np.zeros(24000, dtype=np.float32)])
    c = extract_f0(Waveform(x, 24000))
    last_voiced = np.flatnonzero(c.voiced).max()
    assert abs(last_voiced - 100) <= 2
    assert not c.voiced[103:].any()


def test_too_short():
    with pytest.raises(EmptyInputError):
        extract_f0(Waveform(np.zeros(100), 24000))


def test_shifted_sine_tracks_ratio():
    base = np.median(extract_f0(sine(200.0)).f0_hz[2:-2])
    for r in (0.5, 0.8, 1.3, 2.0):
        c = extract_f0(sine(200.0 * r))
        assert abs(np.median(c.f0_hz[c.voiced]) / base / r - 1) < 0.02


def test_custom_extractor_hook():
    calls = []

    def fake(w, fmin, fmax, hop_length, **kw):
        calls.append(hop_length)
        return F0Contour(np.full(len(w) // hop_length + 1, 123.0), hop_length / w.sample_rate)

    register_f0_extractor("fake", fake)
    c = extract_f0(sine(220.0), extractor="fake")
    assert calls == [240] and np.all(c.f0_hz == 123.0)


def test_stats_closed_forms():
    s = f0_statistics(F0Contour(np.full(10, 200.0), 0.01))
    assert s.mean_logf0 == pytest.approx(math.log(200)) and s.std_logf0 == pytest.approx(0, abs=1e-12)
    s = f0_statistics(F0Contour(np.array([100.0, 400.0]), 0.01))
    assert s.mean_logf0 == pytest.approx(math.log(200)) and s.std_logf0 == pytest.approx(math.log(2))
    gaps = f0_statistics(F0Contour(np.array([0, 100.0, 0, 0, 400.0, 0]), 0.01))
    assert gaps.mean_logf0 == s.mean_logf0 and gaps.std_logf0 == s.std_logf0
    with pytest.raises(NoVoicedFramesError):
        f0_statistics(F0Contour(np.zeros(5), 0.01))


def test_pooled_stats_equal_concatenation():
    a = F0Contour(np.array([110.0, 0, 120.0, 130.0]), 0.01)
    b = F0Contour(np.array([0, 300.0, 310.0]), 0.01)
    pooled = f0_statistics([a, b])
    joined = f0_statistics(F0Contour(np.concatenate([a.f0_hz, b.f0_hz]), 0.01))
    assert pooled == joined


def test_shift_examples():
    c = F0Contour(np.array([200.0, 0.0, 200.0]), 0.01)
    src = f0_statistics(c)
    out = shift_f0(c, src, F0Stats(math.log(300), 0.0))
    assert np.allclose(out.f0_hz, [300.0, 0.0, 300.0])
    same = F0Contour(np.array([150.0, 0, 220.0, 180.0]), 0.01)
    s = f0_statistics(same)
    assert np.allclose(shift_f0(same, s, s).f0_hz, same.f0_hz)


def test_degenerate_shift():
    c = F0Contour(np.full(4, 200.0), 0.01)
    with pytest.raises(DegenerateStatsError):
        shift_f0(c, f0_statistics(c), F0Stats(5.5, 0.2))
    out = shift_f0(c, f0_statistics(c), F0Stats(5.5, 0.2), fallback=True)
    assert out.meta["shift_fallback"] == "mean_only"
    assert np.allclose(np.log(out.f0_hz), 5.5)


def test_tracker_jitter_counts_as_flat():
    c = F0Contour(np.array([200.0, 200.1, 199.9, 200.0]), 0.01)
    assert 0 < f0_statistics(c).std_logf0 < 1e-3
    with pytest.raises(DegenerateStatsError):
        shift_f0(c, f0_statistics(c), F0Stats(5.5, 0.2))
    loose = shift_f0(c, f0_statistics(c), F0Stats(5.5, 0.2), min_std=0.0)
    assert f0_statistics(loose).std_logf0 == pytest.approx(0.2)


def test_shift_clamps_and_mean_mode():
    c = F0Contour(np.array([100.0, 200.0]), 0.01)
    s = f0_statistics(c)
    out = shift_f0(c, s, F0Stats(math.log(2000), s.std_logf0), fmin=50, fmax=1100)
    assert out.f0_hz.max() == 1100
    m = shift_f0(c, s, F0Stats(s.mean_logf0 + 1, 5.0), mode="mean")
    assert np.allclose(m.f0_hz, c.f0_hz * math.e)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(80, 600), min_size=3, max_size=40), st.floats(4.5, 6.5), st.floats(0.01, 0.5))
def test_shift_matches_target_stats(values, t_mean, t_std):
    c = F0Contour(np.array(values), 0.01)
    src = f0_statistics(c)
    if src.std_logf0 <= 1e-3:
        return
    out = shift_f0(c, src, F0Stats(t_mean, t_std), fmin=1e-3, fmax=1e9)
    s = f0_statistics(out)
    assert abs(s.mean_logf0 - t_mean) < 1e-6
    assert abs(s.std_logf0 - t_std) < 1e-6


def test_quantize_endpoints_and_oracle():
    c = F0Contour(np.array([0.0, 50.0, 1100.0, 234.5, 2000.0]), 0.01)
    q = quantize_f0(c, 256, 50, 1100)
    expected = 1 + math.floor(255 * (math.log(234.5) - math.log(50)) / (math.log(1100) - math.log(50)))
    assert list(q.bins) == [0, 1, 255, expected, 255]


@settings(max_examples=100, deadline=None)
@given(voiced_hz, voiced_hz)
def test_quantize_monotone(a, b):
    lo, hi = sorted((a, b))
    q = quantize_f0(F0Contour(np.array([lo, hi]), 0.01))
    assert 1 <= q.bins[0] <= q.bins[1] <= 255


@settings(max_examples=30, deadline=None)
@given(st.lists(st.one_of(st.just(0.0), voiced_hz), min_size=2, max_size=30))
def test_quantize_shift_identity(values):
    c = F0Contour(np.array(values), 0.01)
    if not c.voiced.any():
        return
    s = f0_statistics(c)
    assert np.array_equal(quantize_f0(shift_f0(c, s, s)).bins, quantize_f0(c).bins)


def test_quantized_range_checked():
    with pytest.raises(ContractError):
        QuantizedF0(np.array([0, 256]), 256)


def test_upsample_examples():
    assert np.all(upsample_f0(F0Contour(np.full(3, 150.0), 0.01), 4) == 150.0)
    ramp = upsample_f0(F0Contour(np.array([100.0, 200.0]), 0.01), 4)
    assert np.allclose(ramp, [100, 125, 150, 175, 200, 200, 200, 200])
    gap = upsample_f0(F0Contour(np.array([100.0, 0.0, 100.0]), 0.01), 5)
    assert np.all(gap[5:10] == 0) and len(gap) == 15


def test_sidecar_roundtrip(tmp_path):
    c = F0Contour(np.array([0.0, 110.5, 220.25]), 0.01)
    write_f0(c, tmp_path / "a.f0")
    back = read_f0(tmp_path / "a.f0")
    assert np.array_equal(back.f0_hz, c.f0_hz) and back.hop_seconds == pytest.approx(0.01)
    raw = (tmp_path / "a.f0").read_bytes()
    assert raw[:4] == b"F0C1" and len(raw) == 12 + 3 * 4
    (tmp_path / "bad.f0").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ContractError):
        read_f0(tmp_path / "bad.f0")
