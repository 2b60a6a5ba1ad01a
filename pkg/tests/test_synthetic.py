import numpy as np
import pytest

from svcforge.audio_io import Waveform
from svcforge.data import read_manifest
from svcforge.pitch import extract_f0
from svcforge.synthetic import harmonic_tone, make_corpus, singing_like, speech_like


def test_harmonic_tone_pitch():
    x = harmonic_tone(np.full(24000, 180.0), rng=np.random.default_rng(0))
    c = extract_f0(Waveform(x, 24000))
    assert np.median(c.f0_hz[c.voiced]) == pytest.approx(180.0, rel=0.01)
    assert np.max(np.abs(x)) <= 1


def test_voices_differ_in_pitch():
    rng = np.random.default_rng(0)
    lo = extract_f0(speech_like(rng, "low"))
    hi = extract_f0(speech_like(rng, "high"))
    assert np.median(lo.f0_hz[lo.voiced]) < np.median(hi.f0_hz[hi.voiced])
    s = singing_like(np.random.default_rng(1), "mid", seconds=0.5)
    assert len(s) == 12000


def test_make_corpus_layout_and_seed(tmp_path):
    m = make_corpus(tmp_path / "a", "speech", {"x": "low", "y": "high"}, 2, seconds=0.3, seed=4)
    entries = read_manifest(m)
    assert [e.speaker for e in entries] == ["x", "x", "y", "y"]
    assert all(e.wav.exists() for e in entries)
    again = make_corpus(tmp_path / "b", "speech", {"x": "low", "y": "high"}, 2, seconds=0.3, seed=4)
    assert read_manifest(again)[0].wav.read_bytes() == entries[0].wav.read_bytes()
    with pytest.raises(ValueError):
        make_corpus(tmp_path / "c", "opera", {"x": "low"}, 1)
