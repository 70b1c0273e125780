"""Filterbank feature tests against a from-the-formula reference implementation."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from avsf.audio import (
    FEATURE_DIM,
    HOP_SAMPLES,
    LOG_FLOOR,
    N_MELS,
    NFFT,
    SAMPLE_RATE,
    STACK,
    WINDOW_SAMPLES,
    AudioFeatureSequence,
    compute_logfbank,
    hz_to_mel,
    load_waveform,
    logfbank_from_file,
    mel_filterbank,
    mel_to_hz,
    num_analysis_frames,
)
from avsf.errors import DecodeFailure, EmptyAudio, UnsupportedSampleRate


def reference_logfbank(wav: np.ndarray) -> np.ndarray:
    """Loop-based reference: preemphasis, framing, mel energies, stacking.

    Written straight from the definitions, sharing no code with the
    library path beyond numpy's FFT.
    """
    wav = np.asarray(wav, dtype=np.float64)
    emph = np.concatenate([[wav[0]], wav[1:] - 0.97 * wav[:-1]])
    n_frames = (len(wav) - 400) // 160 + 1

    def to_mel(hz):
        return 2595.0 * math.log10(1.0 + hz / 700.0)

    def from_mel(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    lo, hi = to_mel(0.0), to_mel(8000.0)
    points = [lo + i * (hi - lo) / 27.0 for i in range(28)]
    bins = [int(math.floor(513.0 * from_mel(m) / 16000.0)) for m in points]

    rows = []
    for f in range(n_frames):
        seg = emph[f * 160 : f * 160 + 400]
        power = np.abs(np.fft.rfft(seg, 512)) ** 2 / 512.0
        feats = []
        for j in range(26):
            e = 0.0
            for i in range(bins[j], bins[j + 1]):
                e += power[i] * (i - bins[j]) / (bins[j + 1] - bins[j])
            for i in range(bins[j + 1], bins[j + 2]):
                e += power[i] * (bins[j + 2] - i) / (bins[j + 2] - bins[j + 1])
            feats.append(math.log(max(e, 1e-10)))
        rows.append(feats)

    rows = np.asarray(rows)
    n_stacked = n_frames // 4
    return rows[: n_stacked * 4].reshape(n_stacked, 104)


def test_matches_reference_on_random_signal():
    rng = np.random.default_rng(0)
    wav = rng.normal(0.0, 0.2, size=4321)
    got = compute_logfbank(wav, SAMPLE_RATE).features
    want = reference_logfbank(wav)
    assert got.shape == want.shape
    np.testing.assert_allclose(got, want, atol=1e-4, rtol=1e-5)


def test_matches_reference_on_tone():
    t = np.arange(SAMPLE_RATE) / SAMPLE_RATE
    wav = 0.5 * np.sin(2 * np.pi * 440.0 * t)
    got = compute_logfbank(wav, SAMPLE_RATE).features
    want = reference_logfbank(wav)
    np.testing.assert_allclose(got, want, atol=1e-4, rtol=1e-5)


def test_silence_hits_the_log_floor():
    feats = compute_logfbank(np.zeros(1600), SAMPLE_RATE).features
    assert np.allclose(feats, np.float32(np.log(LOG_FLOOR)))


def test_frame_count_exact():
    # 1600 samples: (1600-400)//160+1 = 8 analysis frames -> 2 stacked
    feats = compute_logfbank(np.zeros(1600), SAMPLE_RATE)
    assert feats.features.shape == (2, FEATURE_DIM)


def test_trailing_partial_stack_dropped():
    # 7 analysis frames -> 1 stacked frame, 3 frames discarded
    n = WINDOW_SAMPLES + 6 * HOP_SAMPLES
    assert num_analysis_frames(n) == 7
    feats = compute_logfbank(np.zeros(n), SAMPLE_RATE)
    assert feats.num_frames == 1


@given(st.integers(min_value=0, max_value=100_000))
@settings(max_examples=200, deadline=None)
def test_analysis_frame_law(n):
    expected = 0 if n < WINDOW_SAMPLES else (n - WINDOW_SAMPLES) // HOP_SAMPLES + 1
    assert num_analysis_frames(n) == expected


@given(st.integers(min_value=WINDOW_SAMPLES, max_value=40_000))
@settings(max_examples=40, deadline=None)
def test_stacked_frame_law(n):
    feats = compute_logfbank(np.zeros(n), SAMPLE_RATE)
    assert feats.num_frames == num_analysis_frames(n) // STACK


def test_too_short_signal_rejected():
    with pytest.raises(EmptyAudio):
        compute_logfbank(np.zeros(WINDOW_SAMPLES - 1), SAMPLE_RATE)


def test_low_sample_rate_rejected():
    with pytest.raises(UnsupportedSampleRate):
        compute_logfbank(np.zeros(8000), 8000)


def test_resampled_input_keeps_duration():
    rng = np.random.default_rng(1)
    wav48 = rng.normal(0.0, 0.1, size=48_000)  # one second at 48 kHz
    feats = compute_logfbank(wav48, 48_000)
    # one second -> 16000 samples -> 98 analysis frames -> 24 stacked
    assert feats.num_frames == num_analysis_frames(16_000) // STACK


def test_tone_concentrates_in_one_band():
    t = np.arange(SAMPLE_RATE) / SAMPLE_RATE
    wav = 0.5 * np.sin(2 * np.pi * 440.0 * t)
    feats = compute_logfbank(wav, SAMPLE_RATE).features
    per_band = feats.reshape(feats.shape[0] * STACK, N_MELS)
    peaks = per_band.argmax(axis=1)
    # the winning mel band is the same in every analysis frame
    assert len(set(peaks.tolist())) == 1
    # and that band's filter covers the 440 Hz FFT bin
    bank = mel_filterbank()
    bin_440 = round(440.0 * NFFT / SAMPLE_RATE)
    assert bank[peaks[0], bin_440] > 0


def test_mel_scale_round_trip():
    hz = np.array([0.0, 120.0, 440.0, 3000.0, 8000.0])
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(hz)), hz, atol=1e-9)
    assert math.isclose(float(hz_to_mel(700.0)), 2595.0 * math.log10(2.0))


def test_mel_filterbank_shape_and_support():
    bank = mel_filterbank()
    assert bank.shape == (N_MELS, NFFT // 2 + 1)
    assert bank.min() >= 0.0 and bank.max() <= 1.0
    assert (bank.sum(axis=1) > 0).all()


def test_feature_sequence_validation():
    with pytest.raises(ValueError, match="104"):
        AudioFeatureSequence(features=np.zeros((5, 26)))
    bad = np.zeros((3, FEATURE_DIM))
    bad[1, 2] = np.nan
    with pytest.raises(ValueError, match="finite"):
        AudioFeatureSequence(features=bad)


def test_wav_round_trip(tmp_path):
    t = np.arange(8000) / SAMPLE_RATE
    wav = 0.25 * np.sin(2 * np.pi * 200.0 * t)
    path = tmp_path / "tone.wav"
    wavfile.write(str(path), SAMPLE_RATE, (wav * 32767).astype(np.int16))
    loaded, rate = load_waveform(path)
    assert rate == SAMPLE_RATE
    np.testing.assert_allclose(loaded, wav, atol=1e-3)
    feats = logfbank_from_file(path)
    assert feats.features.shape[1] == FEATURE_DIM


def test_stereo_wav_downmixed(tmp_path):
    stereo = np.zeros((4000, 2), dtype=np.int16)
    stereo[:, 0] = 10_000
    path = tmp_path / "st.wav"
    wavfile.write(str(path), SAMPLE_RATE, stereo)
    mono, _ = load_waveform(path)
    assert mono.ndim == 1
    np.testing.assert_allclose(mono, 10_000 / 32767 / 2, atol=1e-6)


def test_unreadable_wav_raises(tmp_path):
    path = tmp_path / "junk.wav"
    path.write_bytes(b"not a wav")
    with pytest.raises(DecodeFailure):
        load_waveform(path)
