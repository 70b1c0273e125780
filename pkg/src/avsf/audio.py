"""Acoustic features: stacked log mel filterbank energies at 25 Hz.

The feature pipeline is fixed to match what the audio-visual encoder was
built for: 26 mel-band log energies per 25 ms window with a 10 ms hop at
16 kHz, then every 4 consecutive frames stacked (stride 4) into one 104-dim
vector, so one feature frame lines up with one 25 fps video frame.

Framing keeps only complete windows: a signal of S samples yields
``(S - 400) // 160 + 1`` analysis frames, and trailing frames that do not
fill a stack of 4 are dropped.
"""

from __future__ import annotations

import math
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from shutil import which

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import DecodeFailure, EmptyAudio, UnsupportedSampleRate

SAMPLE_RATE = 16_000
WINDOW_SAMPLES = 400        # 25 ms at 16 kHz
HOP_SAMPLES = 160           # 10 ms at 16 kHz
N_MELS = 26
STACK = 4
FEATURE_DIM = N_MELS * STACK
FEATURE_RATE = 25           # stacked frames per second
NFFT = 512
PREEMPHASIS = 0.97
LOG_FLOOR = 1e-10


@dataclass
class AudioFeatureSequence:
    """Stacked log filterbank frames, shape (frames, 104), 25 frames/s."""

    features: np.ndarray
    rate: int = FEATURE_RATE

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float32)
        if feats.ndim != 2 or feats.shape[1] != FEATURE_DIM:
            raise ValueError(f"features must be (frames, {FEATURE_DIM}), got {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain non-finite values")
        self.features = feats

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]


def hz_to_mel(hz: np.ndarray | float) -> np.ndarray | float:
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel: np.ndarray | float) -> np.ndarray | float:
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_filters: int = N_MELS, nfft: int = NFFT,
                   sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular mel filters on FFT bins, shape (n_filters, nfft//2 + 1)."""
    low_mel = hz_to_mel(0.0)
    high_mel = hz_to_mel(sample_rate / 2.0)
    mel_points = np.linspace(low_mel, high_mel, n_filters + 2)
    bins = np.floor((nfft + 1) * mel_to_hz(mel_points) / sample_rate).astype(int)

    bank = np.zeros((n_filters, nfft // 2 + 1), dtype=np.float64)
    for j in range(n_filters):
        for i in range(bins[j], bins[j + 1]):
            bank[j, i] = (i - bins[j]) / (bins[j + 1] - bins[j])
        for i in range(bins[j + 1], bins[j + 2]):
            bank[j, i] = (bins[j + 2] - i) / (bins[j + 2] - bins[j + 1])
    return bank


def num_analysis_frames(n_samples: int) -> int:
    """Complete 25 ms windows at a 10 ms hop; 0 if shorter than one window."""
    if n_samples < WINDOW_SAMPLES:
        return 0
    return (n_samples - WINDOW_SAMPLES) // HOP_SAMPLES + 1


def compute_logfbank(waveform: np.ndarray, sample_rate: int) -> AudioFeatureSequence:
    """Turn a mono waveform into stacked log mel filterbank features.

    The waveform is resampled to 16 kHz if needed (rates below 16 kHz are
    rejected), pre-emphasized, framed without padding, and reduced to 26
    log mel energies per frame with the log floored at 1e-10. Frames are
    stacked 4-at-a-time into 104-dim vectors at 25 Hz.

    Raises:
        UnsupportedSampleRate: sample_rate < 16 kHz.
        EmptyAudio: fewer samples than one 25 ms window (after resampling).
    """
    wav = np.asarray(waveform, dtype=np.float64).reshape(-1)
    if sample_rate < SAMPLE_RATE:
        raise UnsupportedSampleRate(sample_rate)
    if sample_rate != SAMPLE_RATE:
        g = math.gcd(int(sample_rate), SAMPLE_RATE)
        wav = resample_poly(wav, SAMPLE_RATE // g, int(sample_rate) // g)

    n_frames = num_analysis_frames(wav.shape[0])
    if n_frames == 0:
        raise EmptyAudio(f"{wav.shape[0]} samples is shorter than one {WINDOW_SAMPLES}-sample window")

    emphasized = np.empty_like(wav)
    emphasized[0] = wav[0]
    emphasized[1:] = wav[1:] - PREEMPHASIS * wav[:-1]

    idx = np.arange(WINDOW_SAMPLES)[None, :] + HOP_SAMPLES * np.arange(n_frames)[:, None]
    frames = emphasized[idx]

    power = (1.0 / NFFT) * np.abs(np.fft.rfft(frames, NFFT, axis=1)) ** 2
    energies = power @ mel_filterbank().T
    log_energies = np.log(np.maximum(energies, LOG_FLOOR))

    n_stacked = n_frames // STACK
    stacked = log_energies[: n_stacked * STACK].reshape(n_stacked, FEATURE_DIM)
    return AudioFeatureSequence(features=stacked.astype(np.float32))


def load_waveform(path: str | Path) -> tuple[np.ndarray, int]:
    """Read an audio file to a mono float waveform in [-1, 1] plus its rate.

    PCM .wav files are read directly. For any other container the audio
    track is extracted with ffmpeg when available; otherwise DecodeFailure.
    """
    path = Path(path)
    if path.suffix.lower() == ".wav":
        return _read_wav(path)
    return _extract_with_ffmpeg(path)


def _read_wav(path: Path) -> tuple[np.ndarray, int]:
    try:
        rate, data = wavfile.read(str(path))
    except Exception as exc:
        raise DecodeFailure(f"cannot read wav file {path}: {exc}") from exc
    data = np.asarray(data)
    if np.issubdtype(data.dtype, np.integer):
        scale = float(np.iinfo(data.dtype).max)
        data = data.astype(np.float64) / scale
    else:
        data = data.astype(np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    return data, int(rate)


def _extract_with_ffmpeg(path: Path) -> tuple[np.ndarray, int]:
    if which("ffmpeg") is None:
        raise DecodeFailure(
            f"{path}: not a .wav file and ffmpeg is not on PATH; "
            "extract the audio track to PCM wav first"
        )
    with tempfile.NamedTemporaryFile(suffix=".wav", delete=False) as tmp:
        tmp_path = Path(tmp.name)
    try:
        proc = subprocess.run(
            ["ffmpeg", "-y", "-v", "error", "-i", str(path), "-ac", "1",
             "-ar", str(SAMPLE_RATE), "-vn", "-f", "wav", str(tmp_path)],
            capture_output=True, text=True,
        )
        if proc.returncode != 0:
            raise DecodeFailure(f"ffmpeg failed on {path}: {proc.stderr.strip()}")
        return _read_wav(tmp_path)
    finally:
        tmp_path.unlink(missing_ok=True)


def logfbank_from_file(path: str | Path) -> AudioFeatureSequence:
    """Convenience: load an audio file and compute its feature sequence."""
    wav, rate = load_waveform(path)
    return compute_logfbank(wav, rate)
