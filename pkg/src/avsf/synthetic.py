"""Synthetic audio-visual clips with a controllable sync signal.

A scalar "speech activity" latent drives both the mouth opening in the
rendered frames and the loudness of a tone in the audio track.  Real
clips use one shared latent for both streams; fake clips draw an
independent latent for the audio, so the streams are decorrelated by
construction while each stream's marginal statistics stay identical.
That gives tests and demos a dataset whose only real/fake difference is
audio-visual synchrony.

Two product lines:

* in-memory :class:`~avsf.training.ClipExample` objects (lips rendered directly at
  crop resolution, audio passed through the real filterbank front-end) —
  fast enough for training runs in tests;
* on-disk datasets (``.npy`` frame stacks / ``.avi`` + ``.wav`` + JSONL
  manifest) exercising the full decode-crop-align path and the CLI.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np
from scipy.io import wavfile

from .align import AlignedPair, align_pair
from .audio import SAMPLE_RATE, compute_logfbank
from .lips import LIP_SIZE, LipSequence
from .manifest import Label, Manipulation, MediaClip, Split, save_manifest
from .training import ClipExample

SAMPLES_PER_FRAME = SAMPLE_RATE // 25  # 640
_FAKE_MANIPS = (Manipulation.WAV2LIP, Manipulation.RTVC, Manipulation.FSGAN_WAV2LIP)


def latent_signal(rng: np.random.Generator, frames: int) -> np.ndarray:
    """Speech-activity curve in (0.1, 0.9) at 25 Hz: random sinusoids
    spanning slow drifts up to syllable-rate wiggles, squashed toward
    on/off bursts.

    Both shaping steps matter.  The fast components give every clip
    enough independent time structure that two separately drawn curves
    decorrelate even over short clips; the sigmoid mimics how speech
    alternates bursts and pauses, parking most frames near one of two
    levels so a mismatched pair disagrees visibly frame by frame.
    """
    t = np.arange(frames) / 25.0
    signal = np.zeros(frames)
    for lo_hz, hi_hz in ((0.4, 3.0), (0.4, 3.0), (3.0, 8.0), (6.0, 12.0)):
        freq = rng.uniform(lo_hz, hi_hz)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        signal += rng.uniform(0.5, 1.0) * np.sin(2.0 * np.pi * freq * t + phase)
    spread = signal.std()
    if spread < 1e-9:
        return np.full(frames, 0.5)
    return 0.1 + 0.8 / (1.0 + np.exp(-4.0 * signal / spread))


def mouth_crop_frames(latent: np.ndarray) -> np.ndarray:
    """Render mouth crops directly at ``(1, F, 96, 96)``: a dark mouth
    rectangle on a uniform skin-tone background, height tracking the latent."""
    frames = latent.shape[0]
    out = np.full((frames, LIP_SIZE, LIP_SIZE), 0.55, dtype=np.float32)
    cx = LIP_SIZE // 2
    cy = LIP_SIZE // 2
    half_w = 22
    for i, a in enumerate(latent):
        half_h = max(1, int(round(2 + a * 26)))
        out[i, cy - half_h : cy + half_h, cx - half_w : cx + half_w] = 0.05
    return out[None, ...]


def tone_waveform(latent: np.ndarray, tone_hz: float = 440.0) -> np.ndarray:
    """16 kHz amplitude-modulated tone whose loudness tracks the latent.

    The tail is padded so the filterbank front-end yields exactly one
    stacked feature frame per 25 Hz latent sample.
    """
    frames = latent.shape[0]
    envelope = np.repeat(latent, SAMPLES_PER_FRAME)
    envelope = np.concatenate([envelope, np.full(240, envelope[-1])])
    t = np.arange(envelope.shape[0]) / SAMPLE_RATE
    return (0.6 * envelope * np.sin(2.0 * np.pi * tone_hz * t)).astype(np.float64)


def synthetic_pair(rng: np.random.Generator, fake: bool, frames: int = 50,
                   clip_id: str = "") -> AlignedPair:
    """Aligned lips/audio pair; fake pairs get an independent audio latent."""
    video_latent = latent_signal(rng, frames)
    audio_latent = latent_signal(rng, frames) if fake else video_latent
    lips = LipSequence(frames=mouth_crop_frames(video_latent))
    audio = compute_logfbank(tone_waveform(audio_latent), SAMPLE_RATE)
    return align_pair(lips, audio, clip_id=clip_id)


def _make_clip_row(index: int, fake: bool, subject_id: str, split: Split,
                   video_name: str = "", audio_name: str = "") -> MediaClip:
    clip_id = f"c{index:04d}"
    return MediaClip(
        clip_id=clip_id,
        video_path=Path(video_name or f"{clip_id}.npy"),
        audio_path=Path(audio_name or f"{clip_id}.wav"),
        label=Label.FAKE if fake else Label.REAL,
        subject_id=subject_id,
        manipulation=_FAKE_MANIPS[index % len(_FAKE_MANIPS)] if fake else Manipulation.NONE,
        split=split,
    )


def synthetic_examples(
    n: int,
    seed: int = 0,
    frames: int = 50,
    num_subjects: int = 8,
    split: Split = Split.TRAIN,
) -> list[ClipExample]:
    """``n`` alternating real/fake in-memory examples (balanced for even n)."""
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n):
        fake = i % 2 == 1
        clip = _make_clip_row(i, fake, subject_id=f"s{i % num_subjects:02d}", split=split)
        pair = synthetic_pair(rng, fake, frames=frames, clip_id=clip.clip_id)
        examples.append(ClipExample(clip=clip, pair=pair))
    return examples


def render_face_frames(latent: np.ndarray, size: int = 128) -> np.ndarray:
    """Full-face RGB render ``(F, size, size, 3)`` uint8: bright elliptical
    head on black, dark eyes, mouth height tracking the latent."""
    frames = latent.shape[0]
    out = np.zeros((frames, size, size, 3), dtype=np.uint8)
    center = (size // 2, size // 2)
    axes = (int(size * 0.30), int(size * 0.42))
    eye_y = int(size * 0.38)
    eye_dx = int(size * 0.12)
    mouth_y = int(size * 0.66)
    mouth_half_w = int(size * 0.10)
    for i, a in enumerate(latent):
        frame = out[i]
        cv2.ellipse(frame, center, axes, 0, 0, 360, (180, 150, 130), thickness=-1)
        for sx in (-1, 1):
            cv2.circle(frame, (center[0] + sx * eye_dx, eye_y), max(2, size // 32), (40, 30, 30), -1)
        half_h = max(1, int(round(1 + a * size * 0.07)))
        cv2.rectangle(
            frame,
            (center[0] - mouth_half_w, mouth_y - half_h),
            (center[0] + mouth_half_w, mouth_y + half_h),
            (60, 20, 20),
            thickness=-1,
        )
    return out


def _write_video(frames: np.ndarray, path: Path, fps: float = 25.0) -> None:
    if path.suffix == ".npy":
        np.save(path, frames)
        return
    if path.suffix == ".npz":
        np.savez(path, frames=frames, fps=np.float64(fps))
        return
    writer = cv2.VideoWriter(
        str(path),
        cv2.VideoWriter_fourcc(*"MJPG"),
        fps,
        (frames.shape[2], frames.shape[1]),
    )
    if not writer.isOpened():
        raise RuntimeError(f"cannot open video writer for {path}")
    for frame in frames:
        writer.write(cv2.cvtColor(frame, cv2.COLOR_RGB2BGR))
    writer.release()


def _write_wav(waveform: np.ndarray, path: Path) -> None:
    pcm = np.clip(waveform, -1.0, 1.0)
    wavfile.write(str(path), SAMPLE_RATE, (pcm * 32767.0).astype(np.int16))


def write_synthetic_dataset(
    out_dir: str | Path,
    n: int = 12,
    seed: int = 0,
    frames: int = 40,
    num_subjects: int = 6,
    video_format: str = "npy",
    face_size: int = 128,
    splits: tuple[float, float] = (0.7, 0.85),
) -> Path:
    """Write a file-backed dataset and return the manifest path.

    Clips alternate real/fake; subjects are assigned round-robin; the
    first ``splits[0]`` fraction goes to train, the next to val, the
    rest to test.  ``video_format`` is ``npy``, ``npz`` or ``avi``.
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    clips = []
    for i in range(n):
        fake = i % 2 == 1
        if i < splits[0] * n:
            split = Split.TRAIN
        elif i < splits[1] * n:
            split = Split.VAL
        else:
            split = Split.TEST
        video_latent = latent_signal(rng, frames)
        audio_latent = latent_signal(rng, frames) if fake else video_latent
        clip = _make_clip_row(
            i, fake, subject_id=f"s{i % num_subjects:02d}", split=split,
            video_name=f"c{i:04d}.{video_format}",
        )
        _write_video(render_face_frames(video_latent, size=face_size), root / clip.video_path.name)
        _write_wav(tone_waveform(audio_latent), root / clip.audio_path.name)
        clips.append(clip)
    manifest_path = root / "manifest.jsonl"
    save_manifest(clips, manifest_path)
    return manifest_path


def examples_from_entries(entries) -> list[ClipExample]:
    """Adapt cache entries (clip metadata + pair) into training items."""
    out = []
    for entry in entries:
        clip = MediaClip(
            clip_id=entry.clip_id,
            video_path=Path(f"{entry.clip_id}.npy"),
            audio_path=Path(f"{entry.clip_id}.wav"),
            label=entry.label,
            subject_id=entry.subject_id,
            manipulation=Manipulation(entry.manipulation),
            split=Split(entry.split),
        )
        out.append(ClipExample(clip=clip, pair=entry.pair))
    return out


__all__ = [
    "latent_signal",
    "mouth_crop_frames",
    "render_face_frames",
    "synthetic_examples",
    "synthetic_pair",
    "tone_waveform",
    "write_synthetic_dataset",
    "examples_from_entries",
]
