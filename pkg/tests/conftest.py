"""Shared fixtures: synthetic clips on disk, cache dirs, small models."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
import torch

from avsf.manifest import Label, Manipulation, MediaClip, Split
from avsf.models.detector import DetectorConfig, SyncDetector
from avsf.synthetic import synthetic_examples, synthetic_pair


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)


@pytest.fixture
def cache_dir(tmp_path, monkeypatch):
    root = tmp_path / "cache"
    monkeypatch.setenv("AVSF_CACHE_DIR", str(root))
    return root


@pytest.fixture
def tiny_detector():
    return SyncDetector(DetectorConfig.tiny())


@pytest.fixture
def short_pair():
    rng = np.random.default_rng(7)
    return synthetic_pair(rng, fake=False, frames=6, clip_id="pair0")


@pytest.fixture
def small_examples():
    return synthetic_examples(8, seed=0, frames=6, num_subjects=4)


def make_clip(clip_id="c0", label=Label.REAL, subject_id="s0", split=Split.TEST,
              manipulation=None, video_path="v.npy", audio_path="a.wav") -> MediaClip:
    if manipulation is None:
        manipulation = Manipulation.NONE if label == Label.REAL else Manipulation.WAV2LIP
    return MediaClip(
        clip_id=clip_id,
        video_path=Path(video_path),
        audio_path=Path(audio_path),
        label=label,
        subject_id=subject_id,
        manipulation=manipulation,
        split=split,
    )
