"""Preprocessed per-clip cache files.

Each clip is stored as one ``.npz`` holding the lips tensor, the audio
feature tensor and a JSON metadata blob (clip fields, fps/rate, a
format-version field, and a content hash of the source media used for
idempotent re-runs).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .align import AlignedPair, align_pair
from .audio import AudioFeatureSequence, logfbank_from_file
from .errors import AvsfError, DecodeFailure
from .lips import LandmarkProvider, LipSequence, extract_lip_sequence
from .manifest import Label, MediaClip

CACHE_FORMAT_VERSION = 1
CACHE_ENV_VAR = "AVSF_CACHE_DIR"


def cache_root(explicit: str | Path | None = None) -> Path:
    """Resolve the cache directory: explicit argument, else $AVSF_CACHE_DIR, else ./avsf_cache."""
    if explicit is not None:
        return Path(explicit)
    env = os.environ.get(CACHE_ENV_VAR)
    if env:
        return Path(env)
    return Path("avsf_cache")


def cache_path(root: str | Path, clip_id: str) -> Path:
    return Path(root) / f"{clip_id}.npz"


def content_hash(clip: MediaClip) -> str:
    """Hash of the raw source bytes plus the preprocessing format version."""
    h = hashlib.sha256()
    h.update(f"format={CACHE_FORMAT_VERSION}".encode())
    for path in (clip.video_path, clip.audio_path):
        h.update(b"\x00" + str(path.name).encode())
        try:
            h.update(Path(path).read_bytes())
        except OSError as exc:
            raise DecodeFailure(f"cannot read {path}: {exc}") from exc
    return h.hexdigest()


@dataclass
class CacheEntry:
    pair: AlignedPair
    clip_id: str
    label: Label
    subject_id: str
    manipulation: str
    split: str
    source_hash: str


def preprocess_clip(clip: MediaClip, landmark_provider: LandmarkProvider) -> CacheEntry:
    """Run the full ingest path for one clip: lips, logfbank, alignment."""
    lips = extract_lip_sequence(clip.video_path, landmark_provider)
    audio = logfbank_from_file(clip.audio_path)
    pair = align_pair(lips, audio, clip_id=clip.clip_id)
    return CacheEntry(
        pair=pair,
        clip_id=clip.clip_id,
        label=clip.label,
        subject_id=clip.subject_id,
        manipulation=clip.manipulation.value,
        split=clip.split.value,
        source_hash=content_hash(clip),
    )


def write_entry(entry: CacheEntry, root: str | Path) -> Path:
    path = cache_path(root, entry.clip_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": CACHE_FORMAT_VERSION,
        "clip_id": entry.clip_id,
        "label": int(entry.label),
        "subject_id": entry.subject_id,
        "manipulation": entry.manipulation,
        "split": entry.split,
        "fps": entry.pair.lips.fps,
        "rate": entry.pair.audio.rate,
        "source_hash": entry.source_hash,
    }
    np.savez_compressed(
        path,
        lips=entry.pair.lips.frames,
        audio=entry.pair.audio.features,
        meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
    )
    return path


def read_entry(path: str | Path) -> CacheEntry:
    path = Path(path)
    if not path.exists():
        raise AvsfError(f"cache entry not found: {path}")
    data = np.load(str(path))
    meta = json.loads(bytes(data["meta"]).decode())
    if meta.get("format_version") != CACHE_FORMAT_VERSION:
        raise AvsfError(
            f"{path}: cache format version {meta.get('format_version')} != {CACHE_FORMAT_VERSION}"
        )
    pair = AlignedPair(
        lips=LipSequence(frames=data["lips"], fps=meta["fps"]),
        audio=AudioFeatureSequence(features=data["audio"], rate=meta["rate"]),
        clip_id=meta["clip_id"],
    )
    return CacheEntry(
        pair=pair,
        clip_id=meta["clip_id"],
        label=Label(meta["label"]),
        subject_id=meta["subject_id"],
        manipulation=meta["manipulation"],
        split=meta["split"],
        source_hash=meta["source_hash"],
    )


def is_up_to_date(clip: MediaClip, root: str | Path) -> bool:
    """True when a cache entry exists for the clip and its source hash matches."""
    path = cache_path(root, clip.clip_id)
    if not path.exists():
        return False
    try:
        data = np.load(str(path))
        meta = json.loads(bytes(data["meta"]).decode())
    except Exception:
        return False
    return (
        meta.get("format_version") == CACHE_FORMAT_VERSION
        and meta.get("source_hash") == content_hash(clip)
    )


def load_pair(clip: MediaClip, root: str | Path) -> AlignedPair:
    """Read the cached AlignedPair for a manifest clip."""
    return read_entry(cache_path(root, clip.clip_id)).pair
