"""Dataset manifests: one JSON Lines record per media clip.

A manifest row looks like::

    {"clip_id": "c0001", "video_path": "real/c0001.avi", "audio_path": "real/c0001.wav",
     "label": "real", "subject_id": "s12", "manipulation": "none", "split": "train"}

Enum values are lowercase strings on disk. Relative media paths are resolved
against the manifest's own directory.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import DuplicateClipId, InvalidFieldValue, MissingField, UnknownLabel


class Label(enum.IntEnum):
    REAL = 0
    FAKE = 1


class Manipulation(str, enum.Enum):
    NONE = "none"
    FACESWAP = "faceswap"
    FSGAN = "fsgan"
    WAV2LIP = "wav2lip"
    FACESWAP_WAV2LIP = "faceswap_wav2lip"
    FSGAN_WAV2LIP = "fsgan_wav2lip"
    RTVC = "rtvc"
    OTHER = "other"


class Split(str, enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


_LABEL_NAMES = {"real": Label.REAL, "fake": Label.FAKE}

REQUIRED_FIELDS = ("clip_id", "video_path", "audio_path", "label", "subject_id", "manipulation", "split")


@dataclass(frozen=True)
class MediaClip:
    """One video sample: where its frames and audio live, and what it is."""

    clip_id: str
    video_path: Path
    audio_path: Path
    label: Label
    subject_id: str
    manipulation: Manipulation
    split: Split

    def __post_init__(self):
        if self.label == Label.REAL and self.manipulation != Manipulation.NONE:
            raise InvalidFieldValue("manipulation", self.manipulation.value, self.clip_id)
        if self.label == Label.FAKE and self.manipulation == Manipulation.NONE:
            raise InvalidFieldValue("manipulation", self.manipulation.value, self.clip_id)


def _parse_record(obj: dict, record_name: str, base_dir: Path | None) -> MediaClip:
    for field in REQUIRED_FIELDS:
        if field not in obj or obj[field] is None:
            raise MissingField(field, record_name)

    raw_label = obj["label"]
    if isinstance(raw_label, str) and raw_label.lower() in _LABEL_NAMES:
        label = _LABEL_NAMES[raw_label.lower()]
    elif raw_label in (0, 1):
        label = Label(raw_label)
    else:
        raise UnknownLabel(raw_label, record_name)

    try:
        manipulation = Manipulation(str(obj["manipulation"]).lower())
    except ValueError:
        raise InvalidFieldValue("manipulation", obj["manipulation"], record_name) from None
    try:
        split = Split(str(obj["split"]).lower())
    except ValueError:
        raise InvalidFieldValue("split", obj["split"], record_name) from None

    def _resolve(p: str) -> Path:
        path = Path(p)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return path

    return MediaClip(
        clip_id=str(obj["clip_id"]),
        video_path=_resolve(str(obj["video_path"])),
        audio_path=_resolve(str(obj["audio_path"])),
        label=label,
        subject_id=str(obj["subject_id"]),
        manipulation=manipulation,
        split=split,
    )


def load_manifest(path: str | Path) -> list[MediaClip]:
    """Parse a JSON Lines manifest into validated clips, in file order.

    Raises:
        MissingField / UnknownLabel / InvalidFieldValue: a record is malformed
            (the error names the offending record).
        DuplicateClipId: two records share a clip_id.
    """
    path = Path(path)
    base_dir = path.parent
    clips: list[MediaClip] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            record_name = f"{path.name}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvalidFieldValue("json", line[:60], record_name) from exc
            if not isinstance(obj, dict):
                raise InvalidFieldValue("json", obj, record_name)
            clip = _parse_record(obj, record_name, base_dir)
            if clip.clip_id in seen:
                raise DuplicateClipId(clip.clip_id)
            seen.add(clip.clip_id)
            clips.append(clip)
    return clips


def save_manifest(clips: Iterable[MediaClip], path: str | Path) -> None:
    """Write clips as JSON Lines. Paths are stored relative to the manifest dir when possible."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()

    def _portable(p: Path) -> str:
        try:
            return str(p.resolve().relative_to(base))
        except ValueError:
            return str(p)

    with open(path, "w", encoding="utf-8") as fh:
        for clip in clips:
            fh.write(json.dumps({
                "clip_id": clip.clip_id,
                "video_path": _portable(clip.video_path),
                "audio_path": _portable(clip.audio_path),
                "label": "real" if clip.label == Label.REAL else "fake",
                "subject_id": clip.subject_id,
                "manipulation": clip.manipulation.value,
                "split": clip.split.value,
            }) + "\n")


def subjects_of(clips: Iterable[MediaClip]) -> list[str]:
    """Unique subject ids, in first-appearance order."""
    seen: dict[str, None] = {}
    for clip in clips:
        seen.setdefault(clip.subject_id, None)
    return list(seen)
