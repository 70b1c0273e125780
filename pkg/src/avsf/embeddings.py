"""Embedding archive: raw tensor blocks plus a JSON index.

An archive is a directory holding ``data.bin`` (concatenated C-order
tensor bytes) and ``index.json`` (one record per tensor: clip id, kind,
label, manipulation, shape, dtype, byte offset).  Readers slice the
binary file by offset, so round-trips are bitwise exact and the index
stays human-inspectable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .align import AlignedPair
from .errors import CorruptArchive, UnknownKind
from .manifest import MediaClip
from .models.detector import EXPORTABLE_KINDS, SyncDetector

ARCHIVE_FORMAT_VERSION = 1


@dataclass
class ArchiveRecord:
    clip_id: str
    kind: str
    label: int
    manipulation: str
    shape: tuple[int, ...]
    dtype: str
    offset: int
    nbytes: int


class EmbeddingArchiveWriter:
    """Appends tensors to ``data.bin`` and finalises ``index.json``."""

    def __init__(self, out_dir: str | Path) -> None:
        self.root = Path(out_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self._data = (self.root / "data.bin").open("wb")
        self._records: list[ArchiveRecord] = []
        self._offset = 0

    def add(self, clip: MediaClip, kind: str, array: np.ndarray) -> None:
        arr = np.ascontiguousarray(array)
        payload = arr.tobytes()
        self._data.write(payload)
        self._records.append(
            ArchiveRecord(
                clip_id=clip.clip_id,
                kind=kind,
                label=int(clip.label),
                manipulation=clip.manipulation.value,
                shape=tuple(arr.shape),
                dtype=str(arr.dtype),
                offset=self._offset,
                nbytes=len(payload),
            )
        )
        self._offset += len(payload)

    def close(self) -> Path:
        self._data.close()
        index = {
            "format_version": ARCHIVE_FORMAT_VERSION,
            "records": [
                {
                    "clip_id": r.clip_id,
                    "kind": r.kind,
                    "label": r.label,
                    "manipulation": r.manipulation,
                    "shape": list(r.shape),
                    "dtype": r.dtype,
                    "offset": r.offset,
                    "nbytes": r.nbytes,
                }
                for r in self._records
            ],
        }
        (self.root / "index.json").write_text(json.dumps(index, indent=2))
        return self.root

    def __enter__(self) -> "EmbeddingArchiveWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def export_embeddings(
    detector: SyncDetector,
    items: Sequence[tuple[MediaClip, AlignedPair]],
    kinds: Sequence[str],
    out_dir: str | Path,
) -> Path:
    """Write the requested embedding kinds for every clip to an archive.

    Raises:
        UnknownKind: a requested kind is not exportable.
    """
    kinds = list(kinds)
    for kind in kinds:
        if kind not in EXPORTABLE_KINDS:
            raise UnknownKind(kind)
    with EmbeddingArchiveWriter(out_dir) as writer:
        for clip, pair in items:
            arrays = detector.export_arrays(pair, kinds)
            for kind in kinds:
                writer.add(clip, kind, arrays[kind])
    return Path(out_dir)


def read_index(archive_dir: str | Path) -> list[ArchiveRecord]:
    root = Path(archive_dir)
    index_path = root / "index.json"
    if not index_path.is_file():
        raise CorruptArchive(f"no index.json in embedding archive {archive_dir}")
    index = json.loads(index_path.read_text())
    if index.get("format_version") != ARCHIVE_FORMAT_VERSION:
        raise CorruptArchive(
            f"archive format version {index.get('format_version')!r} unsupported"
        )
    return [
        ArchiveRecord(
            clip_id=r["clip_id"],
            kind=r["kind"],
            label=r["label"],
            manipulation=r["manipulation"],
            shape=tuple(r["shape"]),
            dtype=r["dtype"],
            offset=r["offset"],
            nbytes=r["nbytes"],
        )
        for r in index["records"]
    ]


def read_tensor(archive_dir: str | Path, record: ArchiveRecord) -> np.ndarray:
    data = (Path(archive_dir) / "data.bin").read_bytes()
    chunk = data[record.offset : record.offset + record.nbytes]
    return np.frombuffer(chunk, dtype=np.dtype(record.dtype)).reshape(record.shape).copy()


def iter_archive(archive_dir: str | Path) -> Iterable[tuple[ArchiveRecord, np.ndarray]]:
    """Yield (record, tensor) pairs in index order."""
    records = read_index(archive_dir)
    data = (Path(archive_dir) / "data.bin").read_bytes()
    for record in records:
        chunk = data[record.offset : record.offset + record.nbytes]
        yield record, np.frombuffer(chunk, dtype=np.dtype(record.dtype)).reshape(record.shape).copy()
