"""Checkpoint container and pretrained-weight import.

A checkpoint is a directory holding one ``.npy`` file per state tensor
(named by its state-dict key) plus a ``config.json`` descriptor.  The
format is deliberately dumb: every tensor is individually inspectable
and the container carries no executable state.

Importing third-party weights goes through an explicit mapping file — a
JSON list of ``{"source": ..., "target": ...}`` renames and
``{"target": ..., "action": "init"}`` markers.  Every tensor of the
receiving model must be accounted for; silent partial loads are not a
thing this module does.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch import nn

from ..errors import CorruptCheckpoint, ShapeConflict, UnmappedParameter

CHECKPOINT_FORMAT_VERSION = 1


def save_checkpoint(module: nn.Module, dirpath: str | Path, config: dict[str, Any] | None = None) -> Path:
    """Write a module's full state to ``dirpath`` (created if needed)."""
    out = Path(dirpath)
    out.mkdir(parents=True, exist_ok=True)
    state = module.state_dict()
    tensors = {}
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy()
        np.save(out / f"{name}.npy", arr)
        tensors[name] = {"shape": list(arr.shape), "dtype": str(arr.dtype)}
    descriptor = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": config or {},
        "tensors": tensors,
    }
    (out / "config.json").write_text(json.dumps(descriptor, indent=2, sort_keys=True))
    return out


def read_descriptor(dirpath: str | Path) -> dict[str, Any]:
    path = Path(dirpath) / "config.json"
    if not path.is_file():
        raise CorruptCheckpoint(f"no config.json in checkpoint directory {dirpath}")
    descriptor = json.loads(path.read_text())
    version = descriptor.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CorruptCheckpoint(
            f"checkpoint format version {version!r} unsupported (expected {CHECKPOINT_FORMAT_VERSION})"
        )
    return descriptor


def load_checkpoint(module: nn.Module, dirpath: str | Path) -> dict[str, Any]:
    """Load a checkpoint written by :func:`save_checkpoint` into ``module``.

    Every tensor in the module's state dict must be present with an
    exactly matching shape.  Returns the stored config descriptor.
    """
    root = Path(dirpath)
    descriptor = read_descriptor(root)
    state = module.state_dict()
    new_state = {}
    for name, tensor in state.items():
        path = root / f"{name}.npy"
        if not path.is_file():
            raise UnmappedParameter(f"checkpoint is missing tensor '{name}'")
        arr = np.load(path)
        if tuple(arr.shape) != tuple(tensor.shape):
            raise ShapeConflict(name, tuple(tensor.shape), tuple(arr.shape))
        new_state[name] = torch.from_numpy(arr).to(tensor.dtype)
    module.load_state_dict(new_state)
    return descriptor.get("config", {})


@dataclass
class LoadReport:
    """Outcome of a mapped import: which tensors came from the source
    checkpoint and which kept their fresh initialization."""

    mapped: list[str] = field(default_factory=list)
    initialized: list[str] = field(default_factory=list)

    @property
    def num_mapped(self) -> int:
        return len(self.mapped)

    @property
    def num_initialized(self) -> int:
        return len(self.initialized)


def identity_mapping(module: nn.Module) -> list[dict[str, str]]:
    """A mapping file body that renames nothing (source name == target name)."""
    return [{"source": name, "target": name} for name in module.state_dict()]


def write_mapping(entries: list[dict[str, str]], path: str | Path) -> None:
    Path(path).write_text(json.dumps(entries, indent=2))


def load_pretrained(module: nn.Module, weights_path: str | Path, mapping_path: str | Path) -> LoadReport:
    """Import tensors from a foreign checkpoint directory via a mapping file.

    The mapping must cover every tensor of ``module``: either as the
    ``target`` of a rename or with ``action: "init"`` (keep the current
    fresh value).  Mapped tensors must match shape exactly.

    Raises:
        UnmappedParameter: a model tensor the mapping does not cover,
            or a mapping entry naming an unknown target.
        ShapeConflict: a mapped tensor with the wrong shape.
    """
    weights_dir = Path(weights_path)
    entries = json.loads(Path(mapping_path).read_text())
    if not isinstance(entries, list):
        raise CorruptCheckpoint(f"mapping file {mapping_path} must hold a JSON list")

    state = module.state_dict()
    report = LoadReport()
    staged: dict[str, torch.Tensor] = {}
    covered: set[str] = set()
    for entry in entries:
        target = entry.get("target")
        if target is None:
            raise CorruptCheckpoint(f"mapping entry {entry!r} has no target")
        if target not in state:
            raise UnmappedParameter(f"mapping names unknown target tensor '{target}'")
        if target in covered:
            raise CorruptCheckpoint(f"mapping covers target '{target}' twice")
        covered.add(target)
        if entry.get("action") == "init":
            report.initialized.append(target)
            continue
        source = entry.get("source")
        if source is None:
            raise CorruptCheckpoint(f"mapping entry for '{target}' has neither source nor action")
        src_file = weights_dir / f"{source}.npy"
        if not src_file.is_file():
            raise UnmappedParameter(f"source tensor '{source}' not found in {weights_dir}")
        arr = np.load(src_file)
        expected = tuple(state[target].shape)
        if tuple(arr.shape) != expected:
            raise ShapeConflict(target, expected, tuple(arr.shape))
        staged[target] = torch.from_numpy(arr).to(state[target].dtype)
        report.mapped.append(target)

    uncovered = sorted(set(state) - covered)
    if uncovered:
        raise UnmappedParameter(
            f"mapping does not cover model tensor '{uncovered[0]}' "
            f"({len(uncovered)} uncovered in total)"
        )
    merged = {name: staged.get(name, state[name]) for name in state}
    module.load_state_dict(merged)
    return report


def checkpoint_digest(dirpath: str | Path) -> str:
    """SHA-256 over a checkpoint directory's files, order-independent."""
    root = Path(dirpath)
    digest = hashlib.sha256()
    for path in sorted(p for p in root.iterdir() if p.is_file()):
        digest.update(path.name.encode("utf-8"))
        digest.update(path.read_bytes())
    return digest.hexdigest()
