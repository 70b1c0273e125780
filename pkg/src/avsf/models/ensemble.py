"""Two-branch ensemble: pooled sync-detector features + face-encoder vector.

The two backbone representations are concatenated and classified by a
two-layer head.  In the standard recipe both backbones stay frozen and
only the head trains; a joint mode exists for ablation.

A combined checkpoint stores only the head tensors plus references to
the two backbone checkpoint directories (path and content hash), so a
backbone swap is always explicit.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from ..align import AlignedPair
from ..errors import CorruptCheckpoint, ShapeMismatch
from .checkpoint import checkpoint_digest, load_checkpoint, read_descriptor, save_checkpoint
from .detector import DetectorConfig, SyncDetector
from .face_encoder import FaceClip, FaceEncoder, FaceEncoderConfig, video_face_vector
from .temporal import Prediction, classify


class EnsembleHead(nn.Module):
    """concat -> linear(hidden) -> ReLU -> linear(2)."""

    def __init__(self, av_dim: int = 1536, face_dim: int = 768, hidden: int = 512) -> None:
        super().__init__()
        self.av_dim = av_dim
        self.face_dim = face_dim
        self.fc1 = nn.Linear(av_dim + face_dim, hidden)
        self.fc2 = nn.Linear(hidden, 2)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, av_pooled: torch.Tensor, face_vec: torch.Tensor) -> torch.Tensor:
        if av_pooled.shape[-1] != self.av_dim or face_vec.shape[-1] != self.face_dim:
            raise ShapeMismatch(
                f"head expects widths ({self.av_dim}, {self.face_dim}), "
                f"got ({av_pooled.shape[-1]}, {face_vec.shape[-1]})"
            )
        x = torch.cat([av_pooled, face_vec], dim=-1)
        return self.fc2(self.relu(self.fc1(x)))


def ensemble_classify(head: EnsembleHead, av_pooled: torch.Tensor, face_vec: torch.Tensor,
                      clip_id: str = "") -> Prediction:
    """Classify one (av_pooled, face_vec) pair; softmaxed two-class output."""
    logits = head(av_pooled, face_vec)
    probs = torch.softmax(logits, dim=-1)
    pooled = torch.cat([av_pooled, face_vec], dim=-1)
    return Prediction(logits=logits.detach(), probs=probs.detach(), pooled=pooled.detach(), clip_id=clip_id)


class EnsembleDetector(nn.Module):
    """Sync detector and face encoder joined by an :class:`EnsembleHead`."""

    def __init__(
        self,
        sync_detector: SyncDetector,
        face_encoder: FaceEncoder,
        hidden: int = 512,
    ) -> None:
        super().__init__()
        self.sync_detector = sync_detector
        self.face_encoder = face_encoder
        self.head = EnsembleHead(
            av_dim=sync_detector.config.tcn.channels,
            face_dim=face_encoder.embed_dim,
            hidden=hidden,
        )

    def forward(
        self,
        lips: torch.Tensor,
        audio: torch.Tensor,
        face_frames: torch.Tensor,
        key_padding_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Batched logits; one face clip per sample ``(B, 3, F, S, S)``."""
        av_pooled = self.sync_detector.pooled_features(lips, audio, key_padding_mask)
        face_vec = self.face_encoder(face_frames)
        return self.head(av_pooled, face_vec)

    @torch.no_grad()
    def predict(self, pair: AlignedPair, face_clips: list[FaceClip]) -> Prediction:
        """Video-level prediction: clip-mean face vector + pooled AV features."""
        was_training = self.training
        self.eval()
        try:
            lips, audio = self.sync_detector._pair_tensors(pair)
            av_pooled = self.sync_detector.pooled_features(lips, audio).squeeze(0)
            face_vec = video_face_vector(self.face_encoder, face_clips)
            return ensemble_classify(self.head, av_pooled, face_vec, clip_id=pair.clip_id)
        finally:
            if was_training:
                self.train()

    def param_groups(self) -> dict[str, list[nn.Parameter]]:
        return {
            "av_backbone": list(self.sync_detector.parameters()),
            "face_backbone": list(self.face_encoder.parameters()),
            "head": list(self.head.parameters()),
        }


def save_ensemble_checkpoint(
    ensemble: EnsembleDetector,
    dirpath: str | Path,
    av_checkpoint: str | Path,
    face_checkpoint: str | Path,
) -> Path:
    """Write head tensors plus hashed references to the backbone checkpoints."""
    out = save_checkpoint(ensemble.head, dirpath, config={"hidden": ensemble.head.fc1.out_features})
    refs = {
        "av_backbone": {"path": str(Path(av_checkpoint)), "sha256": checkpoint_digest(av_checkpoint)},
        "face_backbone": {"path": str(Path(face_checkpoint)), "sha256": checkpoint_digest(face_checkpoint)},
    }
    (out / "refs.json").write_text(json.dumps(refs, indent=2, sort_keys=True))
    return out


def load_ensemble_checkpoint(dirpath: str | Path) -> EnsembleDetector:
    """Rebuild an ensemble from a combined checkpoint, verifying the
    referenced backbone directories still hash to what was recorded."""
    root = Path(dirpath)
    refs_path = root / "refs.json"
    if not refs_path.is_file():
        raise CorruptCheckpoint(f"no refs.json in combined checkpoint {dirpath}")
    refs = json.loads(refs_path.read_text())
    for name in ("av_backbone", "face_backbone"):
        if name not in refs:
            raise CorruptCheckpoint(f"combined checkpoint missing {name!r} reference")
        recorded = refs[name]["sha256"]
        actual = checkpoint_digest(refs[name]["path"])
        if recorded != actual:
            raise CorruptCheckpoint(
                f"{name} checkpoint at {refs[name]['path']} has changed "
                f"(recorded {recorded[:12]}, found {actual[:12]})"
            )

    av_cfg = read_descriptor(refs["av_backbone"]["path"]).get("config", {})
    sync_detector = SyncDetector(DetectorConfig.from_dict(av_cfg))
    load_checkpoint(sync_detector, refs["av_backbone"]["path"])

    face_cfg = read_descriptor(refs["face_backbone"]["path"]).get("config", {})
    face_encoder = FaceEncoder(FaceEncoderConfig(**face_cfg))
    load_checkpoint(face_encoder, refs["face_backbone"]["path"])

    hidden = read_descriptor(root).get("config", {}).get("hidden", 512)
    ensemble = EnsembleDetector(sync_detector, face_encoder, hidden=hidden)
    load_checkpoint(ensemble.head, root)
    return ensemble


def face_config_dict(config: FaceEncoderConfig) -> dict:
    return dataclasses.asdict(config)


__all__ = [
    "EnsembleDetector",
    "EnsembleHead",
    "ensemble_classify",
    "face_config_dict",
    "load_ensemble_checkpoint",
    "save_ensemble_checkpoint",
]
