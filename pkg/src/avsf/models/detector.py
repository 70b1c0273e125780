"""End-to-end sync-aware detector.

Wires the audio-visual encoder, sync/fusion features, temporal
convolution stack and linear classifier into one module.  A forward
pass runs the encoder three times (joint, audio-dropout,
video-dropout), forms the per-frame absolute difference between the two
single-modality embeddings, concatenates it with the joint embedding
and classifies the temporally pooled result.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np
import torch
from torch import nn

from ..align import AlignedPair
from ..errors import UnknownKind
from .av_encoder import AudioVisualEncoder, EmbeddingSequence, EncoderConfig, EncoderMode
from .sync_fusion import fuse, sync_check
from .temporal import LinearClassifier, MultiScaleTcn, Prediction, TcnConfig, classify, temporal_pool

EXPORTABLE_KINDS = ("av", "v", "a", "sync", "fusion", "pooled")


@dataclass
class DetectorConfig:
    """Encoder plus temporal-head dimensions for the full detector."""

    encoder: EncoderConfig
    tcn: TcnConfig

    def __post_init__(self) -> None:
        if self.tcn.in_dim != 2 * self.encoder.embed_dim:
            raise ValueError(
                f"tcn.in_dim must be twice the encoder width "
                f"({2 * self.encoder.embed_dim}), got {self.tcn.in_dim}"
            )

    @classmethod
    def base(cls) -> "DetectorConfig":
        enc = EncoderConfig.base()
        return cls(encoder=enc, tcn=TcnConfig(in_dim=2 * enc.embed_dim))

    @classmethod
    def micro(cls) -> "DetectorConfig":
        enc = EncoderConfig.micro()
        return cls(encoder=enc, tcn=TcnConfig.micro(in_dim=2 * enc.embed_dim))

    @classmethod
    def tiny(cls) -> "DetectorConfig":
        enc = EncoderConfig.tiny()
        return cls(
            encoder=enc,
            tcn=TcnConfig(in_dim=2 * enc.embed_dim, channels=8, kernel_sizes=(3, 5), num_blocks=1, dropout=0.0),
        )

    @classmethod
    def preset(cls, name: str) -> "DetectorConfig":
        presets = {"base": cls.base, "micro": cls.micro, "tiny": cls.tiny}
        if name not in presets:
            raise ValueError(f"unknown model preset {name!r}; choose from {sorted(presets)}")
        return presets[name]()

    def to_dict(self) -> dict[str, Any]:
        enc, tcn = self.encoder, self.tcn
        return {
            "encoder": {
                "embed_dim": enc.embed_dim,
                "num_layers": enc.num_layers,
                "num_heads": enc.num_heads,
                "ffn_dim": enc.ffn_dim,
                "visual_frontend": enc.visual_frontend.value,
                "audio_feat_dim": enc.audio_feat_dim,
                "dropout": enc.dropout,
                "max_frames": enc.max_frames,
            },
            "tcn": {
                "in_dim": tcn.in_dim,
                "channels": tcn.channels,
                "kernel_sizes": list(tcn.kernel_sizes),
                "num_blocks": tcn.num_blocks,
                "dropout": tcn.dropout,
            },
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DetectorConfig":
        return cls(
            encoder=EncoderConfig(**data["encoder"]),
            tcn=TcnConfig(**data["tcn"]),
        )


class SyncDetector(nn.Module):
    """Binary real/fake classifier over aligned lip/audio pairs."""

    def __init__(self, config: DetectorConfig | None = None) -> None:
        super().__init__()
        self.config = config or DetectorConfig.base()
        self.encoder = AudioVisualEncoder(self.config.encoder)
        self.tcn = MultiScaleTcn(self.config.tcn)
        self.classifier = LinearClassifier(self.config.tcn.channels)

    def fusion_features(
        self,
        lips: torch.Tensor,
        audio: torch.Tensor,
        key_padding_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """``(B, T, 2*embed_dim)`` joint-plus-sync frame features."""
        f_av = self.encoder(lips, audio, EncoderMode.JOINT, key_padding_mask)
        f_v = self.encoder(lips, audio, EncoderMode.AUDIO_DROPOUT, key_padding_mask)
        f_a = self.encoder(lips, audio, EncoderMode.VIDEO_DROPOUT, key_padding_mask)
        sync = torch.abs(f_v - f_a)
        return torch.cat([f_av, sync], dim=-1)

    def pooled_features(
        self,
        lips: torch.Tensor,
        audio: torch.Tensor,
        key_padding_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """``(B, channels)`` video-level representation (pre-logit)."""
        fusion = self.fusion_features(lips, audio, key_padding_mask)
        feats = self.tcn(fusion, key_padding_mask)
        return temporal_pool(feats, key_padding_mask)

    def forward(
        self,
        lips: torch.Tensor,
        audio: torch.Tensor,
        key_padding_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """``(B, 2)`` class logits."""
        return self.classifier(self.pooled_features(lips, audio, key_padding_mask))

    def _pair_tensors(self, pair: AlignedPair) -> tuple[torch.Tensor, torch.Tensor]:
        lips = torch.as_tensor(np.asarray(pair.lips.frames), dtype=torch.float32).unsqueeze(0)
        audio = torch.as_tensor(np.asarray(pair.audio.features), dtype=torch.float32).unsqueeze(0)
        return lips, audio

    @torch.no_grad()
    def predict(self, pair: AlignedPair) -> Prediction:
        """Classify one aligned pair in inference mode."""
        was_training = self.training
        self.eval()
        try:
            lips, audio = self._pair_tensors(pair)
            pooled = self.pooled_features(lips, audio).squeeze(0)
            return classify(self.classifier, pooled, clip_id=pair.clip_id)
        finally:
            if was_training:
                self.train()

    @torch.no_grad()
    def embedding_sequences(self, pair: AlignedPair) -> dict[str, EmbeddingSequence]:
        """All five frame-level embedding kinds for one pair (inference)."""
        was_training = self.training
        self.eval()
        try:
            f_av = self.encoder.encode(pair.lips.frames, pair.audio.features, EncoderMode.JOINT, pair.clip_id)
            f_v = self.encoder.encode(pair.lips.frames, pair.audio.features, EncoderMode.AUDIO_DROPOUT, pair.clip_id)
            f_a = self.encoder.encode(pair.lips.frames, pair.audio.features, EncoderMode.VIDEO_DROPOUT, pair.clip_id)
            f_sync = sync_check(f_v, f_a)
            f_fusion = fuse(f_av, f_sync)
            return {"av": f_av, "v": f_v, "a": f_a, "sync": f_sync, "fusion": f_fusion}
        finally:
            if was_training:
                self.train()

    @torch.no_grad()
    def export_arrays(self, pair: AlignedPair, kinds: list[str]) -> dict[str, np.ndarray]:
        """Requested embedding tensors for one pair, as numpy arrays.

        ``kinds`` may name any frame-level kind plus ``"pooled"`` (the
        video-level vector fed to the classifier).

        Raises:
            UnknownKind: a requested kind is not exportable.
        """
        for kind in kinds:
            if kind not in EXPORTABLE_KINDS:
                raise UnknownKind(kind)
        sequences = self.embedding_sequences(pair)
        out: dict[str, np.ndarray] = {}
        for kind in kinds:
            if kind == "pooled":
                was_training = self.training
                self.eval()
                try:
                    lips, audio = self._pair_tensors(pair)
                    pooled = self.pooled_features(lips, audio).squeeze(0)
                finally:
                    if was_training:
                        self.train()
                out[kind] = pooled.cpu().numpy().astype(np.float32)
            else:
                out[kind] = sequences[kind].values.cpu().numpy().astype(np.float32)
        return out

    def param_groups(self) -> dict[str, list[nn.Parameter]]:
        """Named groups consumed by the freeze strategies."""
        groups = dict(self.encoder.param_groups())
        groups["tcn"] = list(self.tcn.parameters())
        groups["classifier"] = list(self.classifier.parameters())
        return groups
