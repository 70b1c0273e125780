"""Audio-visual transformer encoder with selectable modality dropout.

The encoder turns an aligned lip/filterbank pair into a sequence of
frame-level embeddings.  Each stream passes through its own front-end,
the per-frame features are concatenated, projected to the model width,
summed with a learned positional embedding and run through a standard
post-norm transformer encoder.

Modality dropout is implemented by *zero-filling* the dropped stream's
per-frame feature block before concatenation.  The dropped stream's
front-end is not evaluated at all, so the output is bit-for-bit
independent of the dropped modality's content.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..errors import EmptySequence, NonFiniteActivation, ShapeMismatch

AUDIO_FEATURE_DIM = 104


class EncoderMode(enum.Enum):
    """Which modalities feed the transformer."""

    JOINT = "joint"
    AUDIO_DROPOUT = "audio_dropout"
    VIDEO_DROPOUT = "video_dropout"


class EmbeddingKind(enum.Enum):
    """Provenance tag for an embedding sequence."""

    AV = "av"
    V = "v"
    A = "a"
    SYNC = "sync"
    FUSION = "fusion"


_MODE_TO_KIND = {
    EncoderMode.JOINT: EmbeddingKind.AV,
    EncoderMode.AUDIO_DROPOUT: EmbeddingKind.V,
    EncoderMode.VIDEO_DROPOUT: EmbeddingKind.A,
}


@dataclass
class EmbeddingSequence:
    """A (frames, width) float32 embedding matrix plus its provenance."""

    values: torch.Tensor
    kind: EmbeddingKind
    clip_id: str = ""

    def __post_init__(self) -> None:
        if self.values.ndim != 2:
            raise ShapeMismatch(
                f"embedding sequence must be 2-D (frames, width), got shape {tuple(self.values.shape)}"
            )
        if self.values.shape[0] < 1:
            raise EmptySequence("embedding sequence has zero frames")
        if not torch.isfinite(self.values).all():
            raise NonFiniteActivation(f"non-finite values in {self.kind.value} embedding sequence")

    @property
    def num_frames(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])


class VisualFrontendKind(str, enum.Enum):
    RESNET18_3DFRONT = "resnet18_3dfront"
    TINY_CONV = "tiny_conv"


@dataclass
class EncoderConfig:
    """Hyper-parameters of the audio-visual encoder.

    ``embed_dim`` must be divisible by ``num_heads``.  ``max_frames``
    bounds the learned positional table; longer inputs are rejected.
    """

    embed_dim: int = 768
    num_layers: int = 12
    num_heads: int = 12
    ffn_dim: int = 3072
    visual_frontend: VisualFrontendKind = VisualFrontendKind.RESNET18_3DFRONT
    audio_feat_dim: int = 0  # 0 means "use embed_dim"
    dropout: float = 0.1
    max_frames: int = 1024

    def __post_init__(self) -> None:
        if isinstance(self.visual_frontend, str):
            self.visual_frontend = VisualFrontendKind(self.visual_frontend)
        if self.embed_dim < 1 or self.num_layers < 1 or self.num_heads < 1 or self.ffn_dim < 1:
            raise ValueError("encoder dimensions must be positive")
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.audio_feat_dim == 0:
            self.audio_feat_dim = self.embed_dim

    @classmethod
    def base(cls) -> "EncoderConfig":
        return cls()

    @classmethod
    def micro(cls) -> "EncoderConfig":
        # Dropout off: at this width the regularization noise drowns the
        # class signal long before overfitting becomes a concern.
        return cls(
            embed_dim=64,
            num_layers=2,
            num_heads=4,
            ffn_dim=128,
            dropout=0.0,
            visual_frontend=VisualFrontendKind.TINY_CONV,
        )

    @classmethod
    def tiny(cls) -> "EncoderConfig":
        return cls(
            embed_dim=8,
            num_layers=1,
            num_heads=1,
            ffn_dim=16,
            visual_frontend=VisualFrontendKind.TINY_CONV,
            dropout=0.0,
            max_frames=64,
        )


def _conv3x3(in_ch: int, out_ch: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1, bias=False)


class BasicBlock(nn.Module):
    """Two 3x3 convolutions with a residual shortcut."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1) -> None:
        super().__init__()
        self.conv1 = _conv3x3(in_ch, out_ch, stride)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = _conv3x3(out_ch, out_ch)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or in_ch != out_ch:
            self.downsample: nn.Module | None = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, kernel_size=1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )
        else:
            self.downsample = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


class Resnet18Frontend3d(nn.Module):
    """3D convolutional stem followed by a 2D ResNet-18 trunk.

    Input is a batch of grayscale lip clips ``(B, 1, F, 96, 96)``; the
    stem mixes a five-frame temporal neighbourhood without changing the
    frame count, then each frame runs through the residual trunk
    independently.  Output is ``(B, F, 512)``.
    """

    feat_dim = 512

    def __init__(self) -> None:
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv3d(1, 64, kernel_size=(5, 7, 7), stride=(1, 2, 2), padding=(2, 3, 3), bias=False),
            nn.BatchNorm3d(64),
            nn.ReLU(inplace=True),
            nn.MaxPool3d(kernel_size=(1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1)),
        )
        self.layer1 = nn.Sequential(BasicBlock(64, 64), BasicBlock(64, 64))
        self.layer2 = nn.Sequential(BasicBlock(64, 128, stride=2), BasicBlock(128, 128))
        self.layer3 = nn.Sequential(BasicBlock(128, 256, stride=2), BasicBlock(256, 256))
        self.layer4 = nn.Sequential(BasicBlock(256, 512, stride=2), BasicBlock(512, 512))
        self.pool = nn.AdaptiveAvgPool2d(1)

    def forward(self, lips: torch.Tensor) -> torch.Tensor:
        b, _, f, _, _ = lips.shape
        x = self.stem(lips)  # (B, 64, F, 24, 24)
        x = x.transpose(1, 2).reshape(b * f, 64, x.shape[-2], x.shape[-1])
        x = self.layer4(self.layer3(self.layer2(self.layer1(x))))
        x = self.pool(x).flatten(1)
        return x.reshape(b, f, self.feat_dim)


class TinyConvFrontend(nn.Module):
    """Small per-frame 2D conv stack for fast tests and CPU training."""

    feat_dim = 16

    def __init__(self) -> None:
        super().__init__()
        self.conv1 = nn.Conv2d(1, 8, kernel_size=3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(8, 16, kernel_size=3, stride=2, padding=1)
        self.relu = nn.ReLU(inplace=True)
        self.pool = nn.AdaptiveAvgPool2d(1)

    def forward(self, lips: torch.Tensor) -> torch.Tensor:
        b, _, f, h, w = lips.shape
        x = lips.transpose(1, 2).reshape(b * f, 1, h, w)
        x = self.relu(self.conv1(x))
        x = self.relu(self.conv2(x))
        x = self.pool(x).flatten(1)
        return x.reshape(b, f, self.feat_dim)


class AudioFrontend(nn.Module):
    """Two-layer feed-forward network over per-frame filterbank stacks.

    Log filterbank energies sit on a large negative floor (silent bands),
    so the features are layer-normalized before the first linear layer;
    without this the acoustic stream drowns out the visual one at the
    concatenation stage.
    """

    def __init__(self, in_dim: int, out_dim: int) -> None:
        super().__init__()
        self.norm = nn.LayerNorm(in_dim)
        self.fc1 = nn.Linear(in_dim, out_dim)
        self.fc2 = nn.Linear(out_dim, out_dim)
        self.relu = nn.ReLU(inplace=True)
        self.feat_dim = out_dim

    def forward(self, audio: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.relu(self.fc1(self.norm(audio))))


def _make_visual_frontend(kind: VisualFrontendKind) -> nn.Module:
    if kind is VisualFrontendKind.RESNET18_3DFRONT:
        return Resnet18Frontend3d()
    return TinyConvFrontend()


class AudioVisualEncoder(nn.Module):
    """Joint encoder over aligned lip and filterbank frame sequences."""

    def __init__(self, config: EncoderConfig | None = None) -> None:
        super().__init__()
        self.config = config or EncoderConfig()
        cfg = self.config
        self.visual_frontend = _make_visual_frontend(cfg.visual_frontend)
        self.audio_frontend = AudioFrontend(AUDIO_FEATURE_DIM, cfg.audio_feat_dim)
        concat_dim = self.visual_frontend.feat_dim + cfg.audio_feat_dim
        self.input_proj = nn.Linear(concat_dim, cfg.embed_dim)
        self.pos_embedding = nn.Parameter(torch.zeros(1, cfg.max_frames, cfg.embed_dim))
        nn.init.normal_(self.pos_embedding, std=0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=cfg.embed_dim,
            nhead=cfg.num_heads,
            dim_feedforward=cfg.ffn_dim,
            dropout=cfg.dropout,
            activation="relu",
            batch_first=True,
        )
        self.transformer = nn.TransformerEncoder(layer, num_layers=cfg.num_layers, enable_nested_tensor=False)

    @property
    def embed_dim(self) -> int:
        return self.config.embed_dim

    def forward(
        self,
        lips: torch.Tensor,
        audio: torch.Tensor,
        mode: EncoderMode = EncoderMode.JOINT,
        key_padding_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Encode a batch of aligned pairs.

        Args:
            lips: ``(B, 1, F, 96, 96)`` grayscale lip clips.
            audio: ``(B, F, 104)`` stacked filterbank features.
            mode: which modality streams participate.
            key_padding_mask: optional ``(B, F)`` bool mask, True at
                padded positions.

        Returns:
            ``(B, F, embed_dim)`` frame embeddings.
        """
        if lips.ndim != 5 or lips.shape[1] != 1:
            raise ShapeMismatch(f"lips must be (B, 1, F, H, W), got {tuple(lips.shape)}")
        if audio.ndim != 3 or audio.shape[-1] != AUDIO_FEATURE_DIM:
            raise ShapeMismatch(
                f"audio must be (B, F, {AUDIO_FEATURE_DIM}), got {tuple(audio.shape)}"
            )
        if lips.shape[0] != audio.shape[0] or lips.shape[2] != audio.shape[1]:
            raise ShapeMismatch(
                f"lip/audio frame counts disagree: lips {tuple(lips.shape)} vs audio {tuple(audio.shape)}"
            )
        b, t = audio.shape[0], audio.shape[1]
        if t < 1:
            raise EmptySequence("cannot encode a zero-frame pair")
        if t > self.config.max_frames:
            raise ShapeMismatch(
                f"sequence of {t} frames exceeds positional table of {self.config.max_frames}"
            )

        dev, dt = audio.device, self.input_proj.weight.dtype
        if mode is EncoderMode.VIDEO_DROPOUT:
            v_feat = torch.zeros(b, t, self.visual_frontend.feat_dim, device=dev, dtype=dt)
        else:
            v_feat = self.visual_frontend(lips)
        if mode is EncoderMode.AUDIO_DROPOUT:
            a_feat = torch.zeros(b, t, self.audio_frontend.feat_dim, device=dev, dtype=dt)
        else:
            a_feat = self.audio_frontend(audio)

        x = self.input_proj(torch.cat([v_feat, a_feat], dim=-1))
        x = x + self.pos_embedding[:, :t, :]
        out = self.transformer(x, src_key_padding_mask=key_padding_mask)
        if key_padding_mask is None and not torch.isfinite(out).all():
            raise NonFiniteActivation("encoder produced non-finite activations")
        return out

    @torch.no_grad()
    def encode(
        self,
        lips: np.ndarray | torch.Tensor,
        audio: np.ndarray | torch.Tensor,
        mode: EncoderMode = EncoderMode.JOINT,
        clip_id: str = "",
    ) -> EmbeddingSequence:
        """Encode one aligned pair in inference mode.

        Accepts the unbatched array layouts produced by preprocessing —
        lips ``(1, F, 96, 96)``, audio ``(F, 104)`` — and returns a
        ``(F, embed_dim)`` embedding sequence tagged with the kind that
        corresponds to ``mode`` (joint -> av, audio dropout -> v, video
        dropout -> a).
        """
        lips_t = torch.as_tensor(np.asarray(lips), dtype=torch.float32)
        audio_t = torch.as_tensor(np.asarray(audio), dtype=torch.float32)
        if lips_t.ndim != 4:
            raise ShapeMismatch(f"expected unbatched lips (1, F, H, W), got {tuple(lips_t.shape)}")
        if audio_t.ndim != 2:
            raise ShapeMismatch(f"expected unbatched audio (F, 104), got {tuple(audio_t.shape)}")
        was_training = self.training
        self.eval()
        try:
            out = self.forward(lips_t.unsqueeze(0), audio_t.unsqueeze(0), mode=mode)
        finally:
            if was_training:
                self.train()
        return EmbeddingSequence(values=out.squeeze(0), kind=_MODE_TO_KIND[mode], clip_id=clip_id)

    def param_groups(self) -> dict[str, list[nn.Parameter]]:
        """Named parameter groups used by the freeze strategies."""
        return {
            "visual_frontend": list(self.visual_frontend.parameters()),
            "audio_frontend": list(self.audio_frontend.parameters()),
            "transformer": list(self.input_proj.parameters())
            + [self.pos_embedding]
            + list(self.transformer.parameters()),
        }
