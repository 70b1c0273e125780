"""Factorized spatiotemporal transformer over whole-face clips.

A clip is cut into non-overlapping tubelets (a few frames deep, one
patch wide) that are linearly projected into tokens.  A spatial
transformer with a classification token runs independently at every
temporal index; the per-index classification tokens then feed a
temporal transformer whose own classification token is the clip vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
import torch
from torch import nn

from ..errors import EmptyVideo, NonFiniteActivation, ShapeMismatch


@dataclass
class FaceClip:
    """A fixed-length RGB face clip, channels-first: ``(3, F, H, W)`` in [0, 1]."""

    frames: torch.Tensor
    clip_id: str = ""

    def __post_init__(self) -> None:
        f = self.frames
        if f.ndim != 4 or f.shape[0] != 3 or f.shape[-2] != f.shape[-1]:
            raise ShapeMismatch(f"face clip must be (3, F, S, S), got {tuple(f.shape)}")
        if f.shape[1] < 1:
            raise ShapeMismatch("face clip needs at least one frame")
        if not torch.isfinite(f).all():
            raise NonFiniteActivation("non-finite values in face clip")

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[1])

    @property
    def size(self) -> int:
        return int(self.frames.shape[-1])


@dataclass
class FaceEncoderConfig:
    """Tubelet and transformer dimensions for the face branch."""

    frames: int = 16
    image_size: int = 224
    patch_size: int = 16
    tubelet_t: int = 2
    embed_dim: int = 768
    spatial_layers: int = 12
    temporal_layers: int = 4
    num_heads: int = 12
    ffn_dim: int = 3072
    dropout: float = 0.1

    def __post_init__(self) -> None:
        if self.image_size % self.patch_size != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.frames % self.tubelet_t != 0:
            raise ValueError(f"frames {self.frames} not divisible by tubelet_t {self.tubelet_t}")
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )

    @property
    def num_temporal(self) -> int:
        return self.frames // self.tubelet_t

    @property
    def num_patches(self) -> int:
        side = self.image_size // self.patch_size
        return side * side

    @classmethod
    def base(cls) -> "FaceEncoderConfig":
        return cls()

    @classmethod
    def micro(cls) -> "FaceEncoderConfig":
        return cls(
            frames=4,
            image_size=32,
            patch_size=16,
            tubelet_t=2,
            embed_dim=8,
            spatial_layers=1,
            temporal_layers=1,
            num_heads=1,
            ffn_dim=16,
            dropout=0.0,
        )


class TubeletEmbed(nn.Module):
    """Linear projection of non-overlapping ``tubelet_t x patch x patch`` blocks."""

    def __init__(self, config: FaceEncoderConfig) -> None:
        super().__init__()
        self.config = config
        self.proj = nn.Conv3d(
            3,
            config.embed_dim,
            kernel_size=(config.tubelet_t, config.patch_size, config.patch_size),
            stride=(config.tubelet_t, config.patch_size, config.patch_size),
        )

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """``(B, 3, F, S, S)`` -> ``(B, F/tubelet_t, num_patches, embed_dim)``."""
        x = self.proj(frames)  # (B, D, t, h, w)
        b, d, t, h, w = x.shape
        return x.reshape(b, d, t, h * w).permute(0, 2, 3, 1)


def tubelet_embed(clip: FaceClip, embed: TubeletEmbed) -> torch.Tensor:
    """Tokenise one clip: ``(frames/tubelet_t, num_patches, embed_dim)``.

    Raises:
        ShapeMismatch: clip shape incompatible with the config.
    """
    cfg = embed.config
    if clip.num_frames != cfg.frames or clip.size != cfg.image_size:
        raise ShapeMismatch(
            f"clip is {clip.num_frames} frames of {clip.size}px, "
            f"config expects {cfg.frames} frames of {cfg.image_size}px"
        )
    return embed(clip.frames.unsqueeze(0)).squeeze(0)


def _make_transformer(cfg: FaceEncoderConfig, num_layers: int) -> nn.TransformerEncoder:
    layer = nn.TransformerEncoderLayer(
        d_model=cfg.embed_dim,
        nhead=cfg.num_heads,
        dim_feedforward=cfg.ffn_dim,
        dropout=cfg.dropout,
        activation="relu",
        batch_first=True,
    )
    return nn.TransformerEncoder(layer, num_layers=num_layers, enable_nested_tensor=False)


class FaceEncoder(nn.Module):
    """Maps a face clip to a single ``embed_dim`` vector."""

    def __init__(self, config: FaceEncoderConfig | None = None) -> None:
        super().__init__()
        self.config = config or FaceEncoderConfig()
        cfg = self.config
        self.tubelets = TubeletEmbed(cfg)
        self.spatial_cls = nn.Parameter(torch.zeros(1, 1, cfg.embed_dim))
        self.temporal_cls = nn.Parameter(torch.zeros(1, 1, cfg.embed_dim))
        self.spatial_pos = nn.Parameter(torch.zeros(1, cfg.num_patches + 1, cfg.embed_dim))
        self.temporal_pos = nn.Parameter(torch.zeros(1, cfg.num_temporal + 1, cfg.embed_dim))
        for p in (self.spatial_cls, self.temporal_cls, self.spatial_pos, self.temporal_pos):
            nn.init.normal_(p, std=0.02)
        self.spatial_transformer = _make_transformer(cfg, cfg.spatial_layers)
        self.temporal_transformer = _make_transformer(cfg, cfg.temporal_layers)

    @property
    def embed_dim(self) -> int:
        return self.config.embed_dim

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """Encode a batch of clips ``(B, 3, F, S, S)`` to ``(B, embed_dim)``."""
        cfg = self.config
        if frames.ndim != 5 or frames.shape[1] != 3:
            raise ShapeMismatch(f"expected (B, 3, F, S, S), got {tuple(frames.shape)}")
        if frames.shape[2] != cfg.frames or frames.shape[-1] != cfg.image_size:
            raise ShapeMismatch(
                f"clip is {frames.shape[2]} frames of {frames.shape[-1]}px, "
                f"config expects {cfg.frames} frames of {cfg.image_size}px"
            )
        tokens = self.tubelets(frames)  # (B, t, n, D)
        b, t, n, d = tokens.shape
        spatial_in = tokens.reshape(b * t, n, d)
        cls = self.spatial_cls.expand(b * t, 1, d)
        spatial_in = torch.cat([cls, spatial_in], dim=1) + self.spatial_pos
        spatial_out = self.spatial_transformer(spatial_in)
        index_vectors = spatial_out[:, 0, :].reshape(b, t, d)

        cls_t = self.temporal_cls.expand(b, 1, d)
        temporal_in = torch.cat([cls_t, index_vectors], dim=1) + self.temporal_pos
        temporal_out = self.temporal_transformer(temporal_in)
        return temporal_out[:, 0, :]


def face_encode(encoder: FaceEncoder, clip: FaceClip) -> torch.Tensor:
    """Encode one clip in inference mode; returns an ``(embed_dim,)`` vector.

    Raises:
        NonFiniteActivation: the forward pass produced NaN/inf.
    """
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            vec = encoder(clip.frames.unsqueeze(0)).squeeze(0)
    finally:
        if was_training:
            encoder.train()
    if not torch.isfinite(vec).all():
        raise NonFiniteActivation("face encoder produced non-finite activations")
    return vec


def clips_from_video(
    frames: np.ndarray,
    clip_id: str = "",
    num_frames: int = 16,
    size: int = 224,
) -> list[FaceClip]:
    """Cut a full video into fixed-length face clips.

    Frames arrive as ``(F, H, W, 3)`` RGB, uint8 or float in [0, 1].
    Each frame is resized to ``size``x``size``; consecutive
    non-overlapping windows of ``num_frames`` frames become clips, and a
    trailing partial window is padded by repeating its last frame.

    Raises:
        EmptyVideo: the video has no frames.
    """
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise ShapeMismatch(f"expected (F, H, W, 3) RGB frames, got {frames.shape}")
    if frames.shape[0] < 1:
        raise EmptyVideo("cannot cut clips from a zero-frame video")
    if frames.dtype == np.uint8:
        frames = frames.astype(np.float32) / 255.0
    else:
        frames = frames.astype(np.float32)

    resized = np.empty((frames.shape[0], size, size, 3), dtype=np.float32)
    for i, frame in enumerate(frames):
        if frame.shape[0] == size and frame.shape[1] == size:
            resized[i] = frame
        else:
            resized[i] = cv2.resize(frame, (size, size), interpolation=cv2.INTER_AREA)

    clips: list[FaceClip] = []
    for start in range(0, resized.shape[0], num_frames):
        window = resized[start : start + num_frames]
        if window.shape[0] < num_frames:
            pad = np.repeat(window[-1:], num_frames - window.shape[0], axis=0)
            window = np.concatenate([window, pad], axis=0)
        tensor = torch.from_numpy(np.ascontiguousarray(window.transpose(3, 0, 1, 2)))
        clips.append(FaceClip(frames=tensor, clip_id=clip_id))
    return clips


def video_face_vector(encoder: FaceEncoder, clips: list[FaceClip]) -> torch.Tensor:
    """Mean of per-clip vectors: the video-level face representation.

    Raises:
        EmptyVideo: no clips supplied.
    """
    if not clips:
        raise EmptyVideo("need at least one clip for a video-level face vector")
    return torch.stack([face_encode(encoder, clip) for clip in clips]).mean(dim=0)
