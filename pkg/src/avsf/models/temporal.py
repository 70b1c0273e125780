"""Multi-scale temporal convolution head and binary classifier.

The head stacks residual blocks whose branches are plain 1-D
convolutions with different kernel sizes, concatenated channelwise.
There is deliberately no normalisation layer anywhere in the stack:
every output frame is then an exact function of a bounded window of
input frames, so the receptive field ``1 + num_blocks * (max_kernel -
1)`` is not just nominal but holds bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from ..errors import EmptySequence, ShapeMismatch
from ..manifest import Label


@dataclass
class TcnConfig:
    """Shape of the temporal convolution stack.

    ``channels`` is the width after branch concatenation and must be
    divisible by the number of kernel sizes.  Kernel sizes must be odd
    (so that same-padding is symmetric) and distinct.
    """

    in_dim: int = 1536
    channels: int = 0  # 0 means "same as in_dim"
    kernel_sizes: tuple[int, ...] = (3, 5, 7)
    num_blocks: int = 4
    dropout: float = 0.1

    def __post_init__(self) -> None:
        self.kernel_sizes = tuple(self.kernel_sizes)
        if self.channels == 0:
            self.channels = self.in_dim
        if self.in_dim < 1 or self.channels < 1 or self.num_blocks < 1:
            raise ValueError("in_dim, channels and num_blocks must be positive")
        if not self.kernel_sizes:
            raise ValueError("need at least one kernel size")
        if len(set(self.kernel_sizes)) != len(self.kernel_sizes):
            raise ValueError(f"kernel sizes must be distinct, got {self.kernel_sizes}")
        for k in self.kernel_sizes:
            if k < 1 or k % 2 == 0:
                raise ValueError(f"kernel sizes must be odd and positive, got {self.kernel_sizes}")
        if self.channels % len(self.kernel_sizes) != 0:
            raise ValueError(
                f"channels {self.channels} not divisible by {len(self.kernel_sizes)} branches"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def receptive_field(self) -> int:
        return 1 + self.num_blocks * (max(self.kernel_sizes) - 1)

    @classmethod
    def micro(cls, in_dim: int) -> "TcnConfig":
        return cls(in_dim=in_dim, channels=48, kernel_sizes=(3, 5, 7), num_blocks=2, dropout=0.0)


class _MultiScaleBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kernel_sizes: tuple[int, ...], dropout: float) -> None:
        super().__init__()
        branch_ch = out_ch // len(kernel_sizes)
        self.branches = nn.ModuleList(
            nn.Conv1d(in_ch, branch_ch, kernel_size=k, padding=(k - 1) // 2) for k in kernel_sizes
        )
        self.dropout = nn.Dropout(dropout)
        self.shortcut: nn.Module = nn.Identity() if in_ch == out_ch else nn.Conv1d(in_ch, out_ch, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = torch.cat([branch(x) for branch in self.branches], dim=1)
        return torch.relu(self.dropout(y) + self.shortcut(x))


class MultiScaleTcn(nn.Module):
    """Stack of multi-scale residual conv blocks over frame sequences.

    Input ``(B, T, in_dim)``, output ``(B, T, channels)``.  An optional
    ``key_padding_mask`` (``(B, T)`` bool, True at padded positions)
    zeroes padded frames before every block so padding never leaks into
    valid frames through the convolution windows.
    """

    def __init__(self, config: TcnConfig | None = None) -> None:
        super().__init__()
        self.config = config or TcnConfig()
        cfg = self.config
        blocks = [_MultiScaleBlock(cfg.in_dim, cfg.channels, cfg.kernel_sizes, cfg.dropout)]
        blocks += [
            _MultiScaleBlock(cfg.channels, cfg.channels, cfg.kernel_sizes, cfg.dropout)
            for _ in range(cfg.num_blocks - 1)
        ]
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x: torch.Tensor, key_padding_mask: torch.Tensor | None = None) -> torch.Tensor:
        if x.ndim != 3 or x.shape[-1] != self.config.in_dim:
            raise ShapeMismatch(
                f"expected (B, T, {self.config.in_dim}), got {tuple(x.shape)}"
            )
        valid = None
        if key_padding_mask is not None:
            if key_padding_mask.shape != x.shape[:2]:
                raise ShapeMismatch(
                    f"mask shape {tuple(key_padding_mask.shape)} does not match frames {tuple(x.shape[:2])}"
                )
            valid = (~key_padding_mask).to(x.dtype).unsqueeze(1)  # (B, 1, T)
        h = x.transpose(1, 2)  # (B, C, T)
        for block in self.blocks:
            if valid is not None:
                h = h * valid
            h = block(h)
        if valid is not None:
            h = h * valid
        return h.transpose(1, 2)


def temporal_pool(features: torch.Tensor, key_padding_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean over the frame axis, ignoring masked positions.

    Accepts ``(T, C)`` or ``(B, T, C)``; returns ``(C,)`` or ``(B, C)``.

    Raises:
        EmptySequence: a sequence contributes zero valid frames.
    """
    if features.ndim == 2:
        pooled = temporal_pool(
            features.unsqueeze(0),
            None if key_padding_mask is None else key_padding_mask.unsqueeze(0),
        )
        return pooled.squeeze(0)
    if features.ndim != 3:
        raise ShapeMismatch(f"expected (T, C) or (B, T, C), got {tuple(features.shape)}")
    if key_padding_mask is None:
        if features.shape[1] < 1:
            raise EmptySequence("cannot pool a zero-frame sequence")
        return features.mean(dim=1)
    valid = (~key_padding_mask).to(features.dtype)
    counts = valid.sum(dim=1)
    if (counts < 1).any():
        raise EmptySequence("cannot pool a sequence with no valid frames")
    return (features * valid.unsqueeze(-1)).sum(dim=1) / counts.unsqueeze(-1)


class LinearClassifier(nn.Module):
    """Single linear layer onto the two class logits."""

    def __init__(self, in_dim: int, num_classes: int = 2) -> None:
        super().__init__()
        self.fc = nn.Linear(in_dim, num_classes)

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        return self.fc(pooled)


@dataclass
class Prediction:
    """Classifier output for one clip: logits, softmax probabilities
    and the pooled feature vector they were computed from."""

    logits: torch.Tensor
    probs: torch.Tensor
    pooled: torch.Tensor
    clip_id: str = ""

    @property
    def real_prob(self) -> float:
        return float(self.probs[int(Label.REAL)])

    @property
    def fake_prob(self) -> float:
        return float(self.probs[int(Label.FAKE)])

    @property
    def predicted_label(self) -> Label:
        return Label.FAKE if self.fake_prob >= 0.5 else Label.REAL

    def __post_init__(self) -> None:
        if self.logits.shape[-1] != 2 or self.probs.shape[-1] != 2:
            raise ShapeMismatch("predictions are binary: expected 2 logits and 2 probabilities")


def classify(classifier: LinearClassifier, pooled: torch.Tensor, clip_id: str = "") -> Prediction:
    """Apply the classifier to one pooled vector and softmax the logits."""
    logits = classifier(pooled)
    probs = torch.softmax(logits, dim=-1)
    return Prediction(logits=logits.detach(), probs=probs.detach(), pooled=pooled.detach(), clip_id=clip_id)


def tcn_forward(tcn: MultiScaleTcn, values: torch.Tensor) -> torch.Tensor:
    """Run one unbatched ``(T, in_dim)`` sequence through the stack."""
    if values.ndim != 2:
        raise ShapeMismatch(f"expected (T, in_dim), got {tuple(values.shape)}")
    return tcn(values.unsqueeze(0)).squeeze(0)
