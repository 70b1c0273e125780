"""Synchronisation feature and audio-visual fusion.

Given single-modality embedding sequences produced with video dropout
(audio-only, kind ``a``) and audio dropout (video-only, kind ``v``) for
the same clip, the sync feature is the per-frame elementwise absolute
difference between the two.  Fusion concatenates the joint embedding
with the sync feature along the width axis.
"""

from __future__ import annotations

import torch

from ..errors import KindMismatch, ShapeMismatch
from .av_encoder import EmbeddingKind, EmbeddingSequence


def sync_check(
    video_only: EmbeddingSequence,
    audio_only: EmbeddingSequence,
    normalize: bool = False,
) -> EmbeddingSequence:
    """Per-frame dissimilarity between single-modality embeddings.

    ``|F_v - F_a|`` computed elementwise over two ``(frames, width)``
    sequences of identical shape.  With ``normalize=True`` each input is
    L2-normalised per frame before the difference, making the result
    scale-invariant; the default is the raw difference.

    Raises:
        KindMismatch: inputs are not a (v, a) pair.
        ShapeMismatch: inputs differ in frame count or width.
    """
    if video_only.kind is not EmbeddingKind.V or audio_only.kind is not EmbeddingKind.A:
        raise KindMismatch(
            f"sync check needs kinds (v, a), got ({video_only.kind.value}, {audio_only.kind.value})"
        )
    if video_only.values.shape != audio_only.values.shape:
        raise ShapeMismatch(
            f"sync check needs matching shapes, got {tuple(video_only.values.shape)} "
            f"vs {tuple(audio_only.values.shape)}"
        )
    v = video_only.values
    a = audio_only.values
    if normalize:
        v = torch.nn.functional.normalize(v, p=2.0, dim=-1, eps=1e-12)
        a = torch.nn.functional.normalize(a, p=2.0, dim=-1, eps=1e-12)
    clip_id = video_only.clip_id or audio_only.clip_id
    return EmbeddingSequence(values=torch.abs(v - a), kind=EmbeddingKind.SYNC, clip_id=clip_id)


def fuse(joint: EmbeddingSequence, sync: EmbeddingSequence) -> EmbeddingSequence:
    """Concatenate joint and sync sequences along the width axis.

    Inputs must share the frame count and width; the result has kind
    ``fusion`` and twice the width.
    """
    if joint.kind is not EmbeddingKind.AV or sync.kind is not EmbeddingKind.SYNC:
        raise KindMismatch(
            f"fusion needs kinds (av, sync), got ({joint.kind.value}, {sync.kind.value})"
        )
    if joint.values.shape != sync.values.shape:
        raise ShapeMismatch(
            f"fusion needs matching shapes, got {tuple(joint.values.shape)} "
            f"vs {tuple(sync.values.shape)}"
        )
    clip_id = joint.clip_id or sync.clip_id
    return EmbeddingSequence(
        values=torch.cat([joint.values, sync.values], dim=-1),
        kind=EmbeddingKind.FUSION,
        clip_id=clip_id,
    )
