"""Frame-level alignment of lip and audio feature sequences."""

from __future__ import annotations

from dataclasses import dataclass

from .audio import AudioFeatureSequence
from .errors import EmptyModality
from .lips import LipSequence


@dataclass
class AlignedPair:
    """A lip sequence and an audio feature sequence sharing frame count T."""

    lips: LipSequence
    audio: AudioFeatureSequence
    clip_id: str = ""

    @property
    def num_frames(self) -> int:
        return self.lips.num_frames


def align_pair(lips: LipSequence, audio: AudioFeatureSequence, clip_id: str = "") -> AlignedPair:
    """Truncate both modalities to T = min(video frames, audio frames).

    Assumes the lips were already resampled to 25 fps, so index i of either
    side covers the same 40 ms of the clip.

    Raises:
        EmptyModality: either side has zero frames.
    """
    if lips.num_frames == 0 or audio.num_frames == 0:
        raise EmptyModality(
            f"cannot align: {lips.num_frames} video frames, {audio.num_frames} audio frames"
        )
    t = min(lips.num_frames, audio.num_frames)
    return AlignedPair(
        lips=LipSequence(frames=lips.frames[:, :t], fps=lips.fps),
        audio=AudioFeatureSequence(features=audio.features[:t], rate=audio.rate),
        clip_id=clip_id,
    )
