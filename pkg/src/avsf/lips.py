"""Lip-region sequences: decode video, crop the mouth, grayscale at 96x96.

Frames come either from a real video container (decoded with OpenCV) or
from a ``.npy``/``.npz`` stack of RGB frames, which keeps tests and CI free
of codec dependencies. Mouth localisation is delegated to a
:class:`LandmarkProvider`; two deterministic providers ship with the
package so no third-party face model is required.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import cv2
import numpy as np

from .errors import DecodeFailure, EmptyVideo, NoFaceInFirstFrame

LIP_SIZE = 96
CROP_MARGIN = 1.3           # crop side = margin * mouth width
TARGET_FPS = 25.0

# BT.601 luma weights (sum to exactly 1.0, so grayscale input is a fixpoint)
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


@dataclass
class LipSequence:
    """Grayscale mouth crops, shape (1, frames, 96, 96), values in [0, 1]."""

    frames: np.ndarray
    fps: float = TARGET_FPS

    def __post_init__(self):
        arr = np.asarray(self.frames, dtype=np.float32)
        if arr.ndim != 4 or arr.shape[0] != 1 or arr.shape[2:] != (LIP_SIZE, LIP_SIZE):
            raise ValueError(f"frames must be (1, F, {LIP_SIZE}, {LIP_SIZE}), got {arr.shape}")
        if arr.shape[1] < 1:
            raise ValueError("need at least one frame")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("frame values must be finite and within [0, 1]")
        self.frames = arr

    @property
    def num_frames(self) -> int:
        return self.frames.shape[1]


@runtime_checkable
class LandmarkProvider(Protocol):
    """Yields mouth landmarks per frame, or None when no face is found.

    Implementations must set ``shareable`` to declare whether one instance
    may be used concurrently from several workers; if False the harness
    instantiates one provider per worker.
    """

    shareable: bool

    def mouth_landmarks(self, frame: np.ndarray) -> np.ndarray | None:
        """Return (N, 2) float array of (x, y) mouth points for an RGB frame."""
        ...


class SyntheticLandmarkProvider:
    """Fixed landmarks at a configurable fraction of the frame; for tests/CI."""

    shareable = True

    def __init__(self, center: tuple[float, float] = (0.5, 0.68), width: float = 0.25):
        self.center = center
        self.width = width

    def mouth_landmarks(self, frame: np.ndarray) -> np.ndarray | None:
        h, w = frame.shape[:2]
        cx, cy = self.center[0] * w, self.center[1] * h
        half = self.width * w / 2.0
        return np.array([
            [cx - half, cy], [cx + half, cy],
            [cx, cy - half / 2.0], [cx, cy + half / 2.0],
        ], dtype=np.float64)


class BlobFaceLandmarkProvider:
    """Tiny luminance-blob detector: treats the brightest region as the face.

    Meant for synthetic head-and-shoulders renders; returns None when the
    frame has no pixels above the threshold (e.g. an all-black video), which
    exercises the no-face contract without a real detector.
    """

    shareable = True

    def __init__(self, threshold: float = 0.15):
        self.threshold = threshold

    def mouth_landmarks(self, frame: np.ndarray) -> np.ndarray | None:
        gray = rgb_to_gray(frame)
        ys, xs = np.nonzero(gray > self.threshold)
        if xs.size == 0:
            return None
        x0, x1 = xs.min(), xs.max()
        y0, y1 = ys.min(), ys.max()
        # mouth sits in the lower-center of the face box
        cx = (x0 + x1) / 2.0
        cy = y0 + 0.75 * (y1 - y0)
        half = max(1.0, 0.2 * (x1 - x0))
        return np.array([
            [cx - half, cy], [cx + half, cy],
            [cx, cy - half / 2.0], [cx, cy + half / 2.0],
        ], dtype=np.float64)


def rgb_to_gray(frame: np.ndarray) -> np.ndarray:
    """BT.601 luma of an RGB frame, scaled to [0, 1] if the input is uint8."""
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim == 2:
        gray = arr
    elif arr.ndim == 3 and arr.shape[2] == 3:
        gray = arr @ _LUMA
    else:
        raise ValueError(f"expected HxW or HxWx3 frame, got shape {arr.shape}")
    if np.issubdtype(np.asarray(frame).dtype, np.integer):
        gray = gray / 255.0
    return gray


def read_video_frames(path: str | Path) -> tuple[np.ndarray, float]:
    """Load all frames of a video as (F, H, W, 3) RGB uint8 plus the fps.

    ``.npy``/``.npz`` paths are treated as pre-decoded frame stacks (an
    ``.npz`` may carry an ``fps`` entry; otherwise 25 is assumed).
    """
    path = Path(path)
    if not path.exists():
        raise DecodeFailure(f"video not found: {path}")
    suffix = path.suffix.lower()
    if suffix == ".npy":
        return _as_frame_stack(np.load(str(path))), TARGET_FPS
    if suffix == ".npz":
        data = np.load(str(path))
        fps = float(data["fps"]) if "fps" in data else TARGET_FPS
        return _as_frame_stack(data["frames"]), fps

    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise DecodeFailure(f"OpenCV cannot open {path}")
    fps = cap.get(cv2.CAP_PROP_FPS) or TARGET_FPS
    frames = []
    while True:
        ok, frame_bgr = cap.read()
        if not ok:
            break
        frames.append(cv2.cvtColor(frame_bgr, cv2.COLOR_BGR2RGB))
    cap.release()
    if not frames:
        raise DecodeFailure(f"no frames decoded from {path}")
    return np.stack(frames), float(fps) if fps > 0 else TARGET_FPS


def _as_frame_stack(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise DecodeFailure(f"frame stack must be (F, H, W, 3), got {arr.shape}")
    if arr.dtype != np.uint8:
        arr = np.clip(arr, 0, 255).astype(np.uint8)
    return arr


def resample_to_fps(frames: np.ndarray, src_fps: float, dst_fps: float = TARGET_FPS) -> np.ndarray:
    """Nearest-frame selection so one output frame covers 1/dst_fps seconds."""
    n = frames.shape[0]
    if n == 0:
        raise EmptyVideo("cannot resample an empty frame stack")
    if abs(src_fps - dst_fps) < 1e-9:
        return frames
    duration = n / src_fps
    n_out = max(1, int(round(duration * dst_fps)))
    idx = np.minimum(np.round(np.arange(n_out) * src_fps / dst_fps).astype(int), n - 1)
    return frames[idx]


def _crop_box(landmarks: np.ndarray, height: int, width: int) -> tuple[int, int, int]:
    """Square (x0, y0, side) centered on the landmark centroid, inside the image."""
    cx, cy = landmarks[:, 0].mean(), landmarks[:, 1].mean()
    mouth_width = float(landmarks[:, 0].max() - landmarks[:, 0].min())
    side = int(round(CROP_MARGIN * mouth_width))
    side = max(2, min(side, height, width))
    x0 = int(round(cx - side / 2.0))
    y0 = int(round(cy - side / 2.0))
    x0 = min(max(x0, 0), width - side)
    y0 = min(max(y0, 0), height - side)
    return x0, y0, side


def extract_lip_sequence(video_path: str | Path, landmark_provider: LandmarkProvider,
                         target_fps: float = TARGET_FPS) -> LipSequence:
    """Crop, resize and grayscale the mouth region of every frame.

    Per frame: a square of side 1.3x the mouth width centered at the mouth
    landmark centroid (clamped to the image), resized to 96x96, converted to
    grayscale by BT.601 luma and scaled to [0, 1]. Frames where the provider
    finds no face reuse the previous frame's crop box.

    Raises:
        NoFaceInFirstFrame: the provider finds nothing in frame 0.
        DecodeFailure: the video cannot be read.
    """
    frames, fps = read_video_frames(video_path)
    frames = resample_to_fps(frames, fps, target_fps)

    out = np.empty((frames.shape[0], LIP_SIZE, LIP_SIZE), dtype=np.float32)
    box: tuple[int, int, int] | None = None
    for i, frame in enumerate(frames):
        landmarks = landmark_provider.mouth_landmarks(frame)
        if landmarks is not None:
            box = _crop_box(np.asarray(landmarks, dtype=np.float64), frame.shape[0], frame.shape[1])
        elif box is None:
            raise NoFaceInFirstFrame(f"no face detected in the first frame of {video_path}")
        x0, y0, side = box
        crop = frame[y0:y0 + side, x0:x0 + side]
        resized = cv2.resize(crop, (LIP_SIZE, LIP_SIZE), interpolation=cv2.INTER_LINEAR)
        out[i] = rgb_to_gray(resized).astype(np.float32)

    return LipSequence(frames=np.clip(out, 0.0, 1.0)[None, ...], fps=target_fps)
