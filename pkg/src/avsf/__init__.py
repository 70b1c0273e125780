"""Audio-visual sync-based deepfake detection pipeline."""

from .align import AlignedPair, align_pair
from .audio import AudioFeatureSequence, compute_logfbank
from .cache import CacheEntry, cache_root, load_pair, preprocess_clip, read_entry, write_entry
from .errors import AvsfError
from .lips import BlobFaceLandmarkProvider, LipSequence, SyntheticLandmarkProvider, extract_lip_sequence
from .manifest import Label, Manipulation, MediaClip, Split, load_manifest, save_manifest
from .models import (
    AudioVisualEncoder,
    DetectorConfig,
    EmbeddingKind,
    EmbeddingSequence,
    EncoderConfig,
    EncoderMode,
    EnsembleDetector,
    EnsembleHead,
    FaceClip,
    FaceEncoder,
    FaceEncoderConfig,
    MultiScaleTcn,
    Prediction,
    SyncDetector,
    TcnConfig,
    fuse,
    load_checkpoint,
    save_checkpoint,
    sync_check,
)
from .training import ClipExample, FreezeMode, TrainConfig, make_kfold, train
from .evaluation import build_report, compute_metrics, roc_auc, video_score

__all__ = [
    "AlignedPair",
    "AudioFeatureSequence",
    "AudioVisualEncoder",
    "AvsfError",
    "BlobFaceLandmarkProvider",
    "CacheEntry",
    "ClipExample",
    "DetectorConfig",
    "EmbeddingKind",
    "EmbeddingSequence",
    "EncoderConfig",
    "EncoderMode",
    "EnsembleDetector",
    "EnsembleHead",
    "FaceClip",
    "FaceEncoder",
    "FaceEncoderConfig",
    "FreezeMode",
    "Label",
    "LipSequence",
    "Manipulation",
    "MediaClip",
    "MultiScaleTcn",
    "Prediction",
    "Split",
    "SyncDetector",
    "SyntheticLandmarkProvider",
    "TcnConfig",
    "TrainConfig",
    "align_pair",
    "build_report",
    "cache_root",
    "compute_logfbank",
    "compute_metrics",
    "extract_lip_sequence",
    "fuse",
    "load_checkpoint",
    "load_manifest",
    "load_pair",
    "make_kfold",
    "preprocess_clip",
    "read_entry",
    "roc_auc",
    "save_checkpoint",
    "save_manifest",
    "sync_check",
    "train",
    "video_score",
    "write_entry",
]

__version__ = "0.1.0"
