from .av_encoder import (
    AudioVisualEncoder,
    EmbeddingKind,
    EmbeddingSequence,
    EncoderConfig,
    EncoderMode,
)
from .sync_fusion import fuse, sync_check
from .temporal import LinearClassifier, MultiScaleTcn, Prediction, TcnConfig, classify, tcn_forward, temporal_pool
from .face_encoder import FaceClip, FaceEncoder, FaceEncoderConfig, clips_from_video, face_encode, tubelet_embed
from .detector import DetectorConfig, SyncDetector
from .ensemble import EnsembleDetector, EnsembleHead, ensemble_classify
from .checkpoint import LoadReport, load_checkpoint, load_pretrained, save_checkpoint

__all__ = [
    "AudioVisualEncoder", "EmbeddingKind", "EmbeddingSequence", "EncoderConfig", "EncoderMode",
    "fuse", "sync_check",
    "LinearClassifier", "MultiScaleTcn", "Prediction", "TcnConfig", "classify", "tcn_forward", "temporal_pool",
    "FaceClip", "FaceEncoder", "FaceEncoderConfig", "clips_from_video", "face_encode", "tubelet_embed",
    "DetectorConfig", "SyncDetector",
    "EnsembleDetector", "EnsembleHead", "ensemble_classify",
    "LoadReport", "load_checkpoint", "load_pretrained", "save_checkpoint",
]
