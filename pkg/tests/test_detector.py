"""Full detector wiring: fusion layout, predictions, embedding export hooks."""

import numpy as np
import pytest
import torch

from avsf.errors import UnknownKind
from avsf.manifest import Label
from avsf.models.av_encoder import EncoderMode
from avsf.models.detector import EXPORTABLE_KINDS, DetectorConfig, SyncDetector
from avsf.synthetic import synthetic_pair


@pytest.fixture
def pair():
    return synthetic_pair(np.random.default_rng(0), fake=False, frames=7, clip_id="p7")


def test_config_requires_double_width_tcn():
    from avsf.models.av_encoder import EncoderConfig
    from avsf.models.temporal import TcnConfig

    enc = EncoderConfig.tiny()
    with pytest.raises(ValueError, match="twice"):
        DetectorConfig(encoder=enc, tcn=TcnConfig(in_dim=enc.embed_dim, channels=8,
                                                  kernel_sizes=(3,), num_blocks=1))


def test_config_round_trip_through_dict():
    cfg = DetectorConfig.micro()
    again = DetectorConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
    assert again.tcn.kernel_sizes == cfg.tcn.kernel_sizes


def test_preset_lookup():
    assert DetectorConfig.preset("tiny").encoder.embed_dim == 8
    assert DetectorConfig.preset("micro").encoder.embed_dim == 64
    with pytest.raises(ValueError, match="preset"):
        DetectorConfig.preset("giant")


def test_fusion_features_layout(pair, tiny_detector):
    model = tiny_detector
    model.eval()
    lips = torch.as_tensor(pair.lips.frames).unsqueeze(0)
    audio = torch.as_tensor(pair.audio.features).unsqueeze(0)
    with torch.no_grad():
        fusion = model.fusion_features(lips, audio)
        f_av = model.encoder(lips, audio, EncoderMode.JOINT)
        f_v = model.encoder(lips, audio, EncoderMode.AUDIO_DROPOUT)
        f_a = model.encoder(lips, audio, EncoderMode.VIDEO_DROPOUT)
    d = model.config.encoder.embed_dim
    assert fusion.shape == (1, pair.num_frames, 2 * d)
    assert torch.equal(fusion[..., :d], f_av)
    assert torch.equal(fusion[..., d:], (f_v - f_a).abs())


def test_forward_logit_shape(pair, tiny_detector):
    lips = torch.as_tensor(pair.lips.frames).unsqueeze(0)
    audio = torch.as_tensor(pair.audio.features).unsqueeze(0)
    with torch.no_grad():
        logits = tiny_detector(lips, audio)
    assert logits.shape == (1, 2)


def test_predict_returns_consistent_prediction(pair, tiny_detector):
    pred = tiny_detector.predict(pair)
    assert pred.clip_id == "p7"
    assert pred.probs.shape == (2,)
    assert abs(float(pred.probs.sum()) - 1.0) < 1e-6
    assert pred.predicted_label in (Label.REAL, Label.FAKE)
    assert pred.pooled.shape == (tiny_detector.config.tcn.channels,)
    again = tiny_detector.predict(pair)
    assert torch.equal(pred.logits, again.logits)


def test_predict_restores_training_mode(pair, tiny_detector):
    tiny_detector.train()
    tiny_detector.predict(pair)
    assert tiny_detector.training


def test_embedding_sequences_kinds_and_widths(pair, tiny_detector):
    seqs = tiny_detector.embedding_sequences(pair)
    d = tiny_detector.config.encoder.embed_dim
    assert set(seqs) == {"av", "v", "a", "sync", "fusion"}
    for kind in ("av", "v", "a", "sync"):
        assert seqs[kind].values.shape == (pair.num_frames, d)
    assert seqs["fusion"].values.shape == (pair.num_frames, 2 * d)
    assert torch.equal(seqs["sync"].values, (seqs["v"].values - seqs["a"].values).abs())
    assert torch.equal(seqs["fusion"].values[:, :d], seqs["av"].values)


def test_export_arrays_kinds(pair, tiny_detector):
    arrays = tiny_detector.export_arrays(pair, kinds=["sync", "pooled"])
    assert set(arrays) == {"sync", "pooled"}
    assert arrays["sync"].shape == (pair.num_frames, 8)
    assert arrays["pooled"].shape == (8,)
    assert arrays["sync"].dtype == np.float32
    with pytest.raises(UnknownKind):
        tiny_detector.export_arrays(pair, kinds=["logits"])
    assert set(EXPORTABLE_KINDS) == {"av", "v", "a", "sync", "fusion", "pooled"}


def test_pooled_export_matches_predict(pair, tiny_detector):
    arrays = tiny_detector.export_arrays(pair, kinds=["pooled"])
    pred = tiny_detector.predict(pair)
    np.testing.assert_array_equal(arrays["pooled"], pred.pooled.numpy())


def test_param_groups_cover_everything(tiny_detector):
    groups = tiny_detector.param_groups()
    assert set(groups) == {"visual_frontend", "audio_frontend", "transformer", "tcn", "classifier"}
    ids = [id(p) for params in groups.values() for p in params]
    assert len(ids) == len(set(ids))
    assert sorted(ids) == sorted(id(p) for p in tiny_detector.parameters())


def test_batched_and_single_forward_agree(tiny_detector):
    rng = np.random.default_rng(1)
    lips = torch.from_numpy(rng.random((2, 1, 5, 96, 96)).astype(np.float32))
    audio = torch.from_numpy(rng.uniform(-20, 5, (2, 5, 104)).astype(np.float32))
    tiny_detector.eval()
    with torch.no_grad():
        both = tiny_detector(lips, audio)
        one = tiny_detector(lips[:1], audio[:1])
    torch.testing.assert_close(both[:1], one, rtol=1e-4, atol=1e-5)
