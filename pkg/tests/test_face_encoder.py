"""Face branch: tubelet algebra, factorized attention oracle, clip cutting."""

import numpy as np
import pytest
import torch

from avsf.errors import EmptyVideo, NonFiniteActivation, ShapeMismatch
from avsf.models.face_encoder import (
    FaceClip,
    FaceEncoder,
    FaceEncoderConfig,
    TubeletEmbed,
    clips_from_video,
    face_encode,
    tubelet_embed,
    video_face_vector,
)


def _clip(frames=4, size=32, seed=0, clip_id=""):
    rng = np.random.default_rng(seed)
    return FaceClip(
        frames=torch.from_numpy(rng.random((3, frames, size, size)).astype(np.float32)),
        clip_id=clip_id,
    )


# -- config / containers --------------------------------------------------------

def test_config_token_counts():
    micro = FaceEncoderConfig.micro()
    assert micro.num_temporal == 2
    assert micro.num_patches == 4
    cfg = FaceEncoderConfig(frames=8, image_size=64, patch_size=16, tubelet_t=2,
                            embed_dim=8, num_heads=1)
    assert cfg.num_temporal == 4
    assert cfg.num_patches == 16


def test_config_validation():
    with pytest.raises(ValueError, match="patch_size"):
        FaceEncoderConfig(image_size=50, patch_size=16)
    with pytest.raises(ValueError, match="tubelet_t"):
        FaceEncoderConfig(frames=5, tubelet_t=2)
    with pytest.raises(ValueError, match="num_heads"):
        FaceEncoderConfig(embed_dim=10, num_heads=4)


def test_face_clip_validation():
    with pytest.raises(ShapeMismatch):
        FaceClip(frames=torch.zeros(1, 4, 32, 32))
    with pytest.raises(ShapeMismatch):
        FaceClip(frames=torch.zeros(3, 4, 32, 16))
    with pytest.raises(ShapeMismatch):
        FaceClip(frames=torch.zeros(3, 0, 32, 32))
    bad = torch.zeros(3, 1, 8, 8)
    bad[0, 0, 0, 0] = float("inf")
    with pytest.raises(NonFiniteActivation):
        FaceClip(frames=bad)


# -- tubelet embedding -----------------------------------------------------------

def test_tubelet_tokens_match_loop_oracle():
    cfg = FaceEncoderConfig.micro()
    embed = TubeletEmbed(cfg)
    clip = _clip()
    with torch.no_grad():
        tokens = tubelet_embed(clip, embed)
    assert tokens.shape == (2, 4, 8)

    w = embed.proj.weight.detach().numpy().astype(np.float64)  # (8, 3, 2, 16, 16)
    b = embed.proj.bias.detach().numpy().astype(np.float64)
    x = clip.frames.numpy().astype(np.float64)

    for ti in range(2):
        for pi in range(2):
            for pj in range(2):
                block = x[:, 2 * ti : 2 * ti + 2, 16 * pi : 16 * pi + 16, 16 * pj : 16 * pj + 16]
                want = (w * block[None]).sum(axis=(1, 2, 3, 4)) + b
                got = tokens[ti, 2 * pi + pj].numpy()
                np.testing.assert_allclose(got, want, atol=1e-6)


def test_zero_clip_zero_bias_gives_zero_tokens():
    cfg = FaceEncoderConfig.micro()
    embed = TubeletEmbed(cfg)
    clip = FaceClip(frames=torch.zeros(3, 4, 32, 32))
    with torch.no_grad():
        embed.proj.bias.zero_()
        tokens = tubelet_embed(clip, embed)
    assert torch.equal(tokens, torch.zeros(2, 4, 8))


def test_tubelet_rejects_mismatched_clip():
    embed = TubeletEmbed(FaceEncoderConfig.micro())
    with pytest.raises(ShapeMismatch):
        tubelet_embed(_clip(frames=6), embed)
    with pytest.raises(ShapeMismatch):
        tubelet_embed(_clip(size=64), embed)


# -- factorized forward oracle ------------------------------------------------------

def _layernorm(x, gamma, beta, eps=1e-5):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * gamma + beta


def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _encoder_layer(x, p, pref, heads, d):
    qkv = x @ p[pref + "self_attn.in_proj_weight"].T + p[pref + "self_attn.in_proj_bias"]
    q, k, v = qkv[:, :d], qkv[:, d : 2 * d], qkv[:, 2 * d :]
    hd = d // heads
    outs = []
    for h in range(heads):
        sl = slice(h * hd, (h + 1) * hd)
        outs.append(_softmax(q[:, sl] @ k[:, sl].T / np.sqrt(hd)) @ v[:, sl])
    attn = np.concatenate(outs, axis=-1)
    attn = attn @ p[pref + "self_attn.out_proj.weight"].T + p[pref + "self_attn.out_proj.bias"]
    x = _layernorm(x + attn, p[pref + "norm1.weight"], p[pref + "norm1.bias"])
    ff = np.maximum(x @ p[pref + "linear1.weight"].T + p[pref + "linear1.bias"], 0.0)
    ff = ff @ p[pref + "linear2.weight"].T + p[pref + "linear2.bias"]
    return _layernorm(x + ff, p[pref + "norm2.weight"], p[pref + "norm2.bias"])


def test_forward_matches_factorized_numpy_reference():
    encoder = FaceEncoder(FaceEncoderConfig.micro())
    encoder.eval()
    clip = _clip(seed=3)
    with torch.no_grad():
        got = encoder(clip.frames.unsqueeze(0)).squeeze(0).numpy()

    p = {k: v.detach().numpy().astype(np.float64) for k, v in encoder.state_dict().items()}
    d = encoder.config.embed_dim
    with torch.no_grad():
        tokens = tubelet_embed(clip, encoder.tubelets).numpy().astype(np.float64)

    index_vectors = []
    for ti in range(tokens.shape[0]):
        seq = np.concatenate([p["spatial_cls"][0], tokens[ti]], axis=0) + p["spatial_pos"][0]
        seq = _encoder_layer(seq, p, "spatial_transformer.layers.0.", 1, d)
        index_vectors.append(seq[0])
    temporal = np.concatenate([p["temporal_cls"][0], np.stack(index_vectors)], axis=0)
    temporal = temporal + p["temporal_pos"][0]
    temporal = _encoder_layer(temporal, p, "temporal_transformer.layers.0.", 1, d)
    np.testing.assert_allclose(got, temporal[0], atol=1e-5, rtol=1e-4)


def test_each_temporal_index_processed_independently():
    # spatial attention must not mix temporal indices: changing frames
    # 2..3 leaves the first index vector untouched
    encoder = FaceEncoder(FaceEncoderConfig.micro())
    encoder.eval()
    clip_a = _clip(seed=4)
    frames_b = clip_a.frames.clone()
    frames_b[:, 2:] = torch.rand_like(frames_b[:, 2:])
    with torch.no_grad():
        tok_a = encoder.tubelets(clip_a.frames.unsqueeze(0))
        tok_b = encoder.tubelets(frames_b.unsqueeze(0))
    assert torch.equal(tok_a[:, 0], tok_b[:, 0])
    assert not torch.equal(tok_a[:, 1], tok_b[:, 1])


def test_forward_sensitive_to_frame_order():
    encoder = FaceEncoder(FaceEncoderConfig.micro())
    encoder.eval()
    clip = _clip(seed=5)
    flipped = FaceClip(frames=clip.frames.flip(dims=(1,)))
    v1 = face_encode(encoder, clip)
    v2 = face_encode(encoder, flipped)
    assert not torch.allclose(v1, v2)


def test_face_encode_shape_and_determinism():
    encoder = FaceEncoder(FaceEncoderConfig.micro())
    clip = _clip(seed=6)
    v1 = face_encode(encoder, clip)
    v2 = face_encode(encoder, clip)
    assert v1.shape == (8,)
    assert torch.equal(v1, v2)


def test_face_encode_forces_eval_mode():
    cfg = FaceEncoderConfig(frames=4, image_size=32, patch_size=16, tubelet_t=2,
                            embed_dim=8, spatial_layers=1, temporal_layers=1,
                            num_heads=1, ffn_dim=16, dropout=0.5)
    encoder = FaceEncoder(cfg)
    encoder.train()
    clip = _clip(seed=7)
    assert torch.equal(face_encode(encoder, clip), face_encode(encoder, clip))
    assert encoder.training


def test_forward_rejects_wrong_geometry():
    encoder = FaceEncoder(FaceEncoderConfig.micro())
    with pytest.raises(ShapeMismatch):
        encoder(torch.rand(1, 1, 4, 32, 32))
    with pytest.raises(ShapeMismatch):
        encoder(torch.rand(1, 3, 6, 32, 32))
    with pytest.raises(ShapeMismatch):
        encoder(torch.rand(1, 3, 4, 64, 64))


# -- clip cutting -----------------------------------------------------------------

def test_windowing_counts_and_padding():
    rng = np.random.default_rng(8)
    video = rng.integers(0, 256, (40, 48, 48, 3), dtype=np.uint8)
    clips = clips_from_video(video, num_frames=16, size=32)
    assert len(clips) == 3
    assert all(c.frames.shape == (3, 16, 32, 32) for c in clips)
    # the tail window holds frames 32..39 plus eight repeats of frame 39
    tail = clips[2].frames
    for f in range(8, 16):
        assert torch.equal(tail[:, f], tail[:, 7])


def test_single_frame_video_pads_whole_clip():
    video = np.random.default_rng(9).random((1, 32, 32, 3)).astype(np.float32)
    clips = clips_from_video(video, num_frames=4, size=32)
    assert len(clips) == 1
    for f in range(1, 4):
        assert torch.equal(clips[0].frames[:, f], clips[0].frames[:, 0])


def test_exact_multiple_has_no_padding():
    video = np.random.default_rng(10).random((8, 32, 32, 3)).astype(np.float32)
    clips = clips_from_video(video, num_frames=4, size=32)
    assert len(clips) == 2
    np.testing.assert_allclose(clips[0].frames.numpy().transpose(1, 2, 3, 0), video[:4], atol=1e-7)


def test_uint8_and_float_inputs_agree():
    rng = np.random.default_rng(11)
    u8 = rng.integers(0, 256, (4, 32, 32, 3), dtype=np.uint8)
    as_float = u8.astype(np.float32) / 255.0
    c1 = clips_from_video(u8, num_frames=4, size=32)[0]
    c2 = clips_from_video(as_float, num_frames=4, size=32)[0]
    torch.testing.assert_close(c1.frames, c2.frames)


def test_resize_applied(tmp_path):
    video = np.random.default_rng(12).random((4, 64, 64, 3)).astype(np.float32)
    clips = clips_from_video(video, num_frames=4, size=32)
    assert clips[0].size == 32


def test_empty_video_rejected():
    with pytest.raises(EmptyVideo):
        clips_from_video(np.zeros((0, 32, 32, 3)), num_frames=4, size=32)
    with pytest.raises(ShapeMismatch):
        clips_from_video(np.zeros((4, 32, 32)), num_frames=4, size=32)


def test_video_face_vector_is_mean_of_clip_vectors():
    encoder = FaceEncoder(FaceEncoderConfig.micro())
    clips = [_clip(seed=s) for s in (13, 14, 15)]
    want = torch.stack([face_encode(encoder, c) for c in clips]).mean(dim=0)
    torch.testing.assert_close(video_face_vector(encoder, clips), want)
    with pytest.raises(EmptyVideo):
        video_face_vector(encoder, [])
