"""Temporal head: receptive-field exactness, masking, pooling and gradients."""

import numpy as np
import pytest
import torch

from avsf.errors import EmptySequence, ShapeMismatch
from avsf.manifest import Label
from avsf.models.temporal import (
    LinearClassifier,
    MultiScaleTcn,
    Prediction,
    TcnConfig,
    classify,
    tcn_forward,
    temporal_pool,
)


# -- config --------------------------------------------------------------------

def test_receptive_field_formula():
    assert TcnConfig(in_dim=6, channels=6, kernel_sizes=(3, 5, 7), num_blocks=4).receptive_field == 25
    assert TcnConfig.micro(in_dim=16).receptive_field == 13
    assert TcnConfig(in_dim=4, channels=4, kernel_sizes=(3,), num_blocks=1).receptive_field == 3


def test_config_defaults_channels_to_in_dim():
    cfg = TcnConfig(in_dim=12, kernel_sizes=(3, 5, 7), num_blocks=2)
    assert cfg.channels == 12


def test_config_validation():
    with pytest.raises(ValueError, match="odd"):
        TcnConfig(in_dim=4, channels=4, kernel_sizes=(4,), num_blocks=1)
    with pytest.raises(ValueError, match="distinct"):
        TcnConfig(in_dim=4, channels=4, kernel_sizes=(3, 3), num_blocks=1)
    with pytest.raises(ValueError, match="divisible"):
        TcnConfig(in_dim=4, channels=4, kernel_sizes=(3, 5, 7), num_blocks=1)
    with pytest.raises(ValueError, match="dropout"):
        TcnConfig(in_dim=4, channels=4, kernel_sizes=(3,), num_blocks=1, dropout=1.0)
    with pytest.raises(ValueError):
        TcnConfig(in_dim=0)


# -- shape behaviour -----------------------------------------------------------

def _tcn(in_dim=6, channels=6, kernels=(3, 5), blocks=2):
    return MultiScaleTcn(TcnConfig(in_dim=in_dim, channels=channels,
                                   kernel_sizes=kernels, num_blocks=blocks, dropout=0.0))


def test_length_preserved():
    tcn = _tcn()
    for t in (1, 2, 9, 40):
        out = tcn(torch.randn(2, t, 6))
        assert out.shape == (2, t, 6)


def test_unbatched_wrapper():
    tcn = _tcn()
    x = torch.randn(7, 6)
    out = tcn_forward(tcn, x)
    assert out.shape == (7, 6)
    assert torch.equal(out, tcn(x.unsqueeze(0)).squeeze(0))
    with pytest.raises(ShapeMismatch):
        tcn_forward(tcn, torch.randn(2, 7, 6))


def test_rejects_wrong_feature_width():
    with pytest.raises(ShapeMismatch):
        _tcn()(torch.randn(1, 5, 7))


# -- receptive field -----------------------------------------------------------

def test_impulse_stays_inside_receptive_field():
    """Outputs whose input window excludes a perturbation are bitwise
    unchanged; the receptive field bound is exact, not nominal."""
    torch.manual_seed(1)
    cfg = TcnConfig(in_dim=6, channels=48, kernel_sizes=(3, 5, 7), num_blocks=2, dropout=0.0)
    tcn = MultiScaleTcn(cfg)
    tcn.eval()
    t_len, t0 = 24, 12
    radius = (cfg.receptive_field - 1) // 2
    assert cfg.receptive_field == 13

    base = torch.zeros(1, t_len, 6)
    poked = base.clone()
    poked[0, t0] = torch.randn(6)
    with torch.no_grad():
        y0 = tcn(base)
        y1 = tcn(poked)
    diff = (y0 != y1).any(dim=-1).squeeze(0)
    changed = torch.nonzero(diff).flatten().tolist()
    assert changed, "perturbation never reached the output"
    assert min(changed) >= t0 - radius
    assert max(changed) <= t0 + radius
    assert diff[t0]  # the poked frame itself responds


def test_impulse_reaches_the_full_radius():
    # with all-ones conv weights nothing cancels, so the change spreads
    # exactly radius frames each way
    cfg = TcnConfig(in_dim=2, channels=2, kernel_sizes=(3,), num_blocks=2, dropout=0.0)
    tcn = MultiScaleTcn(cfg)
    with torch.no_grad():
        for m in tcn.modules():
            if isinstance(m, torch.nn.Conv1d):
                m.weight.fill_(1.0)
                m.bias.fill_(0.0)
    base = torch.zeros(1, 11, 2)
    poked = base.clone()
    poked[0, 5] = 1.0
    with torch.no_grad():
        diff = (tcn(base) != tcn(poked)).any(dim=-1).squeeze(0)
    changed = torch.nonzero(diff).flatten().tolist()
    assert changed == [3, 4, 5, 6, 7]  # radius 2 on each side


def test_single_frame_input():
    tcn = _tcn()
    out = tcn(torch.randn(1, 1, 6))
    assert out.shape == (1, 1, 6)
    assert torch.isfinite(out).all()


# -- masking ---------------------------------------------------------------------

def test_masked_forward_equals_truncated_forward():
    torch.manual_seed(2)
    tcn = _tcn()
    tcn.eval()
    x = torch.randn(1, 8, 6)
    mask = torch.zeros(1, 8, dtype=torch.bool)
    mask[0, 5:] = True
    with torch.no_grad():
        masked = tcn(x, key_padding_mask=mask)
        short = tcn(x[:, :5])
    assert torch.equal(masked[:, :5], short)
    assert torch.equal(masked[:, 5:], torch.zeros(1, 3, 6))


def test_padding_content_cannot_leak():
    torch.manual_seed(3)
    tcn = _tcn()
    tcn.eval()
    x1 = torch.randn(1, 8, 6)
    x2 = x1.clone()
    x2[0, 5:] = 999.0  # garbage in the padded region
    mask = torch.zeros(1, 8, dtype=torch.bool)
    mask[0, 5:] = True
    with torch.no_grad():
        assert torch.equal(tcn(x1, key_padding_mask=mask), tcn(x2, key_padding_mask=mask))


def test_mask_shape_checked():
    tcn = _tcn()
    with pytest.raises(ShapeMismatch):
        tcn(torch.randn(1, 8, 6), key_padding_mask=torch.zeros(1, 7, dtype=torch.bool))


# -- pooling ---------------------------------------------------------------------

def test_pool_is_the_mean():
    x = torch.randn(3, 9, 4)
    torch.testing.assert_close(temporal_pool(x), x.mean(dim=1))


def test_pool_unbatched_matches_batched():
    x = torch.randn(9, 4)
    torch.testing.assert_close(temporal_pool(x), temporal_pool(x.unsqueeze(0)).squeeze(0))


def test_pool_permutation_invariant():
    x = torch.randn(1, 10, 5, dtype=torch.float64)
    perm = torch.randperm(10)
    torch.testing.assert_close(temporal_pool(x), temporal_pool(x[:, perm]))


def test_pool_masked_mean_oracle():
    x = torch.arange(12, dtype=torch.float32).reshape(1, 4, 3)
    mask = torch.tensor([[False, False, True, True]])
    want = x[0, :2].mean(dim=0, keepdim=True)
    torch.testing.assert_close(temporal_pool(x, mask), want)


def test_pool_rejects_empty():
    with pytest.raises(EmptySequence):
        temporal_pool(torch.zeros(1, 0, 4))
    mask = torch.ones(1, 4, dtype=torch.bool)
    with pytest.raises(EmptySequence):
        temporal_pool(torch.randn(1, 4, 3), mask)


def test_tcn_output_not_permutation_invariant():
    torch.manual_seed(4)
    tcn = _tcn()
    tcn.eval()
    x = torch.randn(1, 10, 6)
    perm = torch.tensor([9, 3, 5, 0, 7, 1, 8, 2, 6, 4])
    with torch.no_grad():
        a = temporal_pool(tcn(x))
        b = temporal_pool(tcn(x[:, perm]))
    assert not torch.allclose(a, b)


# -- classifier --------------------------------------------------------------------

def test_classify_softmax_oracle():
    torch.manual_seed(5)
    clf = LinearClassifier(in_dim=4)
    pooled = torch.randn(4)
    pred = classify(clf, pooled, clip_id="c1")
    w, b = clf.fc.weight.detach().numpy(), clf.fc.bias.detach().numpy()
    logits = pooled.numpy() @ w.T + b
    probs = np.exp(logits - logits.max())
    probs = probs / probs.sum()
    np.testing.assert_allclose(pred.probs.numpy(), probs, atol=1e-6)
    assert abs(pred.real_prob + pred.fake_prob - 1.0) < 1e-6
    assert pred.clip_id == "c1"


def test_tie_goes_to_fake():
    pred = Prediction(logits=torch.zeros(2), probs=torch.tensor([0.5, 0.5]),
                      pooled=torch.zeros(1))
    assert pred.predicted_label is Label.FAKE


def test_decision_follows_fake_prob():
    fake = Prediction(logits=torch.zeros(2), probs=torch.tensor([0.3, 0.7]), pooled=torch.zeros(1))
    real = Prediction(logits=torch.zeros(2), probs=torch.tensor([0.7, 0.3]), pooled=torch.zeros(1))
    assert fake.predicted_label is Label.FAKE
    assert real.predicted_label is Label.REAL


def test_prediction_requires_two_classes():
    with pytest.raises(ShapeMismatch):
        Prediction(logits=torch.zeros(3), probs=torch.zeros(3), pooled=torch.zeros(1))


# -- gradients ------------------------------------------------------------------------

def _head_double(in_dim=8, channels=8):
    cfg = TcnConfig(in_dim=in_dim, channels=channels, kernel_sizes=(3, 5),
                    num_blocks=1, dropout=0.0)
    tcn = MultiScaleTcn(cfg).double()
    clf = LinearClassifier(channels).double()
    return tcn, clf


def _loss(tcn, clf, x):
    logits = clf(temporal_pool(tcn(x)))
    return logits[:, 1].sum()


def test_gradient_matches_central_differences_wrt_input():
    torch.manual_seed(6)
    tcn, clf = _head_double()
    x = torch.randn(1, 6, 8, dtype=torch.float64, requires_grad=True)
    _loss(tcn, clf, x).backward()
    analytic = x.grad.clone()

    eps = 1e-3
    numeric = torch.zeros_like(x)
    with torch.no_grad():
        flat = x.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            up = _loss(tcn, clf, x).item()
            flat[i] = orig - eps
            down = _loss(tcn, clf, x).item()
            flat[i] = orig
            numeric.view(-1)[i] = (up - down) / (2 * eps)
    denom = analytic.abs().clamp_min(1e-8)
    rel = ((analytic - numeric).abs() / denom).max().item()
    assert rel < 1e-3


def test_gradient_matches_central_differences_wrt_weights():
    torch.manual_seed(7)
    tcn, clf = _head_double()
    x = torch.randn(1, 5, 8, dtype=torch.float64)
    weight = tcn.blocks[0].branches[0].weight
    _loss(tcn, clf, x).backward()
    analytic = weight.grad.clone()

    eps = 1e-3
    numeric = torch.zeros_like(weight)
    with torch.no_grad():
        flat = weight.view(-1)
        nflat = numeric.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            up = _loss(tcn, clf, x).item()
            flat[i] = orig - eps
            down = _loss(tcn, clf, x).item()
            flat[i] = orig
            nflat[i] = (up - down) / (2 * eps)
    rel = ((analytic - numeric).abs() / analytic.abs().clamp_min(1e-8)).max().item()
    assert rel < 1e-3


def test_torch_gradcheck_full_head():
    torch.manual_seed(8)
    tcn, clf = _head_double()

    def fn(x):
        return clf(temporal_pool(tcn(x)))

    x = torch.randn(1, 4, 8, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(fn, (x,), eps=1e-6, atol=1e-8)
