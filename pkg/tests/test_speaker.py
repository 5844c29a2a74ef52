import numpy as np
import pytest
import torch
import torch.nn.functional as F

from ddf.errors import PreconditionError
from ddf.frontend import Waveform, stft_spectrogram
from ddf.speaker import (SpeakerEmbedding, SpeakerEncoder, SpeakerEncoderConfig, angular_margin_loss,
                         cosine_score, embed_features, encode_speaker, fit_speaker_encoder, one_hot_code, sap_pool,
                         speaker_features)

SMALL = SpeakerEncoderConfig(stage_channels=(4, 4, 8, 8), embedding_dim=16, attention_dim=8)


def _noise(seed, n=8000):
    return stft_spectrogram(Waveform(np.random.default_rng(seed).uniform(-0.3, 0.3, n)))


def test_embeddings_unit_norm_and_deterministic():
    torch.manual_seed(0)
    enc = SpeakerEncoder(SMALL)
    for seed in range(3):
        e = encode_speaker(_noise(seed), enc)
        assert abs(np.linalg.norm(e.vector) - 1.0) <= 1e-6
        assert e.vector.shape == (16,)
    assert np.array_equal(encode_speaker(_noise(5), enc).vector, encode_speaker(_noise(5), enc).vector)


def test_default_and_deep_configs_build():
    assert SpeakerEncoder(SpeakerEncoderConfig()).head.out_features == 256
    deep = SpeakerEncoderConfig.thin_resnet34()
    assert deep.stage_blocks == (3, 4, 6, 3)
    n_blocks = len(SpeakerEncoder(deep).blocks)
    assert n_blocks == 16   # 16 basic blocks x 2 convs + stem + head = 34 layers


def test_band_mismatch_rejected():
    enc = SpeakerEncoder(SMALL)
    assert speaker_features(_noise(0), SMALL).shape[1] == SMALL.input_bands
    with pytest.raises(PreconditionError):
        embed_features(np.zeros((20, 32)), enc)


def test_sap_uniform_weights_is_mean_pooling():
    frames = torch.randn(2, 7, 5)
    pooled = sap_pool(frames, torch.zeros(2, 7))
    assert torch.allclose(pooled, frames.mean(dim=1), atol=1e-6)


def test_sap_weights_sum_to_one():
    torch.manual_seed(0)
    enc = SpeakerEncoder(SMALL)
    w = enc.pool.weights(torch.randn(3, 9, enc.frame_dim))
    assert torch.allclose(w.sum(dim=1), torch.ones(3))


def test_one_hot_codes():
    assert one_hot_code(3, 10).vector.tolist() == [0, 0, 0, 1, 0, 0, 0, 0, 0, 0]
    assert one_hot_code(0, 1).vector.tolist() == [1]
    with pytest.raises(PreconditionError):
        one_hot_code(10, 10)


def test_cosine_score_cases():
    a = SpeakerEmbedding(np.array([1.0, 0.0]))
    b = SpeakerEmbedding(np.array([0.0, 1.0]))
    assert cosine_score(a, a) == 1.0
    assert cosine_score(a, b) == 0.0
    assert cosine_score(a, SpeakerEmbedding(-a.vector)) == -1.0
    with pytest.raises(PreconditionError):
        SpeakerEmbedding(np.array([2.0, 0.0]))


def test_scaling_before_normalization_cannot_change_scores():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(8), rng.standard_normal(8)
    e = lambda v: SpeakerEmbedding(v / np.linalg.norm(v))  # noqa: E731
    assert np.isclose(cosine_score(e(37.0 * a), e(b)), cosine_score(e(a), e(b)), atol=1e-12)


def test_margin_zero_scale_one_reduces_to_cross_entropy():
    w = torch.eye(3, 4, dtype=torch.float64)
    labels = torch.tensor([0, 1, 2, 1])
    emb = w[labels]
    loss = angular_margin_loss(emb, labels, w, scale=1.0, margin=0.0)
    cos = F.normalize(emb, dim=-1) @ F.normalize(w, dim=-1).t()
    assert torch.isclose(loss, F.cross_entropy(cos, labels))


def test_loss_non_decreasing_in_margin():
    g = torch.Generator().manual_seed(0)
    emb = torch.randn(12, 8, generator=g)
    w = torch.randn(3, 8, generator=g)
    labels = torch.arange(12) % 3
    losses = [angular_margin_loss(emb, labels, w, margin=m).item() for m in (0.0, 0.1, 0.2)]
    assert losses == sorted(losses)


def test_loss_gradient_matches_finite_differences():
    g = torch.Generator().manual_seed(1)
    emb = torch.randn(6, 4, generator=g, dtype=torch.float64, requires_grad=True)
    w = torch.randn(2, 4, generator=g, dtype=torch.float64)
    labels = torch.tensor([0, 1, 0, 1, 1, 0])
    angular_margin_loss(emb, labels, w).backward()
    numeric = torch.zeros_like(emb)
    base = emb.detach().clone()
    eps = 1e-6
    for i in range(base.numel()):
        hi, lo = base.clone(), base.clone()
        hi.view(-1)[i] += eps
        lo.view(-1)[i] -= eps
        numeric.view(-1)[i] = (angular_margin_loss(hi, labels, w) - angular_margin_loss(lo, labels, w)) / (2 * eps)
    assert float((emb.grad - numeric).norm() / numeric.norm()) < 1e-4


def test_loss_preconditions():
    emb, w = torch.randn(4, 3), torch.randn(2, 3)
    with pytest.raises(PreconditionError):
        angular_margin_loss(emb, torch.zeros(4, dtype=torch.long), w)
    with pytest.raises(PreconditionError):
        angular_margin_loss(emb, torch.tensor([0, 1, 0, 1]), w, scale=0)
    with pytest.raises(PreconditionError):
        angular_margin_loss(emb, torch.tensor([0, 1, 0, 1]), w, margin=-0.1)


def test_trained_branch_separates_speakers(tiny_records):
    from ddf.frontend import load_waveform
    feats = [speaker_features(stft_spectrogram(load_waveform(r.audio_path)), SMALL) for r in tiny_records]
    labels = [r.speaker_id for r in tiny_records]
    enc = fit_speaker_encoder(feats, labels, SMALL, steps=60, batch_size=12, segment_frames=32, seed=0)
    E = np.stack([embed_features(f, enc) for f in feats])
    S = E @ E.T
    same = np.equal.outer(labels, labels)
    off = ~np.eye(len(labels), dtype=bool)
    assert S[same & off].mean() - S[~same].mean() >= 0.3


def test_fit_needs_two_speakers():
    with pytest.raises(PreconditionError):
        fit_speaker_encoder([np.zeros((10, 64))] * 2, ["a", "a"], SMALL, steps=1)
