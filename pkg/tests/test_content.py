import time

import numpy as np
import pytest
import torch

from ddf.content import (Codebook, ContentEncoder, ContentEncoderConfig, LatentSequence, encode_content,
                         latent_length, quantize, straight_through, straight_through_grad, vq_loss)
from ddf.errors import PreconditionError
from ddf.frontend import Waveform, stft_spectrogram


def brute_force_nearest(z, c):
    out = []
    for row in z:
        best, best_d = 0, np.inf
        for k in range(len(c)):
            d = float(np.sum((row - c[k]) ** 2))
            if d < best_d:
                best, best_d = k, d
        out.append(best)
    return np.array(out)


def test_quantize_matches_exhaustive_scan():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((1000, 64))
    c = rng.standard_normal((512, 64))
    t = time.perf_counter()
    q = quantize(LatentSequence(z), c)
    assert time.perf_counter() - t < 5.0
    assert np.array_equal(q.indices, brute_force_nearest(z, c))
    assert np.array_equal(q.vectors, c[q.indices])


def test_exact_entry_wins_and_ties_go_low():
    rng = np.random.default_rng(1)
    c = rng.standard_normal((16, 4))
    assert quantize(LatentSequence(c[7:8].copy()), c).indices[0] == 7
    tie = np.array([[0.0, 1.0], [0.0, -1.0]])
    assert quantize(LatentSequence(np.zeros((1, 2))), tie).indices[0] == 0


def test_quantize_accepts_codebook_module():
    cb = Codebook(8, 4)
    with torch.no_grad():
        cb.entries.copy_(torch.arange(32, dtype=torch.float32).view(8, 4))
    q = quantize(LatentSequence(np.full((2, 4), 8.2)), cb)
    assert q.indices.tolist() == [2, 2]
    torch_idx = cb.nearest(torch.full((2, 4), 8.2))
    assert torch_idx.tolist() == [2, 2]


def test_quantize_dimension_mismatch():
    with pytest.raises(PreconditionError):
        quantize(LatentSequence(np.zeros((3, 5))), np.zeros((8, 4)))


def test_encoder_output_length():
    cfg = ContentEncoderConfig(channels=8)
    enc = ContentEncoder(cfg)
    s = stft_spectrogram(Waveform(np.random.default_rng(0).uniform(-0.1, 0.1, 16000)))
    z = encode_content(s, cfg, enc)
    assert s.num_frames == 98
    assert z.vectors.shape == (49, 64) == (latent_length(98, 2), cfg.embedding_dim)
    assert latent_length(97, 2) == 49


def test_zero_projection_gives_constant_rows():
    cfg = ContentEncoderConfig(channels=8)
    enc = ContentEncoder(cfg)
    with torch.no_grad():
        enc.out.weight.zero_()
    s = stft_spectrogram(Waveform(np.random.default_rng(0).uniform(-0.1, 0.1, 8000)))
    z = encode_content(s, cfg, enc).vectors
    assert np.allclose(z, z[0:1])


def test_encoder_is_deterministic_and_checks_config():
    cfg = ContentEncoderConfig(channels=8)
    torch.manual_seed(0)
    enc = ContentEncoder(cfg)
    s = stft_spectrogram(Waveform(np.random.default_rng(0).uniform(-0.1, 0.1, 8000)))
    assert np.array_equal(encode_content(s, cfg, enc).vectors, encode_content(s, cfg, enc).vectors)
    with pytest.raises(PreconditionError):
        encode_content(s, ContentEncoderConfig(channels=16), enc)


def test_config_preconditions():
    with pytest.raises(PreconditionError):
        ContentEncoderConfig(downsample_factor=0)
    with pytest.raises(PreconditionError):
        ContentEncoderConfig(activation="tanh")


# --------------------------------------------------------------------------- loss and gradients

def _toy(seed=0):
    g = torch.Generator().manual_seed(seed)
    z = torch.randn(5, 4, generator=g, dtype=torch.float64)
    c = torch.randn(8, 4, generator=g, dtype=torch.float64)
    idx = torch.cdist(z, c).argmin(dim=1)
    return z, c, idx


def test_loss_terms_vanish_at_zero_residual():
    z = torch.randn(3, 4)
    x = torch.zeros(2, 2)
    out = vq_loss(x, x, z, z.clone())
    assert out.codebook == 0 and out.commit == 0 and out.total == 0


def test_total_is_weighted_sum_and_terms_agree():
    z, c, idx = _toy()
    x, xr = torch.randn(3, 2, dtype=torch.float64), torch.randn(3, 2, dtype=torch.float64)
    out = vq_loss(x, xr, z, c[idx], beta=0.25)
    assert torch.isclose(out.total, out.recon + out.codebook + 0.25 * out.commit)
    assert torch.isclose(out.codebook, out.commit)
    assert torch.isclose(out.recon, 0.5 * ((x - xr) ** 2).sum())


def test_categorical_reconstruction_term():
    logits = torch.randn(6, 10, dtype=torch.float64)
    target = torch.randint(0, 10, (6,))
    z = torch.zeros(2, 4)
    out = vq_loss(target, logits, z, z)
    expect = -torch.log_softmax(logits, -1)[torch.arange(6), target].sum()
    assert torch.isclose(out.recon, expect)


def _central_diff(f, x, eps=1e-6):
    g = torch.zeros_like(x)
    flat = x.view(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + eps
        hi = f().item()
        flat[i] = old - eps
        lo = f().item()
        flat[i] = old
        g.view(-1)[i] = (hi - lo) / (2 * eps)
    return g


def _rel_err(a, b):
    return float((a - b).norm() / max(b.norm().item(), 1e-12))


def test_codebook_gradient_matches_finite_differences():
    z, c, idx = _toy(1)
    x = torch.zeros(1, dtype=torch.float64)
    cb = c.clone().requires_grad_(True)
    vq_loss(x, x, z, cb[idx]).codebook.backward()
    cd = c.clone()
    numeric = _central_diff(lambda: vq_loss(x, x, z, cd[idx]).codebook, cd)
    assert _rel_err(cb.grad, numeric) < 1e-4


def test_commit_gradient_matches_finite_differences():
    z, c, idx = _toy(2)
    x = torch.zeros(1, dtype=torch.float64)
    ze = z.clone().requires_grad_(True)
    vq_loss(x, x, ze, c[idx]).commit.backward()
    zd = z.clone()
    numeric = _central_diff(lambda: vq_loss(x, x, zd, c[idx]).commit, zd)
    assert _rel_err(ze.grad, numeric) < 1e-4


def test_stop_gradient_blocks_are_exact_zeros():
    z, c, idx = _toy(3)
    x = torch.zeros(1, dtype=torch.float64)
    ze = z.clone().requires_grad_(True)
    cb = c.clone().requires_grad_(True)
    out = vq_loss(x, x, ze, cb[idx])
    gz, = torch.autograd.grad(out.codebook, ze, allow_unused=True, retain_graph=True)
    gc, = torch.autograd.grad(out.commit, cb, allow_unused=True)
    assert gz is None or torch.count_nonzero(gz) == 0
    assert gc is None or torch.count_nonzero(gc) == 0


def test_loss_preconditions():
    z = torch.zeros(2, 4)
    with pytest.raises(PreconditionError):
        vq_loss(z, z, z, z, beta=0)
    with pytest.raises(PreconditionError):
        vq_loss(z, z, z, torch.zeros(3, 4))
    with pytest.raises(PreconditionError):
        vq_loss(torch.zeros(2, 4), torch.zeros(2, 5), z, z)


def test_straight_through_identity():
    g = torch.randn(5, 3)
    assert torch.equal(straight_through_grad(g), g)
    assert torch.equal(straight_through_grad(torch.zeros(2)), torch.zeros(2))
    ze = torch.randn(5, 3, requires_grad=True)
    zq = torch.randn(5, 3, requires_grad=True)
    out = straight_through(ze, zq)
    assert torch.equal(out, zq)
    out.backward(g)
    assert torch.equal(ze.grad, g)
    assert zq.grad is None


def test_straight_through_composed_with_decoder():
    # gradient at z_e equals the decoder's gradient evaluated at z_q (numerically differentiated)
    z, c, idx = _toy(4)
    w = torch.randn(4, 3, dtype=torch.float64)

    def decoder_loss(v):
        return (torch.tanh(v @ w) ** 2).sum()

    ze = z.clone().requires_grad_(True)
    zq = c[idx]
    decoder_loss(straight_through(ze, zq)).backward()
    zq_var = zq.clone()
    numeric = _central_diff(lambda: decoder_loss(zq_var), zq_var)
    assert _rel_err(ze.grad, numeric) < 1e-6


def test_dead_codes_are_reseeded():
    cb = Codebook(4, 2)
    g = torch.Generator().manual_seed(0)
    z = torch.randn(10, 2)
    cb.init_from(z, g)
    assert bool(cb.initialized)
    lo, hi = z.min(0).values, z.max(0).values
    assert torch.all(cb.entries >= lo) and torch.all(cb.entries <= hi)
    n = cb.reseed_dead(5, torch.tensor([0]), z, patience=3, generator=g)
    assert n == 3
    rows = {tuple(r) for r in z.tolist()}
    assert all(tuple(cb.entries[k].tolist()) in rows for k in (1, 2, 3))
