"""Decoders from the concatenated branch latent back to audio.

Two backends share one bidirectional conditioning network design:

* ``ARDecoder``: GRU over mu-law samples with two affine layers and a
  softmax, sampled one step at a time.
* ``SpectralHead``: predicts log-magnitude frames, inverted by Griffin-Lim
  (``decode_fallback``). Deterministic and fast; used by most tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from ddf.errors import PreconditionError
from ddf.frontend import (MuLawCode, N_FFT, SAMPLE_RATE, Spectrogram, Waveform, istft, mu_law_decode,
                          window_and_hop)


@dataclass(frozen=True)
class VocoderConfig:
    ar_hidden: int = 896
    affine_layers: int = 2
    output_classes: int = 1024
    cond_hidden: int = 128
    cond_layers: int = 2
    sample_bits: int = 10
    n_bins: int = N_FFT // 2 + 1

    def __post_init__(self):
        if self.output_classes != 2 ** self.sample_bits:
            raise PreconditionError("output_classes must equal 2 ** sample_bits")
        if self.affine_layers < 1:
            raise PreconditionError("need at least one affine layer")


@dataclass(frozen=True)
class ConditioningFrames:
    matrix: np.ndarray  # (rows, C), each source frame repeated ``upsample_rate`` times
    upsample_rate: int

    @property
    def source_frames(self) -> np.ndarray:
        return self.matrix[:: self.upsample_rate]

    @property
    def channels(self) -> int:
        return self.matrix.shape[1]


def upsample_conditioning(zbar: np.ndarray, rate: int) -> ConditioningFrames:
    """Nearest-frame upsampling by repetition."""
    zbar = np.asarray(zbar, dtype=np.float64)
    if zbar.ndim != 2 or zbar.shape[0] == 0:
        raise PreconditionError("conditioning must be a nonempty (frames, channels) matrix")
    if rate < 1:
        raise PreconditionError("rate must be >= 1")
    return ConditioningFrames(np.repeat(zbar, rate, axis=0), int(rate))


class ConditioningNetwork(nn.Module):
    """Bidirectional GRU over frame-rate conditioning; output width 2 * hidden."""

    def __init__(self, in_channels: int, hidden: int, layers: int):
        super().__init__()
        self.in_channels = in_channels
        self.rnn = nn.GRU(in_channels, hidden, num_layers=layers, batch_first=True, bidirectional=True)

    @property
    def out_channels(self) -> int:
        return 2 * self.rnn.hidden_size

    def forward(self, x):
        if x.shape[-1] != self.in_channels:
            raise PreconditionError(f"conditioning has {x.shape[-1]} channels, network expects {self.in_channels}")
        return self.rnn(x)[0]


class SpectralHead(nn.Module):
    """Frame-rate conditioning -> log-magnitude frames."""

    def __init__(self, in_channels: int, cfg: VocoderConfig):
        super().__init__()
        self.cond = ConditioningNetwork(in_channels, cfg.cond_hidden, cfg.cond_layers)
        self.proj = nn.Linear(self.cond.out_channels, cfg.n_bins)
        # targets are standardized per bin; statistics come from the training set
        self.register_buffer("bin_mean", torch.zeros(cfg.n_bins))
        self.register_buffer("bin_std", torch.ones(cfg.n_bins))
        # targets are peak-level normalized; synthesis restores this nominal log level
        self.register_buffer("level", torch.zeros(()))

    def forward(self, x):
        """Standardized log-magnitude prediction, (B, T, n_bins)."""
        return self.proj(self.cond(x))

    def denormalize(self, y):
        """Standardized prediction -> log magnitude at the nominal level."""
        return y * self.bin_std + self.bin_mean + self.level


class ARDecoder(nn.Module):
    def __init__(self, in_channels: int, cfg: VocoderConfig):
        super().__init__()
        self.cfg = cfg
        self.cond = ConditioningNetwork(in_channels, cfg.cond_hidden, cfg.cond_layers)
        self.rnn = nn.GRU(self.cond.out_channels + 1, cfg.ar_hidden, batch_first=True)
        layers = []
        for _ in range(cfg.affine_layers - 1):
            layers += [nn.Linear(cfg.ar_hidden, cfg.ar_hidden), nn.ReLU()]
        layers.append(nn.Linear(cfg.ar_hidden, cfg.output_classes))
        self.affine = nn.Sequential(*layers)

    def sample_conditioning(self, frames, rate: int):
        """(B, T, C) frames -> (B, T * rate, 2 * cond_hidden)."""
        return torch.repeat_interleave(self.cond(frames), rate, dim=1)

    def forward(self, frames, rate: int, prev_samples):
        """Teacher-forced logits; ``prev_samples`` (B, T * rate) holds x[t-1] in [-1, 1]."""
        c = self.sample_conditioning(frames, rate)
        h, _ = self.rnn(torch.cat([c, prev_samples.unsqueeze(-1)], dim=-1))
        return self.affine(h)


def _check_channels(cond: ConditioningFrames, params) -> None:
    expected = params.cond.in_channels
    if cond.channels != expected:
        raise PreconditionError(f"conditioning has {cond.channels} channels, decoder expects {expected}")


@torch.no_grad()
def decode_autoregressive(cond: ConditioningFrames, cfg: VocoderConfig, params: ARDecoder, seed: int,
                          return_probs: bool = False, sample_rate: int = SAMPLE_RATE):
    """Sample one mu-law class per conditioning row at temperature 1.

    With ``return_probs`` also returns the (rows, classes) per-step
    distributions.
    """
    _check_channels(cond, params)
    if params.cfg != cfg:
        raise PreconditionError("decoder parameters were built for a different configuration")
    gen = torch.Generator().manual_seed(int(seed))
    frames = torch.as_tensor(cond.source_frames[None], dtype=torch.float32)
    c = params.sample_conditioning(frames, cond.upsample_rate)[0]
    n = cond.matrix.shape[0]
    levels = torch.as_tensor(mu_law_decode(MuLawCode(np.arange(cfg.output_classes), cfg.sample_bits)).samples,
                             dtype=torch.float32)
    codes = np.empty(n, dtype=np.int64)
    probs = np.empty((n, cfg.output_classes)) if return_probs else None
    h = None
    prev = torch.zeros(1, 1, 1)
    for t in range(n):
        x = torch.cat([c[t].view(1, 1, -1), prev], dim=-1)
        out, h = params.rnn(x, h)
        p = F.softmax(params.affine(out[0, 0]).double(), dim=-1)
        k = int(torch.multinomial(p, 1, generator=gen))
        codes[t] = k
        if probs is not None:
            probs[t] = p.numpy()
        prev = levels[k].view(1, 1, 1)
    w = mu_law_decode(MuLawCode(codes, cfg.sample_bits, sample_rate))
    return (w, probs) if return_probs else w


def spectral_error(magnitude: np.ndarray, samples: np.ndarray, sample_rate: int = SAMPLE_RATE,
                   n_fft: int = N_FFT) -> float:
    """||  |STFT(x)| - S  ||_F / ||S||_F (0 when S is all zero and x reproduces it)."""
    window, hop = window_and_hop(sample_rate)
    frames = np.lib.stride_tricks.sliding_window_view(samples, window)[::hop][: magnitude.shape[0]]
    est = np.abs(np.fft.rfft(frames * np.hamming(window), n=n_fft, axis=1))
    denom = np.linalg.norm(magnitude)
    diff = np.linalg.norm(est - magnitude)
    return float(diff / denom) if denom > 0 else float(diff)


def griffin_lim(magnitude: np.ndarray, iterations: int, sample_rate: int = SAMPLE_RATE, n_fft: int = N_FFT):
    """Phase reconstruction from zero phase; returns (samples, error after each iteration)."""
    if iterations < 1:
        raise PreconditionError("iterations must be >= 1")
    magnitude = np.asarray(magnitude, dtype=np.float64)
    if magnitude.ndim != 2 or magnitude.shape[1] != n_fft // 2 + 1:
        raise PreconditionError(f"magnitude must be (frames, {n_fft // 2 + 1})")
    if np.any(magnitude < 0) or not np.all(np.isfinite(magnitude)):
        raise PreconditionError("magnitude spectrogram must be finite and nonnegative")
    window, hop = window_and_hop(sample_rate)
    win = np.hamming(window)
    x = istft(magnitude.astype(np.complex128), sample_rate, n_fft)
    errors = []
    for _ in range(iterations):
        frames = np.lib.stride_tricks.sliding_window_view(x, window)[::hop]
        spec = np.fft.rfft(frames * win, n=n_fft, axis=1)
        phase = np.exp(1j * np.angle(spec))
        x = istft(magnitude * phase, sample_rate, n_fft)
        errors.append(spectral_error(magnitude, x, sample_rate, n_fft))
    return x, errors


def decode_fallback(s_hat: Spectrogram, iterations: int = 60, return_errors: bool = False):
    """Griffin-Lim inversion; output length hop * (T - 1) + window, clipped to [-1, 1]."""
    x, errors = griffin_lim(s_hat.frames, iterations, s_hat.sample_rate, s_hat.n_fft)
    w = Waveform(np.clip(x, -1.0, 1.0), s_hat.sample_rate)
    return (w, errors) if return_errors else w
