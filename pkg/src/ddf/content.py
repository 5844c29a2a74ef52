"""Content branch: residual conv encoder followed by a 512-entry vector quantizer.

The encoder reads mean-normalized cepstra (see ``frontend.content_features``),
so loudness, pitch fine structure and any utterance-constant colouring are
gone before quantization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from ddf import kernels
from ddf.errors import PreconditionError
from ddf.frontend import Spectrogram, content_features


@dataclass(frozen=True)
class ContentEncoderConfig:
    num_residual_layers: int = 5
    channels: int = 768
    activation: str = "relu"
    downsample_factor: int = 2
    input_dim: int = 40
    embedding_dim: int = 64
    kernel_size: int = 3

    def __post_init__(self):
        if self.downsample_factor < 1:
            raise PreconditionError("downsample_factor must be >= 1")
        if self.activation != "relu":
            raise PreconditionError("only the rectified-linear activation is supported")


@dataclass(frozen=True)
class LatentSequence:
    vectors: np.ndarray  # (T', D)


@dataclass(frozen=True)
class QuantizedSequence:
    vectors: np.ndarray  # (T', D), rows copied from the codebook
    indices: np.ndarray  # (T',) int64


class VQLoss(NamedTuple):
    total: torch.Tensor
    recon: torch.Tensor
    codebook: torch.Tensor
    commit: torch.Tensor


class _ResidualLayer(nn.Module):
    def __init__(self, channels: int, kernel_size: int):
        super().__init__()
        self.conv = nn.Conv1d(channels, channels, kernel_size, padding=kernel_size // 2)
        self.proj = nn.Conv1d(channels, channels, 1)

    def forward(self, x):
        return x + self.proj(F.relu(self.conv(F.relu(x))))


class ContentEncoder(nn.Module):
    """(B, input_dim, T) -> (B, embedding_dim, ceil(T / downsample_factor))."""

    def __init__(self, cfg: ContentEncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.inp = nn.Conv1d(cfg.input_dim, cfg.channels, cfg.kernel_size, padding=cfg.kernel_size // 2)
        self.layers = nn.ModuleList(
            [_ResidualLayer(cfg.channels, cfg.kernel_size) for _ in range(cfg.num_residual_layers)]
        )
        self.out = nn.Conv1d(cfg.channels, cfg.embedding_dim, 1)

    def forward(self, x):
        h = self.inp(x)
        for layer in self.layers:
            h = layer(h)
        h = F.relu(h)
        if self.cfg.downsample_factor > 1:
            f = self.cfg.downsample_factor
            h = F.avg_pool1d(h, f, f, ceil_mode=True)
        return self.out(h)


class Codebook(nn.Module):
    def __init__(self, size: int = 512, dim: int = 64):
        super().__init__()
        self.entries = nn.Parameter(torch.zeros(size, dim))
        self.register_buffer("last_used", torch.zeros(size, dtype=torch.long))
        self.register_buffer("initialized", torch.zeros((), dtype=torch.bool))

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    @torch.no_grad()
    def init_from(self, z: torch.Tensor, generator: torch.Generator):
        """Draw entries uniformly inside the per-dimension range of ``z`` (N, D)."""
        lo = z.min(dim=0).values
        hi = z.max(dim=0).values
        u = torch.rand(self.size, self.dim, generator=generator, dtype=z.dtype)
        self.entries.copy_(lo + u * (hi - lo))
        self.initialized.fill_(True)

    def lookup(self, indices: torch.Tensor) -> torch.Tensor:
        return self.entries[indices]

    def nearest(self, z: torch.Tensor) -> torch.Tensor:
        """Indices of nearest entries for rows of ``z`` (N, D); first index wins ties."""
        c = self.entries
        dist = (z * z).sum(1, keepdim=True) - 2.0 * z @ c.t() + (c * c).sum(1)[None, :]
        return dist.argmin(dim=1)

    @torch.no_grad()
    def reseed_dead(self, step: int, used: torch.Tensor, z: torch.Tensor, patience: int,
                    generator: torch.Generator) -> int:
        """Re-seed entries unused for ``patience`` steps to random rows of ``z``."""
        self.last_used[used] = step
        dead = torch.nonzero(step - self.last_used >= patience).flatten()
        if dead.numel() == 0:
            return 0
        pick = torch.randint(0, z.shape[0], (dead.numel(),), generator=generator)
        self.entries[dead] = z[pick].to(self.entries.dtype)
        self.last_used[dead] = step
        return int(dead.numel())


class _StraightThrough(torch.autograd.Function):
    @staticmethod
    def forward(ctx, z_e, z_q):
        return z_q.clone()

    @staticmethod
    def backward(ctx, grad):
        return straight_through_grad(grad), None


def straight_through_grad(zq_grad):
    """Gradient w.r.t. z_e given the gradient w.r.t. z_q: copied unchanged."""
    return zq_grad


def straight_through(z_e: torch.Tensor, z_q: torch.Tensor) -> torch.Tensor:
    """Forward value of ``z_q``; backward routes the gradient to ``z_e`` only."""
    return _StraightThrough.apply(z_e, z_q)


def _reduce(x: torch.Tensor, reduction: str) -> torch.Tensor:
    if reduction == "sum":
        return x.sum()
    if reduction == "mean":
        return x.mean()
    raise PreconditionError(f"unknown reduction {reduction!r}")


def vq_loss(x_target, x_recon, z, zq, beta: float = 0.25, reduction: str = "sum") -> VQLoss:
    """Reconstruction NLL plus codebook and commitment terms.

    Integer targets use a categorical NLL over the last axis of ``x_recon``;
    real targets use a unit-variance Gaussian NLL (constant dropped).
    ``codebook`` only reaches the codebook and ``commit`` only reaches ``z``.
    """
    if beta <= 0:
        raise PreconditionError("beta must be positive")
    if z.shape != zq.shape:
        raise PreconditionError(f"latent shape {tuple(z.shape)} != quantized shape {tuple(zq.shape)}")
    if x_target.dtype in (torch.int64, torch.int32):
        if x_recon.shape[:-1] != x_target.shape:
            raise PreconditionError("logits and targets disagree in shape")
        nll = F.cross_entropy(x_recon.reshape(-1, x_recon.shape[-1]), x_target.reshape(-1), reduction="none")
        recon = _reduce(nll, reduction)
    else:
        if x_recon.shape != x_target.shape:
            raise PreconditionError("reconstruction and target disagree in shape")
        recon = _reduce(0.5 * (x_recon - x_target) ** 2, reduction)
    codebook = _reduce((z.detach() - zq) ** 2, reduction)
    commit = _reduce((z - zq.detach()) ** 2, reduction)
    return VQLoss(recon + codebook + beta * commit, recon, codebook, commit)


def _check_params(cfg: ContentEncoderConfig, params: ContentEncoder):
    if params.cfg != cfg:
        raise PreconditionError("encoder parameters were built for a different configuration")


@torch.no_grad()
def encode_features(features: np.ndarray, params: ContentEncoder) -> np.ndarray:
    x = torch.as_tensor(features.T[None], dtype=torch.float32)
    return params(x)[0].T.double().numpy()


def encode_content(s: Spectrogram, cfg: ContentEncoderConfig, params: ContentEncoder) -> LatentSequence:
    """Encoder output z_e for one spectrogram, shape (ceil(T / f), D)."""
    _check_params(cfg, params)
    if s.num_frames == 0:
        raise PreconditionError("empty spectrogram")
    feats = content_features(s, cfg.input_dim)
    return LatentSequence(encode_features(feats, params))


def quantize(z: LatentSequence, cb) -> QuantizedSequence:
    """Nearest-entry quantization; ``cb`` is a Codebook or a (K, D) array."""
    entries = cb.entries.detach().double().numpy() if isinstance(cb, Codebook) else np.asarray(cb, np.float64)
    vectors = np.asarray(z.vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[1] != entries.shape[1]:
        raise PreconditionError(
            f"latent dimension {vectors.shape[-1]} does not match codebook dimension {entries.shape[1]}")
    idx = kernels.nearest_codes(vectors, entries)
    return QuantizedSequence(entries[idx].copy(), idx)


def latent_length(num_frames: int, downsample_factor: int) -> int:
    return int(math.ceil(num_frames / downsample_factor))
