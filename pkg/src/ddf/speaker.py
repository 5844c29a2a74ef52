"""Speaker branch: thin residual encoder, self-attentive pooling, cosine scoring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from ddf.errors import PreconditionError
from ddf.frontend import Spectrogram, spectral_envelope


@dataclass(frozen=True)
class SpeakerEncoderConfig:
    stage_blocks: tuple = (1, 1, 1, 1)
    stage_channels: tuple = (8, 16, 32, 64)
    input_bands: int = 64
    n_coeffs: int = 40
    embedding_dim: int = 256
    attention_dim: int = 64

    @classmethod
    def thin_resnet34(cls, **kw) -> "SpeakerEncoderConfig":
        """Full-depth variant: 3-4-6-3 basic blocks at half the usual width."""
        return cls(stage_blocks=(3, 4, 6, 3), stage_channels=(32, 64, 128, 256), **kw)


@dataclass(frozen=True)
class SpeakerEmbedding:
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64).ravel()
        if abs(np.linalg.norm(v) - 1.0) > 1e-6:
            raise PreconditionError("speaker embeddings must be unit norm")
        object.__setattr__(self, "vector", v)


@dataclass(frozen=True)
class OneHotSpeakerCode:
    index: int
    size: int

    @property
    def vector(self) -> np.ndarray:
        v = np.zeros(self.size)
        v[self.index] = 1.0
        return v


class _BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: tuple):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.skip = None
        if stride != (1, 1) or cin != cout:
            self.skip = nn.Sequential(nn.Conv2d(cin, cout, 1, stride=stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + (x if self.skip is None else self.skip(x)))


def sap_pool(frames: torch.Tensor, logits: torch.Tensor) -> torch.Tensor:
    """Attention-weighted mean over time; frames (B, T, C), logits (B, T)."""
    weights = torch.softmax(logits, dim=1)
    return (weights.unsqueeze(-1) * frames).sum(dim=1)


class SelfAttentivePooling(nn.Module):
    def __init__(self, dim: int, attention_dim: int):
        super().__init__()
        self.proj = nn.Linear(dim, attention_dim)
        self.context = nn.Linear(attention_dim, 1, bias=False)

    def weights(self, frames):
        return torch.softmax(self.context(torch.tanh(self.proj(frames))).squeeze(-1), dim=1)

    def forward(self, frames):
        logits = self.context(torch.tanh(self.proj(frames))).squeeze(-1)
        return sap_pool(frames, logits)


class SpeakerEncoder(nn.Module):
    """(B, T, bands) envelope frames -> (B, E) unit vectors."""

    def __init__(self, cfg: SpeakerEncoderConfig):
        super().__init__()
        self.cfg = cfg
        c0 = cfg.stage_channels[0]
        self.stem = nn.Sequential(nn.Conv2d(1, c0, 3, padding=1, bias=False), nn.BatchNorm2d(c0), nn.ReLU())
        blocks = []
        cin = c0
        for i, (n, cout) in enumerate(zip(cfg.stage_blocks, cfg.stage_channels)):
            for j in range(n):
                # halve the frequency axis at the start of every stage but the first
                stride = (2, 1) if (i > 0 and j == 0) else (1, 1)
                blocks.append(_BasicBlock(cin, cout, stride))
                cin = cout
        self.blocks = nn.Sequential(*blocks)
        bands = cfg.input_bands
        for _ in range(len(cfg.stage_channels) - 1):
            bands = (bands + 1) // 2
        self.frame_dim = cin * bands
        self.pool = SelfAttentivePooling(self.frame_dim, cfg.attention_dim)
        self.head = nn.Linear(self.frame_dim, cfg.embedding_dim)
        self.calls = 0

    def frame_features(self, x):
        h = self.blocks(self.stem(x.transpose(1, 2).unsqueeze(1)))  # (B, C, F', T)
        b, c, f, t = h.shape
        return h.permute(0, 3, 1, 2).reshape(b, t, c * f)

    def forward(self, x):
        if x.shape[-1] != self.cfg.input_bands:
            raise PreconditionError(f"input has {x.shape[-1]} bands, encoder expects {self.cfg.input_bands}")
        self.calls += 1
        pooled = self.pool(self.frame_features(x))
        return F.normalize(self.head(pooled), dim=-1)


def speaker_features(s: Spectrogram, cfg: SpeakerEncoderConfig) -> np.ndarray:
    return spectral_envelope(s, cfg.n_coeffs, cfg.input_bands)


@torch.no_grad()
def embed_features(features: np.ndarray, params: SpeakerEncoder) -> np.ndarray:
    was_training = params.training
    params.eval()
    try:
        out = params(torch.as_tensor(features[None], dtype=torch.float32))[0].double()
    finally:
        params.train(was_training)
    return (out / out.norm()).numpy()


def encode_speaker(s: Spectrogram, params: SpeakerEncoder) -> SpeakerEmbedding:
    if s.num_frames == 0:
        raise PreconditionError("empty spectrogram")
    return SpeakerEmbedding(embed_features(speaker_features(s, params.cfg), params))


def one_hot_code(speaker_id: int, num_speakers: int) -> OneHotSpeakerCode:
    if not 0 <= speaker_id < num_speakers:
        raise PreconditionError(f"speaker id {speaker_id} outside [0, {num_speakers})")
    return OneHotSpeakerCode(int(speaker_id), int(num_speakers))


def cosine_score(a: SpeakerEmbedding, b: SpeakerEmbedding) -> float:
    if a.vector.shape != b.vector.shape:
        raise PreconditionError("embedding dimensions differ")
    return float(np.clip(a.vector @ b.vector, -1.0, 1.0))


def angular_margin_loss(embeddings: torch.Tensor, labels: torch.Tensor, class_weights: torch.Tensor,
                        scale: float = 30.0, margin: float = 0.2) -> torch.Tensor:
    """Additive-margin softmax over cosine logits.

    logits = scale * cos(embedding, class_weight), with ``margin`` subtracted
    from the true-class cosine before scaling. Mean over the batch.
    """
    if scale <= 0:
        raise PreconditionError("scale must be positive")
    if margin < 0:
        raise PreconditionError("margin must be non-negative")
    if torch.unique(labels).numel() < 2:
        raise PreconditionError("angular margin loss needs at least two classes in the batch")
    cos = F.normalize(embeddings, dim=-1) @ F.normalize(class_weights, dim=-1).t()
    onehot = F.one_hot(labels, cos.shape[1]).to(cos.dtype)
    logits = scale * (cos - margin * onehot)
    return F.cross_entropy(logits, labels)


class SpeakerClassifier(nn.Module):
    """Encoder plus class prototypes used only while training the branch."""

    def __init__(self, cfg: SpeakerEncoderConfig, num_speakers: int):
        super().__init__()
        self.encoder = SpeakerEncoder(cfg)
        self.prototypes = nn.Parameter(torch.randn(num_speakers, cfg.embedding_dim) * 0.1)


def fit_speaker_encoder(features: list, labels: list, cfg: SpeakerEncoderConfig, steps: int = 300,
                        batch_size: int = 32, segment_frames: int = 64, learning_rate: float = 1e-3,
                        scale: float = 30.0, margin: float = 0.2, seed: int = 0, log_every: int = 50,
                        logger=None) -> SpeakerEncoder:
    """Train on per-utterance envelope frames with the angular objective."""
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise PreconditionError("speaker training needs at least two speakers")
    y = np.array([classes.index(l) for l in labels])
    torch.manual_seed(seed)
    model = SpeakerClassifier(cfg, len(classes))
    opt = torch.optim.Adam(model.parameters(), lr=learning_rate)
    rng = np.random.default_rng([seed, 7])
    model.train()
    for step in range(1, steps + 1):
        # balanced batch guarantees every class is present
        cls = np.resize(rng.permutation(len(classes)), batch_size)
        batch, targets = [], []
        for c in cls:
            i = int(rng.choice(np.flatnonzero(y == c)))
            f = features[i]
            seg = min(segment_frames, f.shape[0])
            start = int(rng.integers(0, f.shape[0] - seg + 1))
            crop = f[start:start + seg]
            if seg < segment_frames:
                crop = np.pad(crop, ((0, segment_frames - seg), (0, 0)), mode="edge")
            batch.append(crop)
            targets.append(c)
        x = torch.as_tensor(np.stack(batch), dtype=torch.float32)
        t = torch.as_tensor(targets)
        loss = angular_margin_loss(model.encoder(x), t, model.prototypes, scale, margin)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if logger is not None and (step % log_every == 0 or step == 1):
            logger.info("speaker step %d loss %.4f", step, loss.item())
    model.encoder.eval()
    model.encoder.calls = 0
    return model.encoder
