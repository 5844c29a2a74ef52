"""The filter itself: preference lookup, branch dispatch, concatenation, decoding.

Also owns joint training and the checkpoint container.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ddf.content import (Codebook, ContentEncoder, ContentEncoderConfig, LatentSequence, QuantizedSequence,
                         encode_features, quantize, straight_through, vq_loss)
from ddf.corpus import UtteranceRecord
from ddf.errors import PreconditionError, TrainingDiverged
from ddf.frontend import (MuLawCode, Spectrogram, Waveform, content_features, frame_peak_level, load_waveform,
                          mu_law_decode, mu_law_encode, normalized_log_magnitude, stft_spectrogram,
                          window_and_hop)
from ddf.preference import PreferenceOption, PreferenceProfile, TaskId, default_profile, task_set
from ddf.speaker import (SpeakerEmbedding, SpeakerEncoder, SpeakerEncoderConfig, embed_features,
                         fit_speaker_encoder, one_hot_code, speaker_features)
from ddf.vocoder import (ARDecoder, SpectralHead, VocoderConfig, decode_autoregressive, decode_fallback,
                         upsample_conditioning)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1


class OutputKind(str, enum.Enum):
    RECONSTRUCTED_AUDIO = "reconstructed-audio"
    SPEECH_EMBEDDING = "speech-embedding"
    SPEAKER_EMBEDDING = "speaker-embedding"


@dataclass(frozen=True)
class ModelConfig:
    content: ContentEncoderConfig = ContentEncoderConfig(channels=128)
    speaker: SpeakerEncoderConfig = SpeakerEncoderConfig()
    vocoder: VocoderConfig = VocoderConfig()
    codebook_size: int = 512
    beta: float = 0.25
    dead_code_steps: int = 2000
    speaker_mode: str = "embedding"
    griffin_lim_iterations: int = 60

    def __post_init__(self):
        if self.speaker_mode not in ("embedding", "one-hot"):
            raise PreconditionError("speaker_mode must be 'embedding' or 'one-hot'")

    @classmethod
    def reference(cls) -> "ModelConfig":
        """Full-width encoder and full-depth speaker network."""
        return cls(content=ContentEncoderConfig(), speaker=SpeakerEncoderConfig.thin_resnet34())

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        sp = dict(d["speaker"])
        sp["stage_blocks"] = tuple(sp["stage_blocks"])
        sp["stage_channels"] = tuple(sp["stage_channels"])
        rest = {k: v for k, v in d.items() if k not in ("content", "speaker", "vocoder")}
        return cls(content=ContentEncoderConfig(**d["content"]), speaker=SpeakerEncoderConfig(**sp),
                   vocoder=VocoderConfig(**d["vocoder"]), **rest)


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 4e-4
    batch_size: int = 64
    max_steps: int = 20000
    eval_every: int = 500
    seed: int = 0
    segment_frames: int = 48
    speaker_steps: int = 300
    speaker_batch_size: int = 32
    speaker_learning_rate: float = 1e-3
    speaker_segment_frames: int = 64
    anonymous_prob: float = 0.2
    table_prob: float = 0.4
    ar_steps: int = 0
    ar_batch_size: int = 4
    ar_segment_frames: int = 4

    def __post_init__(self):
        if self.optimizer != "adam":
            raise PreconditionError("only the Adam optimizer is supported")
        if not self.learning_rate > 0:
            raise PreconditionError("learning_rate must be positive")
        if self.batch_size < 1:
            raise PreconditionError("batch_size must be >= 1")
        if self.max_steps < 1:
            raise PreconditionError("max_steps must be >= 1")
        if self.segment_frames < 2 or self.segment_frames % 2:
            raise PreconditionError("segment_frames must be an even number >= 2")
        if not 0 <= self.anonymous_prob + self.table_prob <= 1:
            raise PreconditionError("conditioning probabilities must sum to at most 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class DDFModels(nn.Module):
    """Every trained part of the filter, plus the metadata needed to use it."""

    def __init__(self, cfg: ModelConfig, speakers: list[str]):
        super().__init__()
        if len(speakers) < 1:
            raise PreconditionError("need at least one speaker")
        self.cfg = cfg
        self.speakers = list(speakers)
        c = cfg.content
        self.content_encoder = ContentEncoder(c)
        self.codebook = Codebook(cfg.codebook_size, c.embedding_dim)
        self.speaker_encoder = SpeakerEncoder(cfg.speaker)
        # one row per known speaker plus a final anonymous row
        self.speaker_table = nn.Parameter(torch.zeros(len(speakers) + 1, cfg.speaker.embedding_dim))
        width = c.embedding_dim + cfg.speaker.embedding_dim
        self.spectral_head = SpectralHead(width, cfg.vocoder)
        self.ar_decoder = ARDecoder(width, cfg.vocoder)
        self.loss_history: list[float] = []
        self.train_config: dict = {}
        self._checkpoint_id = None

    @property
    def anonymous_index(self) -> int:
        return len(self.speakers)

    def branch_width(self, task: TaskId) -> int:
        if task == TaskId.SPEECH_RECOGNITION:
            return self.cfg.content.embedding_dim
        if task == TaskId.SPEAKER_VERIFICATION:
            if self.cfg.speaker_mode == "one-hot":
                return len(self.speakers)
            return self.cfg.speaker.embedding_dim
        raise PreconditionError(f"no model for branch {task.value}")

    def config_record(self) -> dict:
        return {"model": self.cfg.to_dict(), "speakers": self.speakers, "train": self.train_config}

    @property
    def checkpoint_id(self) -> str:
        # parameters are frozen once trained or loaded, so the hash is cached
        if self._checkpoint_id is None:
            self._checkpoint_id = fingerprint(self)
        return self._checkpoint_id


# --------------------------------------------------------------------------- checkpoints

def _state_arrays(models: DDFModels) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in sorted(models.state_dict().items())}


def fingerprint(models: DDFModels) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(models.config_record(), sort_keys=True).encode())
    for k, v in _state_arrays(models).items():
        h.update(k.encode())
        h.update(np.ascontiguousarray(v).tobytes())
    return h.hexdigest()[:16]


def save_checkpoint(models: DDFModels, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"param/{k}": v for k, v in _state_arrays(models).items()}
    meta = {"format_version": CHECKPOINT_FORMAT, "fingerprint": fingerprint(models), **models.config_record()}
    arrays["meta/config"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    arrays["meta/loss_history"] = np.asarray(models.loss_history, dtype=np.float64)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    path.write_bytes(buf.getvalue())
    return path


def load_checkpoint(path) -> DDFModels:
    path = Path(path)
    if not path.is_file():
        raise PreconditionError(f"missing checkpoint: {path}")
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(bytes(z["meta/config"]).decode())
        if meta.get("format_version") != CHECKPOINT_FORMAT:
            raise PreconditionError(f"{path}: unsupported checkpoint format {meta.get('format_version')!r}")
        models = DDFModels(ModelConfig.from_dict(meta["model"]), meta["speakers"])
        models.train_config = meta.get("train", {})
        state = {k[len("param/"):]: torch.from_numpy(z[k].copy()) for k in z.files if k.startswith("param/")}
        models.load_state_dict(state)
        models.loss_history = z["meta/loss_history"].tolist()
    models.eval()
    models._checkpoint_id = None
    if fingerprint(models) != meta["fingerprint"]:
        raise PreconditionError(f"{path}: fingerprint mismatch, checkpoint is corrupt")
    return models


# --------------------------------------------------------------------------- training

@dataclass
class _Utterance:
    content: np.ndarray   # (T, n_ceps) mean-normalized cepstra
    logmag: np.ndarray    # (T, bins) level-normalized decoder target
    level: float          # median frame peak level
    speaker_feats: np.ndarray
    speaker: int
    samples: np.ndarray


def _prepare(records, speakers: list[str], cfg: ModelConfig) -> list[_Utterance]:
    out = []
    for r in records:
        w = load_waveform(r.audio_path)
        s = stft_spectrogram(w)
        out.append(_Utterance(
            content_features(s, cfg.content.input_dim).astype(np.float32),
            normalized_log_magnitude(s).astype(np.float32),
            float(np.median(frame_peak_level(s))),
            speaker_features(s, cfg.speaker).astype(np.float32),
            speakers.index(r.speaker_id),
            w.samples.astype(np.float32),
        ))
    return out


def _crop(rng, T: int, length: int, factor: int) -> tuple[int, int]:
    length = min(length, T - T % factor) if T >= factor else T
    start = int(rng.integers(0, (T - length) // factor + 1)) * factor
    return start, length


def train(records: list[UtteranceRecord], cfg: TrainConfig = TrainConfig(),
          model_cfg: ModelConfig = ModelConfig()) -> DDFModels:
    """Pretrain the speaker branch, then jointly train content branch and decoders."""
    records = list(records)
    if len(records) < 2:
        raise PreconditionError("corpus too small: need at least 2 utterances")
    speakers = sorted({r.speaker_id for r in records})
    if len(speakers) < 2:
        raise PreconditionError("corpus must contain at least 2 speakers")
    if any(not r.transcript for r in records):
        raise PreconditionError("every training utterance needs a nonempty transcript")

    torch.manual_seed(cfg.seed)
    models = DDFModels(model_cfg, speakers)
    models.train_config = cfg.to_dict()
    data = _prepare(records, speakers, model_cfg)
    f = model_cfg.content.downsample_factor

    log.info("pretraining speaker branch for %d steps", cfg.speaker_steps)
    enc = fit_speaker_encoder([u.speaker_feats for u in data], [u.speaker for u in data], model_cfg.speaker,
                              steps=cfg.speaker_steps, batch_size=cfg.speaker_batch_size,
                              segment_frames=cfg.speaker_segment_frames,
                              learning_rate=cfg.speaker_learning_rate, seed=cfg.seed, logger=log)
    models.speaker_encoder.load_state_dict(enc.state_dict())
    models.speaker_encoder.eval()
    for p in models.speaker_encoder.parameters():
        p.requires_grad_(False)
    emb = np.stack([embed_features(u.speaker_feats, models.speaker_encoder) for u in data])
    models.speaker_encoder.calls = 0
    spk = np.array([u.speaker for u in data])
    with torch.no_grad():
        rows = [emb[spk == i].mean(0) for i in range(len(speakers))]
        rows.append(np.mean(rows, axis=0))
        models.speaker_table.copy_(torch.as_tensor(np.stack(rows), dtype=torch.float32))
    emb_t = torch.as_tensor(emb, dtype=torch.float32)

    frames = np.concatenate([u.logmag for u in data])
    head = models.spectral_head
    head.bin_mean.copy_(torch.as_tensor(frames.mean(0)))
    head.bin_std.copy_(torch.as_tensor(frames.std(0) + 1e-3))
    head.level.fill_(float(np.median([u.level for u in data])))

    params = (list(models.content_encoder.parameters()) + list(models.codebook.parameters())
              + list(head.parameters()) + [models.speaker_table])
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)
    rng = np.random.default_rng([cfg.seed, 11])
    gen = torch.Generator().manual_seed(cfg.seed)
    anon = models.anonymous_index
    models.content_encoder.train()
    head.train()
    running = []
    for step in range(1, cfg.max_steps + 1):
        pick = rng.integers(0, len(data), cfg.batch_size)
        T_min = min(data[i].content.shape[0] for i in pick)
        length = min(cfg.segment_frames, T_min - T_min % f)
        xs, ys = [], []
        for i in pick:
            start, _ = _crop(rng, data[i].content.shape[0], length, f)
            xs.append(data[i].content[start:start + length])
            ys.append(data[i].logmag[start:start + length])
        x = torch.as_tensor(np.stack(xs)).transpose(1, 2)
        y = (torch.as_tensor(np.stack(ys)) - head.bin_mean) / head.bin_std
        u = rng.random(cfg.batch_size)
        which = np.where(u < cfg.anonymous_prob, anon, np.where(u < cfg.anonymous_prob + cfg.table_prob,
                                                               spk[pick], -1))
        table_rows = models.speaker_table[torch.as_tensor(np.where(which < 0, 0, which))]
        use_emb = torch.as_tensor(which < 0).unsqueeze(-1)
        spk_vec = torch.where(use_emb, emb_t[torch.as_tensor(pick)], table_rows)

        ze = models.content_encoder(x).transpose(1, 2)          # (B, T', D)
        flat = ze.reshape(-1, ze.shape[-1])
        if not bool(models.codebook.initialized):
            models.codebook.init_from(flat.detach(), gen)
        idx = models.codebook.nearest(flat.detach())
        zq = models.codebook.lookup(idx)
        z_dec = straight_through(flat, zq).view_as(ze)
        # Table and anonymous rows carry no gender or emotion, so reconstructing
        # through them would reward the encoder for leaking those. Those items
        # train the rows and the decoder only.
        z_dec = torch.where(use_emb.unsqueeze(1), z_dec, z_dec.detach())
        content = torch.repeat_interleave(z_dec, f, dim=1)[:, :length]
        cond = torch.cat([content, spk_vec.unsqueeze(1).expand(-1, length, -1)], dim=-1)
        pred = head(cond)
        losses = vq_loss(y, pred, flat, zq, model_cfg.beta, reduction="mean")
        value = losses.total.item()
        if not math.isfinite(value):
            raise TrainingDiverged(
                f"non-finite loss at step {step} (recon={losses.recon.item()}, "
                f"codebook={losses.codebook.item()}, commit={losses.commit.item()})")
        opt.zero_grad()
        losses.total.backward()
        opt.step()
        models.codebook.reseed_dead(step, torch.unique(idx), flat.detach(), model_cfg.dead_code_steps, gen)
        models.loss_history.append(value)
        running.append(value)
        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            log.info("step %d loss %.4f (recon %.4f, codebook %.4f)", step, float(np.mean(running)),
                     losses.recon.item(), losses.codebook.item())
            running = []

    if cfg.ar_steps > 0:
        _train_autoregressive(models, data, emb_t, cfg, rng)
    models.eval()
    models.speaker_encoder.calls = 0
    models._checkpoint_id = None
    return models


def _train_autoregressive(models: DDFModels, data, emb_t, cfg: TrainConfig, rng):
    """Teacher-forced mu-law training of the sample-level decoder on frozen latents."""
    f = models.cfg.content.downsample_factor
    _, hop = window_and_hop()
    rate = f * hop
    bits = models.cfg.vocoder.sample_bits
    dec = models.ar_decoder
    opt = torch.optim.Adam(dec.parameters(), lr=cfg.learning_rate)
    dec.train()
    for step in range(1, cfg.ar_steps + 1):
        conds, targets, prevs = [], [], []
        for i in rng.integers(0, len(data), cfg.ar_batch_size):
            u = data[i]
            with torch.no_grad():
                ze = encode_features(u.content, models.content_encoder)
            q = quantize(LatentSequence(ze), models.codebook)
            n = min(cfg.ar_segment_frames, q.vectors.shape[0])
            start = int(rng.integers(0, q.vectors.shape[0] - n + 1))
            spk_vec = emb_t[i].numpy()
            c = np.concatenate([q.vectors[start:start + n], np.tile(spk_vec, (n, 1))], axis=1)
            w = u.samples
            seg = np.zeros(n * rate)
            piece = w[start * rate:(start + n) * rate]
            seg[:piece.size] = piece
            codes = mu_law_encode(Waveform(seg), bits).codes
            decoded = mu_law_decode(MuLawCode(codes, bits)).samples
            conds.append(c)
            targets.append(codes)
            prevs.append(np.concatenate([[0.0], decoded[:-1]]))
        frames = torch.as_tensor(np.stack(conds), dtype=torch.float32)
        logits = dec(frames, rate, torch.as_tensor(np.stack(prevs), dtype=torch.float32))
        tgt = torch.as_tensor(np.stack(targets))
        loss = nn.functional.cross_entropy(logits.reshape(-1, logits.shape[-1]), tgt.reshape(-1))
        if not math.isfinite(loss.item()):
            raise TrainingDiverged(f"non-finite autoregressive loss at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % cfg.eval_every == 0 or step == cfg.ar_steps:
            log.info("autoregressive step %d loss %.4f", step, loss.item())
    dec.eval()


# --------------------------------------------------------------------------- filtering

@dataclass(frozen=True)
class DisentangledLatent:
    matrix: np.ndarray                  # (T', sum of branch widths)
    branches: tuple                     # ((task id, width), ...) in task order
    quantized: QuantizedSequence
    speaker: SpeakerEmbedding | None = None
    num_frames: int = 0

    @property
    def channels(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class FilterRequest:
    input: Waveform
    preference: PreferenceOption
    output_kind: OutputKind = OutputKind.RECONSTRUCTED_AUDIO
    seed: int = 0
    vocoder: str = "fallback"
    speaker_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "preference", PreferenceOption(self.preference))
        object.__setattr__(self, "output_kind", OutputKind(self.output_kind))
        if self.output_kind == OutputKind.SPEAKER_EMBEDDING and self.preference != PreferenceOption.MODERATE:
            raise PreconditionError("speaker-embedding output is only available under the moderate option")
        if self.vocoder not in ("fallback", "autoregressive"):
            raise PreconditionError("vocoder must be 'fallback' or 'autoregressive'")


@dataclass(frozen=True)
class Provenance:
    preference: str
    branches: tuple
    checkpoint_id: str | None
    seed: int
    output_kind: str
    vocoder: str | None

    def to_dict(self) -> dict:
        return {"preference": self.preference, "branches": [list(b) for b in self.branches],
                "checkpoint_id": self.checkpoint_id, "seed": self.seed, "output_kind": self.output_kind,
                "vocoder": self.vocoder}


@dataclass(frozen=True)
class FilterResult:
    payload: object
    provenance: Provenance


def _spectrogram(x) -> Spectrogram:
    return x if isinstance(x, Spectrogram) else stft_spectrogram(x)


def disentangle(x, P, models: DDFModels, speaker_id: str | None = None) -> DisentangledLatent:
    """Run only the branches for tasks in ``P`` and concatenate them in task order."""
    P = [TaskId(t) for t in P]
    if not P:
        raise PreconditionError("empty task set: use passthrough instead of disentangling")
    for t in P:
        models.branch_width(t)   # raises for tasks without a branch
    if TaskId.SPEECH_RECOGNITION not in P:
        raise PreconditionError("the decoder needs the content branch (T1)")
    s = _spectrogram(x)
    feats = content_features(s, models.cfg.content.input_dim)
    z = LatentSequence(encode_features(feats, models.content_encoder))
    q = quantize(z, models.codebook)
    blocks = [q.vectors]
    branches = [(TaskId.SPEECH_RECOGNITION.value, q.vectors.shape[1])]
    emb = None
    if TaskId.SPEAKER_VERIFICATION in P:
        if models.cfg.speaker_mode == "one-hot":
            if speaker_id is None:
                raise PreconditionError("one-hot speaker mode needs a known speaker id")
            if speaker_id not in models.speakers:
                raise PreconditionError(f"unknown speaker {speaker_id!r}")
            vec = one_hot_code(models.speakers.index(speaker_id), len(models.speakers)).vector
        else:
            emb = SpeakerEmbedding(embed_features(speaker_features(s, models.cfg.speaker), models.speaker_encoder))
            vec = emb.vector
        blocks.append(np.tile(vec, (q.vectors.shape[0], 1)))
        branches.append((TaskId.SPEAKER_VERIFICATION.value, vec.size))
    return DisentangledLatent(np.concatenate(blocks, axis=1), tuple(branches), q, emb, s.num_frames)


def decoder_input(latent: DisentangledLatent, models: DDFModels) -> np.ndarray:
    """Map z-bar to the decoder's fixed (content + speaker vector) layout."""
    d = models.cfg.content.embedding_dim
    content = latent.matrix[:, :d]
    table = models.speaker_table.detach().double().numpy()
    if len(latent.branches) == 1:
        spk = table[models.anonymous_index]
    elif models.cfg.speaker_mode == "one-hot":
        spk = latent.matrix[0, d:] @ table[:-1]
    else:
        spk = latent.matrix[0, d:]
    return np.concatenate([content, np.tile(spk, (content.shape[0], 1))], axis=1)


@torch.no_grad()
def predict_spectrogram(latent: DisentangledLatent, models: DDFModels) -> Spectrogram:
    f = models.cfg.content.downsample_factor
    cond = upsample_conditioning(decoder_input(latent, models), f).matrix[: latent.num_frames]
    head = models.spectral_head
    y = head(torch.as_tensor(cond[None], dtype=torch.float32))[0]
    logmag = head.denormalize(y).double().numpy()
    return Spectrogram(np.exp(np.minimum(logmag, 10.0)))


def decode(latent: DisentangledLatent, models: DDFModels, vocoder: str = "fallback", seed: int = 0) -> Waveform:
    if vocoder == "fallback":
        return decode_fallback(predict_spectrogram(latent, models), models.cfg.griffin_lim_iterations)
    _, hop = window_and_hop()
    cond = upsample_conditioning(decoder_input(latent, models), models.cfg.content.downsample_factor * hop)
    return decode_autoregressive(cond, models.cfg.vocoder, models.ar_decoder, seed)


def filter(req: FilterRequest, models: DDFModels | None, profile: PreferenceProfile | None = None) -> FilterResult:
    """Apply the user's option to one utterance."""
    profile = profile or default_profile()
    P = task_set(req.preference, profile)
    kind = req.output_kind
    if not P:
        if kind != OutputKind.RECONSTRUCTED_AUDIO:
            raise PreconditionError(f"{kind.value} output needs at least one permitted task")
        prov = Provenance(req.preference.value, (), None, req.seed, kind.value, None)
        return FilterResult(req.input, prov)
    if models is None:
        raise PreconditionError(f"missing model for branches {[t.value for t in P]}")
    if kind == OutputKind.SPEAKER_EMBEDDING and TaskId.SPEAKER_VERIFICATION not in P:
        raise PreconditionError("speaker-embedding output needs the speaker branch to be permitted")
    if kind == OutputKind.SPEECH_EMBEDDING:
        P = [TaskId.SPEECH_RECOGNITION]
    elif kind == OutputKind.SPEAKER_EMBEDDING:
        if models.cfg.speaker_mode == "one-hot":
            raise PreconditionError("speaker-embedding output needs the learned speaker encoder")
        s = stft_spectrogram(req.input)
        emb = SpeakerEmbedding(embed_features(speaker_features(s, models.cfg.speaker), models.speaker_encoder))
        prov = Provenance(req.preference.value, ((TaskId.SPEAKER_VERIFICATION.value, emb.vector.size),),
                          models.checkpoint_id, req.seed, kind.value, None)
        return FilterResult(emb, prov)
    latent = disentangle(req.input, P, models, req.speaker_id)
    if kind == OutputKind.SPEECH_EMBEDDING:
        payload = latent.quantized
        vocoder = None
    else:
        payload = decode(latent, models, req.vocoder, req.seed)
        vocoder = req.vocoder
    prov = Provenance(req.preference.value, latent.branches, models.checkpoint_id, req.seed, kind.value, vocoder)
    return FilterResult(payload, prov)
