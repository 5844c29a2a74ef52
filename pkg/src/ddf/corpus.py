"""Manifests, the 80/20 split and the synthetic factorized corpus.

Synthetic utterances are built from fixed-length tone units. Each token owns
a carrier frequency placed on an FFT bin centre above 1 kHz; the speaker owns
a voiced harmonic source below 1 kHz (base pitch plus a resonance profile);
gender scales the pitch register; emotion sets gain, tremolo depth and
vibrato depth. All factors are drawn independently.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ddf.errors import PreconditionError
from ddf.frontend import (N_FFT, SAMPLE_RATE, Waveform, bin_frequencies, save_waveform,
                          stft_spectrogram, window_and_hop)

log = logging.getLogger(__name__)

MANIFEST_FIELDS = ("path", "speaker_id", "gender", "emotion", "transcript")
LABEL_FIELDS = ("speaker_id", "gender", "emotion")

# token k sits on FFT bin _TOKEN_BASE_BIN + _TOKEN_BIN_STEP * k
_TOKEN_BASE_BIN = 38
_TOKEN_BIN_STEP = 5
_MAX_VOCAB = (N_FFT // 2 - _TOKEN_BASE_BIN) // _TOKEN_BIN_STEP - 1
_VOICING_CEILING_HZ = 1000.0
_VIBRATO_HZ = 5.5
_TREMOLO_HZ = 3.0
_FADE_S = 0.008
_CARRIER_LEVEL = 0.55
_VOICING_LEVEL = 0.35
_NOISE_LEVEL = 0.003


@dataclass(frozen=True)
class UtteranceRecord:
    audio_path: Path
    speaker_id: str
    gender: str
    emotion: str
    transcript: tuple = ()

    @property
    def utt_id(self) -> str:
        return Path(self.audio_path).stem

    def label(self, attribute: str) -> str:
        return getattr(self, attribute)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    stratify_by: str | None = None


@dataclass(frozen=True)
class SynthCorpusSpec:
    num_utterances: int = 200
    num_speakers: int = 4
    num_emotions: int = 4
    token_vocab_size: int = 16
    duration_range: tuple = (1.0, 2.0)
    seed: int = 0
    num_genders: int = 2
    unit_seconds: float = 0.15
    sample_rate: int = SAMPLE_RATE

    def validate(self):
        counts = (self.num_utterances, self.num_speakers, self.num_emotions, self.num_genders)
        if min(counts) < 1:
            raise PreconditionError("corpus counts must be >= 1")
        if not 2 <= self.token_vocab_size <= _MAX_VOCAB:
            raise PreconditionError(f"token_vocab_size must be in [2, {_MAX_VOCAB}]")
        lo, hi = self.duration_range
        if not 0 < lo <= hi:
            raise PreconditionError("duration_range must satisfy 0 < low <= high")
        if self.sample_rate != SAMPLE_RATE:
            raise PreconditionError("synthesis runs at 16 kHz only")


# ---------------------------------------------------------------- manifests

def parse_manifest(path, require_transcript: bool = False) -> list[UtteranceRecord]:
    """Read a ``path,speaker_id,gender,emotion,transcript`` manifest.

    Audio paths are resolved relative to the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise PreconditionError(f"missing manifest: {path}")
    root = path.parent
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise PreconditionError(f"{path}: empty manifest")
        header = [h.strip() for h in header]
        unknown = [h for h in header if h not in MANIFEST_FIELDS]
        if unknown:
            raise PreconditionError(f"{path}: unknown field(s) {unknown}")
        missing = [f for f in MANIFEST_FIELDS if f not in header]
        if missing:
            raise PreconditionError(f"{path}: header lacks field(s) {missing}")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise PreconditionError(
                    f"{path}:{lineno}: malformed line, expected {len(header)} fields, got {len(row)}")
            rec = dict(zip(header, (v.strip() for v in row)))
            if not rec["path"]:
                raise PreconditionError(f"{path}:{lineno}: empty audio path")
            tokens = tuple(rec["transcript"].split())
            if require_transcript and not tokens:
                raise PreconditionError(f"{path}:{lineno}: missing transcript")
            records.append(UtteranceRecord(
                audio_path=(root / rec["path"]),
                speaker_id=rec["speaker_id"],
                gender=rec["gender"],
                emotion=rec["emotion"],
                transcript=tokens,
            ))
    report = label_report(records)
    log.info("parsed %d records from %s; label sets %s", len(records), path, report)
    return records


def label_sets(records) -> dict[str, list[str]]:
    return {f: sorted({r.label(f) for r in records}) for f in LABEL_FIELDS}


def label_report(records) -> dict[str, int]:
    sets = label_sets(records)
    return {"gender": len(sets["gender"]), "emotion": len(sets["emotion"]),
            "speaker_id": len(sets["speaker_id"])}


def write_manifest(path, records) -> Path:
    path = Path(path)
    root = path.parent
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for r in records:
            try:
                rel = Path(r.audio_path).relative_to(root)
            except ValueError:
                rel = Path(r.audio_path)
            writer.writerow([rel.as_posix(), r.speaker_id, r.gender, r.emotion, " ".join(r.transcript)])
    return path


# ---------------------------------------------------------------- splitting

def _train_count(n: int, fraction: float) -> int:
    return int(math.floor(fraction * n + 0.5))


def split_80_20(records, spec: SplitSpec = SplitSpec()):
    """Deterministic train/test partition; both parts keep manifest order."""
    records = list(records)
    n = len(records)
    if n < 5:
        raise PreconditionError(f"need at least 5 records to split, got {n}")
    rng = np.random.default_rng(spec.seed)
    target = _train_count(n, spec.train_fraction)
    if spec.stratify_by is None:
        chosen = set(rng.permutation(n)[:target].tolist())
    else:
        groups: dict[str, list[int]] = {}
        for i, r in enumerate(records):
            groups.setdefault(r.label(spec.stratify_by), []).append(i)
        keys = sorted(groups)
        quotas = {k: spec.train_fraction * len(groups[k]) for k in keys}
        alloc = {k: int(math.floor(q)) for k, q in quotas.items()}
        # largest remainder; ties resolved by label order
        by_remainder = sorted(keys, key=lambda k: -(quotas[k] - alloc[k]))
        for k in by_remainder[: target - sum(alloc.values())]:
            alloc[k] += 1
        chosen = set()
        for k in keys:
            idx = np.array(groups[k])
            chosen.update(idx[rng.permutation(len(idx))[: alloc[k]]].tolist())
    train = [r for i, r in enumerate(records) if i in chosen]
    test = [r for i, r in enumerate(records) if i not in chosen]
    return train, test


# ---------------------------------------------------------------- synthesis

@dataclass(frozen=True)
class SpeakerVoice:
    base_f0: float
    resonance_hz: float
    resonance_bw: float


@dataclass
class SynthParams:
    """Everything needed to regenerate or decode a synthetic corpus."""

    spec: SynthCorpusSpec
    token_bins: list = field(default_factory=list)
    voices: list = field(default_factory=list)
    register: list = field(default_factory=list)
    emotion_gain: list = field(default_factory=list)
    emotion_tremolo: list = field(default_factory=list)
    emotion_vibrato: list = field(default_factory=list)

    @property
    def unit_samples(self) -> int:
        return int(round(self.spec.unit_seconds * self.spec.sample_rate))

    @property
    def token_names(self) -> list[str]:
        return [token_name(k) for k in range(self.spec.token_vocab_size)]

    def token_hz(self, k: int) -> float:
        return self.token_bins[k] * self.spec.sample_rate / N_FFT

    def to_json(self) -> str:
        payload = {
            "spec": asdict(self.spec),
            "token_bins": self.token_bins,
            "voices": [asdict(v) for v in self.voices],
            "register": self.register,
            "emotion_gain": self.emotion_gain,
            "emotion_tremolo": self.emotion_tremolo,
            "emotion_vibrato": self.emotion_vibrato,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SynthParams":
        d = json.loads(text)
        spec = d["spec"]
        spec["duration_range"] = tuple(spec["duration_range"])
        return cls(
            spec=SynthCorpusSpec(**spec),
            token_bins=d["token_bins"],
            voices=[SpeakerVoice(**v) for v in d["voices"]],
            register=d["register"],
            emotion_gain=d["emotion_gain"],
            emotion_tremolo=d["emotion_tremolo"],
            emotion_vibrato=d["emotion_vibrato"],
        )


def token_name(k: int) -> str:
    return f"w{k:02d}"


def speaker_name(s: int) -> str:
    return f"spk{s}"


def gender_name(g: int, num_genders: int) -> str:
    if num_genders == 2:
        return ("male", "female")[g]
    return f"g{g}"


def emotion_name(e: int) -> str:
    return f"emo{e}"


def _spread(i: int, n: int, lo: float, hi: float) -> float:
    return lo if n == 1 else lo + (hi - lo) * i / (n - 1)


def synth_params(spec: SynthCorpusSpec) -> SynthParams:
    spec.validate()
    rng = np.random.default_rng([spec.seed, 1])
    s = spec.num_speakers
    resonance_order = rng.permutation(s)
    voices = []
    for i in range(s):
        voices.append(SpeakerVoice(
            base_f0=_spread(i, s, 95.0, 140.0) + float(rng.uniform(-3.0, 3.0)),
            resonance_hz=_spread(int(resonance_order[i]), s, 250.0, 800.0),
            resonance_bw=200.0,
        ))
    e = spec.num_emotions
    return SynthParams(
        spec=spec,
        token_bins=[_TOKEN_BASE_BIN + _TOKEN_BIN_STEP * k for k in range(spec.token_vocab_size)],
        voices=voices,
        register=[_spread(g, spec.num_genders, 1.0, 1.7) for g in range(spec.num_genders)],
        emotion_gain=[_spread(i, e, 0.35, 0.95) for i in range(e)],
        # permuted ladders so the three prosody cues are not collinear
        emotion_tremolo=[_spread((i + 1) % e, e, 0.0, 0.3) for i in range(e)],
        emotion_vibrato=[_spread((i * (e // 2 + 1)) % e, e, 0.0, 0.09) for i in range(e)],
    )


@dataclass(frozen=True)
class _Draw:
    index: int
    speaker: int
    gender: int
    emotion: int
    tokens: tuple


def _draw_factors(spec: SynthCorpusSpec, params: SynthParams) -> list[_Draw]:
    rng = np.random.default_rng([spec.seed, 0])
    n = spec.num_utterances
    speakers = rng.integers(0, spec.num_speakers, n)
    genders = rng.integers(0, spec.num_genders, n)
    emotions = rng.integers(0, spec.num_emotions, n)
    durations = rng.uniform(*spec.duration_range, n)
    draws = []
    for i in range(n):
        n_tokens = max(1, int(round(durations[i] / spec.unit_seconds)))
        tokens = tuple(int(t) for t in rng.integers(0, spec.token_vocab_size, n_tokens))
        draws.append(_Draw(i, int(speakers[i]), int(genders[i]), int(emotions[i]), tokens))
    return draws


def render_utterance(params: SynthParams, speaker: int, gender: int, emotion: int,
                     tokens, seed) -> np.ndarray:
    """Samples for one utterance; ``seed`` keys its private RNG stream."""
    sr = params.spec.sample_rate
    unit = params.unit_samples
    n = unit * len(tokens)
    rng = np.random.default_rng(seed)
    t = np.arange(n) / sr

    fade = int(round(_FADE_S * sr))
    ramp = np.ones(unit)
    ramp[:fade] = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
    ramp[-fade:] = ramp[:fade][::-1]
    carrier = np.empty(n)
    for u, k in enumerate(tokens):
        seg = slice(u * unit, (u + 1) * unit)
        phase = rng.uniform(0, 2 * np.pi)
        carrier[seg] = ramp * np.sin(2 * np.pi * params.token_hz(k) * t[:unit] + phase)

    voice = params.voices[speaker]
    f0 = voice.base_f0 * params.register[gender]
    depth = params.emotion_vibrato[emotion]
    inst_f0 = f0 * (1.0 + depth * np.sin(2 * np.pi * _VIBRATO_HZ * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(inst_f0) / sr
    voicing = np.zeros(n)
    for h in range(1, int(_VOICING_CEILING_HZ // f0) + 1):
        amp = np.exp(-0.5 * ((h * f0 - voice.resonance_hz) / voice.resonance_bw) ** 2) + 0.15
        voicing += amp * np.sin(h * phase)
    voicing /= np.max(np.abs(voicing)) + 1e-12

    trem = params.emotion_tremolo[emotion]
    envelope = 1.0 - trem * 0.5 * (1.0 + np.sin(2 * np.pi * _TREMOLO_HZ * t + rng.uniform(0, 2 * np.pi)))
    noise = _NOISE_LEVEL * rng.standard_normal(n)
    mix = _CARRIER_LEVEL * carrier + _VOICING_LEVEL * voicing + noise
    return params.emotion_gain[emotion] * envelope * mix


def synth_corpus(spec: SynthCorpusSpec, out_dir, workers: int = 1) -> Path:
    """Write ``manifest.csv``, ``corpus.json`` and one WAV per utterance.

    Per-utterance RNG streams are keyed by index, so any ``workers`` count
    produces byte-identical output.
    """
    params = synth_params(spec)
    out_dir = Path(out_dir)
    try:
        (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PreconditionError(f"output directory not writable: {out_dir} ({exc})") from exc
    draws = _draw_factors(spec, params)

    def _one(d: _Draw) -> UtteranceRecord:
        samples = render_utterance(params, d.speaker, d.gender, d.emotion, d.tokens, [spec.seed, 2, d.index])
        path = out_dir / "wav" / f"utt{d.index:05d}.wav"
        save_waveform(Waveform(samples, spec.sample_rate), path)
        return UtteranceRecord(
            audio_path=path,
            speaker_id=speaker_name(d.speaker),
            gender=gender_name(d.gender, spec.num_genders),
            emotion=emotion_name(d.emotion),
            transcript=tuple(token_name(k) for k in d.tokens),
        )

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(_one, draws))
    else:
        records = [_one(d) for d in draws]
    (out_dir / "corpus.json").write_text(params.to_json() + "\n", encoding="utf-8")
    manifest = write_manifest(out_dir / "manifest.csv", records)
    log.info("wrote %d utterances to %s", len(records), out_dir)
    return manifest


def load_synth_params(manifest_path) -> SynthParams | None:
    sidecar = Path(manifest_path).parent / "corpus.json"
    if not sidecar.is_file():
        return None
    return SynthParams.from_json(sidecar.read_text(encoding="utf-8"))


def decode_tokens(w: Waveform, params: SynthParams, n_units: int | None = None) -> list[str]:
    """Recover the token sequence by per-unit dominant-frequency matching.

    Each unit's frames are averaged and the strongest bin inside the token
    band is mapped to the nearest token carrier.
    """
    unit = params.unit_samples
    if n_units is None:
        n_units = max(1, int(round(len(w) / unit)))
    spec = stft_spectrogram(w).frames
    window, hop = window_and_hop(w.sample_rate)
    starts = np.arange(spec.shape[0]) * hop
    bins = np.asarray(params.token_bins)
    lo = max(0, bins[0] - _TOKEN_BIN_STEP)
    hi = min(spec.shape[1], bins[-1] + _TOKEN_BIN_STEP + 1)
    out = []
    for u in range(n_units):
        a, b = u * unit, (u + 1) * unit
        inside = (starts >= a) & (starts + window <= b)
        if not inside.any():
            centre = starts + window // 2
            inside = (centre >= a) & (centre < b)
        if not inside.any():
            out.append(token_name(0))
            continue
        mean = spec[inside, lo:hi].mean(axis=0)
        peak = lo + int(np.argmax(mean))
        out.append(token_name(int(np.argmin(np.abs(bins - peak)))))
    return out


def token_bin_hz(params: SynthParams) -> np.ndarray:
    return bin_frequencies()[params.token_bins]


def factor_counts(records, attribute: str) -> Counter:
    return Counter(r.label(attribute) for r in records)
