"""Audio I/O and the time-frequency views used by every other module.

All analysis uses a 25 ms Hamming window with a 10 ms hop at 16 kHz and a
512-point FFT, without padding, so a signal of ``n`` samples yields
``1 + (n - 400) // 160`` frames.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dct, idct

from ddf import kernels
from ddf.errors import PreconditionError, UnsupportedEncodingError

SAMPLE_RATE = 16000
WINDOW_MS = 25.0
HOP_MS = 10.0
N_FFT = 512
MU_LAW_BITS = 10

PITCH_CLASSES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")
# C0 in Hz (A4 = 440 Hz, equal temperament)
_C0_HZ = 440.0 * 2.0 ** (-57.0 / 12.0)
# analysis range C2..C7, five whole octaves
CHROMA_LOW_HZ = _C0_HZ * 4.0
CHROMA_HIGH_HZ = _C0_HZ * 128.0
CHROMA_N_FFT = 4096
CHROMA_TOP_DB = 20.0

_LOG_FLOOR = 1e-5
REL_FLOOR_DB = 40.0
LEVEL_RANGE_DB = 30.0


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise PreconditionError("waveform must be one-dimensional")
        if self.sample_rate <= 0:
            raise PreconditionError("sample_rate must be positive")
        if samples.size and np.max(np.abs(samples)) > 1.0:
            raise PreconditionError("samples must lie in [-1, 1]")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class Spectrogram:
    """Magnitude STFT, frames along axis 0."""

    frames: np.ndarray
    sample_rate: int = SAMPLE_RATE
    window_ms: float = WINDOW_MS
    hop_ms: float = HOP_MS
    window_kind: str = "hamming"
    n_fft: int = N_FFT

    @property
    def window_length(self) -> int:
        return int(round(self.sample_rate * self.window_ms / 1000.0))

    @property
    def hop_length(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class MuLawCode:
    codes: np.ndarray
    bits: int = MU_LAW_BITS
    sample_rate: int = SAMPLE_RATE


@dataclass(frozen=True)
class Chromagram:
    frames: np.ndarray
    pitch_classes: tuple = field(default=PITCH_CLASSES)


def window_and_hop(sample_rate: int = SAMPLE_RATE) -> tuple[int, int]:
    return int(round(sample_rate * WINDOW_MS / 1000.0)), int(round(sample_rate * HOP_MS / 1000.0))


def frame_count(num_samples: int, window: int, hop: int) -> int:
    if num_samples < window:
        raise PreconditionError(f"signal of {num_samples} samples is shorter than one window ({window})")
    return 1 + (num_samples - window) // hop


def load_waveform(path) -> Waveform:
    """Read a 16-bit PCM mono WAV file, scaling samples by 1/32768."""
    path = Path(path)
    if not path.is_file():
        raise PreconditionError(f"missing file: {path}")
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise UnsupportedEncodingError(f"unsupported encoding: {path} ({exc})") from exc
    if channels != 1 or width != 2:
        raise UnsupportedEncodingError(
            f"unsupported encoding: {path} has {channels} channel(s) of {8 * width}-bit samples"
        )
    pcm = np.frombuffer(raw, dtype="<i2")
    if pcm.size == 0:
        raise PreconditionError(f"zero-length audio: {path}")
    return Waveform(pcm.astype(np.float64) / 32768.0, rate)


def to_pcm16(w: Waveform) -> np.ndarray:
    return np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")


def save_waveform(w: Waveform, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(w.sample_rate))
        fh.writeframes(to_pcm16(w).tobytes())
    return path


def _frames(samples: np.ndarray, window: int, hop: int) -> np.ndarray:
    n = frame_count(samples.size, window, hop)
    view = np.lib.stride_tricks.sliding_window_view(samples, window)
    return view[: (n - 1) * hop + 1 : hop]


def stft(w: Waveform, n_fft: int = N_FFT) -> np.ndarray:
    """Complex STFT (frames x bins) with the analysis window applied."""
    window, hop = window_and_hop(w.sample_rate)
    frames = _frames(w.samples, window, hop) * np.hamming(window)
    return np.fft.rfft(frames, n=n_fft, axis=1)


def stft_spectrogram(w: Waveform, n_fft: int = N_FFT) -> Spectrogram:
    return Spectrogram(np.abs(stft(w, n_fft)), sample_rate=w.sample_rate, n_fft=n_fft)


def istft(spectrum: np.ndarray, sample_rate: int = SAMPLE_RATE, n_fft: int = N_FFT) -> np.ndarray:
    """Least-squares inverse of :func:`stft` (Griffin-Lim style synthesis).

    Output length is ``hop * (T - 1) + window``.
    """
    window, hop = window_and_hop(sample_rate)
    win = np.hamming(window)
    frames = np.fft.irfft(spectrum, n=n_fft, axis=1)[:, :window] * win
    signal = kernels.overlap_add(frames, hop)
    norm = kernels.overlap_add(np.tile(win**2, (spectrum.shape[0], 1)), hop)
    return signal / np.maximum(norm, 1e-8)


def bin_frequencies(n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    return np.fft.rfftfreq(n_fft, 1.0 / sample_rate)


def mu_law_encode(w: Waveform, bits: int = MU_LAW_BITS) -> MuLawCode:
    if not 8 <= bits <= 16:
        raise PreconditionError("bits must be in [8, 16]")
    return MuLawCode(kernels.mu_law_encode(w.samples, bits), bits, w.sample_rate)


def mu_law_decode(c: MuLawCode) -> Waveform:
    if not 8 <= c.bits <= 16:
        raise PreconditionError("bits must be in [8, 16]")
    return Waveform(kernels.mu_law_decode(c.codes, c.bits), c.sample_rate)


def mu_law_compand(x: np.ndarray, bits: int = MU_LAW_BITS) -> np.ndarray:
    """Continuous compander, the value quantized by :func:`mu_law_encode`."""
    mu = float((1 << bits) - 1)
    return np.sign(x) * np.log1p(mu * np.abs(x)) / np.log1p(mu)


def pitch_class_of(freqs: np.ndarray) -> np.ndarray:
    """Nearest equal-tempered pitch class (0 = C) of each frequency."""
    semitones = np.round(12.0 * np.log2(np.asarray(freqs, dtype=np.float64) / _C0_HZ))
    return np.mod(semitones, 12).astype(np.int64)


def chromagram(w: Waveform, n_fft: int = CHROMA_N_FFT, top_db: float = CHROMA_TOP_DB) -> Chromagram:
    """Per-frame energy folded onto the 12 pitch classes.

    Only bins in C2..C7 within ``top_db`` of the frame's strongest bin
    contribute. Silent frames give zero rows.
    """
    power = np.abs(stft(w, n_fft)) ** 2
    freqs = bin_frequencies(n_fft, w.sample_rate)
    in_range = (freqs >= CHROMA_LOW_HZ) & (freqs < CHROMA_HIGH_HZ)
    power = np.where(in_range[None, :], power, 0.0)
    peak = power.max(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        rel_db = 10.0 * np.log10(power / np.where(peak > 0, peak, 1.0))
    kept = np.where((peak > 0) & (rel_db >= -top_db), power, 0.0)
    classes = np.full(freqs.size, -1, dtype=np.int64)
    classes[in_range] = pitch_class_of(freqs[in_range])
    return Chromagram(kernels.chroma_fold(kept, classes, 12))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = 80, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-style filters, shape (n_mels, n_fft // 2 + 1)."""
    fmax = sample_rate / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = bin_frequencies(n_fft, sample_rate)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_spectrogram(s: Spectrogram, n_mels: int = 80) -> np.ndarray:
    return s.frames @ mel_filterbank(n_mels, s.n_fft, s.sample_rate).T


def log_magnitude(s: Spectrogram) -> np.ndarray:
    return np.log(s.frames + _LOG_FLOOR)


def relative_log_spectrum(s: Spectrogram, floor_db: float = REL_FLOOR_DB) -> np.ndarray:
    """Log magnitude with a soft floor ``floor_db`` below each frame's peak.

    The floor hides everything quieter than the frame's strongest component
    by more than ``floor_db``, so the background-noise contrast no longer
    depends on the recording level.
    """
    peak = s.frames.max(axis=1, keepdims=True)
    return np.log(s.frames + 10.0 ** (-floor_db / 20.0) * peak + _LOG_FLOOR)


def normalized_log_magnitude(s: Spectrogram, floor_db: float = REL_FLOOR_DB,
                             range_db: float = LEVEL_RANGE_DB) -> np.ndarray:
    """Relative log spectrum with the per-frame peak level removed.

    Frames more than ``range_db`` below the loudest frame keep their
    relative quietness instead of being boosted.
    """
    rel = relative_log_spectrum(s, floor_db)
    level = np.log(s.frames.max(axis=1) + _LOG_FLOOR)
    level = np.maximum(level, level.max() - range_db * np.log(10.0) / 20.0)
    return rel - level[:, None]


def frame_peak_level(s: Spectrogram) -> np.ndarray:
    return np.log(s.frames.max(axis=1) + _LOG_FLOOR)


def cepstrum(s: Spectrogram, n_coeffs: int = 40) -> np.ndarray:
    """Cepstral coefficients 1..n_coeffs of the relative log spectrum (c0 dropped).

    Dropping c0 removes overall level; truncation removes pitch harmonics
    whose spacing is finer than about ``n_fft / n_coeffs`` bins.
    """
    c = dct(relative_log_spectrum(s), type=2, norm="ortho", axis=1)
    return c[:, 1:n_coeffs + 1]


def content_features(s: Spectrogram, n_coeffs: int = 40) -> np.ndarray:
    """Cepstra with the utterance mean removed (cepstral mean normalization)."""
    c = cepstrum(s, n_coeffs)
    return c - c.mean(axis=0, keepdims=True)


def spectral_envelope(s: Spectrogram, n_coeffs: int = 40, n_bands: int = 64) -> np.ndarray:
    """Level-normalized liftered log spectrum sampled at ``n_bands`` bins."""
    c = np.zeros((s.num_frames, s.frames.shape[1]))
    c[:, 1:n_coeffs + 1] = cepstrum(s, n_coeffs)
    env = idct(c, type=2, norm="ortho", axis=1)
    step = (env.shape[1] - 1) // n_bands
    return env[:, : step * n_bands : step]
