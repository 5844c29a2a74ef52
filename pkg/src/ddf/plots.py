"""Side-by-side spectrogram / chromagram comparisons."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ddf.errors import PreconditionError  # noqa: E402
from ddf.frontend import PITCH_CLASSES, Waveform, bin_frequencies, chromagram, stft_spectrogram, window_and_hop  # noqa: E402

PLOT_KINDS = ("spectrogram", "chromagram")
DB_RANGE = 80.0


def plot_matrix(w: Waveform, kind: str) -> np.ndarray:
    """The (frames, rows) matrix drawn for one panel."""
    if len(w) == 0:
        raise PreconditionError("cannot plot an empty waveform")
    if kind == "spectrogram":
        return 20.0 * np.log10(stft_spectrogram(w).frames + 1e-10)
    if kind == "chromagram":
        return chromagram(w).frames
    raise PreconditionError(f"unknown plot kind {kind!r}; choose from {', '.join(PLOT_KINDS)}")


def compare_plots(raw: Waveform, filtered: Waveform, kind: str, out) -> Path:
    """Render raw and filtered panels with one shared colour scale."""
    a = plot_matrix(raw, kind)
    b = plot_matrix(filtered, kind)
    out = Path(out)
    if not out.parent.is_dir():
        raise PreconditionError(f"output directory does not exist: {out.parent}")
    if kind == "spectrogram":
        vmax = max(a.max(), b.max())
        vmin = vmax - DB_RANGE
        label = "dB"
    else:
        vmin, vmax = 0.0, max(a.max(), b.max(), 1e-12)
        label = "energy"
    _, hop = window_and_hop(raw.sample_rate)
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    for ax, m, title, w in ((axes[0], a, "raw", raw), (axes[1], b, "filtered", filtered)):
        t_end = m.shape[0] * hop / w.sample_rate
        if kind == "spectrogram":
            extent = (0.0, t_end, 0.0, bin_frequencies(sample_rate=w.sample_rate)[-1])
        else:
            extent = (0.0, t_end, -0.5, 11.5)
        img = ax.imshow(m.T, origin="lower", aspect="auto", extent=extent, vmin=vmin, vmax=vmax,
                        cmap="magma", interpolation="nearest")
        ax.set_title(title)
        ax.set_xlabel("time (s)")
    if kind == "spectrogram":
        axes[0].set_ylabel("frequency (Hz)")
    else:
        axes[0].set_yticks(range(12))
        axes[0].set_yticklabels(PITCH_CLASSES)
        axes[0].set_ylabel("pitch class")
    fig.colorbar(img, ax=axes, label=label)
    try:
        fig.savefig(out, format="png", dpi=100, metadata={"Software": None})
    except OSError as exc:
        raise PreconditionError(f"cannot write {out}: {exc}") from exc
    finally:
        plt.close(fig)
    return out
