"""Numpy implementations of the hot loops; used when the extension is absent."""

import numpy as np

# rows of z processed per block in nearest_codes; bounds the (block, K, D) temporary
_BLOCK = 64


def nearest_codes(z: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    out = np.empty(len(z), dtype=np.int64)
    for start in range(0, len(z), _BLOCK):
        block = z[start:start + _BLOCK]
        dist = ((block[:, None, :] - codebook[None, :, :]) ** 2).sum(axis=-1)
        # argmin returns the first minimum, i.e. the lowest index on ties
        out[start:start + _BLOCK] = dist.argmin(axis=1)
    return out


def levenshtein(a: np.ndarray, b: np.ndarray) -> int:
    prev = list(range(len(b) + 1))
    for i in range(1, len(a) + 1):
        cur = [i] + [0] * len(b)
        ai = a[i - 1]
        for j in range(1, len(b) + 1):
            cur[j] = min(prev[j - 1] + (ai != b[j - 1]), prev[j] + 1, cur[j - 1] + 1)
        prev = cur
    return int(prev[-1])


def mu_law_encode(x: np.ndarray, bits: int) -> np.ndarray:
    levels = 1 << bits
    mu = float(levels - 1)
    x = np.clip(x, -1.0, 1.0)
    y = np.sign(x) * np.log1p(mu * np.abs(x)) / np.log1p(mu)
    codes = np.floor((y + 1.0) * 0.5 * levels).astype(np.int64)
    return np.clip(codes, 0, levels - 1)


def mu_law_decode(codes: np.ndarray, bits: int) -> np.ndarray:
    levels = 1 << bits
    mu = float(levels - 1)
    y = 2.0 * (codes.astype(np.float64) + 0.5) / levels - 1.0
    return np.sign(y) * ((1.0 + mu) ** np.abs(y) - 1.0) / mu


def overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    t, w = frames.shape
    if t == 0:
        return np.zeros(0)
    out = np.zeros(hop * (t - 1) + w)
    for i in range(t):
        out[i * hop:i * hop + w] += frames[i]
    return out


def chroma_fold(power: np.ndarray, bin_class: np.ndarray, n_classes: int) -> np.ndarray:
    keep = bin_class >= 0
    onehot = np.zeros((len(bin_class), n_classes))
    onehot[np.nonzero(keep)[0], bin_class[keep]] = 1.0
    return power @ onehot
