"""Backend selection for the numeric inner loops.

The compiled extension ``ddf._ckernels`` is used when importable; otherwise the
numpy fallback in ``ddf._pykernels`` is used. Set ``DDF_KERNELS=python`` to
force the fallback.
"""

import os

import numpy as np

from ddf import _pykernels

_impl = _pykernels
BACKEND = "python"
if os.environ.get("DDF_KERNELS", "").lower() != "python":
    try:
        from ddf import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass


def available_backends() -> dict:
    backends = {"python": _pykernels}
    try:
        from ddf import _ckernels

        backends["cython"] = _ckernels
    except ImportError:
        pass
    return backends


def nearest_codes(z: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Index of the closest codebook row (squared L2) for every row of ``z``."""
    z = np.ascontiguousarray(z, dtype=np.float64)
    codebook = np.ascontiguousarray(codebook, dtype=np.float64)
    return _impl.nearest_codes(z, codebook)


def levenshtein(a, b) -> int:
    a = np.ascontiguousarray(a, dtype=np.int64)
    b = np.ascontiguousarray(b, dtype=np.int64)
    return _impl.levenshtein(a, b)


def mu_law_encode(x: np.ndarray, bits: int) -> np.ndarray:
    return _impl.mu_law_encode(np.ascontiguousarray(x, dtype=np.float64), int(bits))


def mu_law_decode(codes: np.ndarray, bits: int) -> np.ndarray:
    return _impl.mu_law_decode(np.ascontiguousarray(codes, dtype=np.int64), int(bits))


def overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    return _impl.overlap_add(np.ascontiguousarray(frames, dtype=np.float64), int(hop))


def chroma_fold(power: np.ndarray, bin_class: np.ndarray, n_classes: int = 12) -> np.ndarray:
    return _impl.chroma_fold(
        np.ascontiguousarray(power, dtype=np.float64),
        np.ascontiguousarray(bin_class, dtype=np.int64),
        int(n_classes),
    )
