"""On-disk formats shared across modules.

Array file: a 24-byte header (rows: u64 LE, cols: u64 LE, dtype tag: 8 ASCII
bytes, NUL padded) followed by the row-major little-endian payload.

Embedding file: a sequence of records, each ``u32 id_len | utf-8 id |
u32 dim | dim x f64 LE``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ddf.errors import PreconditionError

_TAGS = {
    "f4": np.dtype("<f4"),
    "f8": np.dtype("<f8"),
    "i4": np.dtype("<i4"),
    "i8": np.dtype("<i8"),
    "u1": np.dtype("u1"),
}
_HEADER = struct.Struct("<QQ8s")


def _tag_for(dtype: np.dtype) -> str:
    for tag, dt in _TAGS.items():
        if dt.kind == dtype.kind and dt.itemsize == dtype.itemsize:
            return tag
    raise PreconditionError(f"unsupported array dtype {dtype}")


def save_array(path, array) -> Path:
    array = np.asarray(array)
    if array.ndim == 1:
        array = array[:, None]
    if array.ndim != 2:
        raise PreconditionError("only 1-D and 2-D arrays can be stored")
    tag = _tag_for(array.dtype)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = np.ascontiguousarray(array, dtype=_TAGS[tag]).tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(array.shape[0], array.shape[1], tag.encode("ascii")))
        fh.write(payload)
    return path


def load_array(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise PreconditionError(f"{path}: truncated header")
    rows, cols, raw_tag = _HEADER.unpack_from(data)
    tag = raw_tag.rstrip(b"\0").decode("ascii")
    if tag not in _TAGS:
        raise PreconditionError(f"{path}: unknown dtype tag {tag!r}")
    dtype = _TAGS[tag]
    expected = rows * cols * dtype.itemsize
    body = data[_HEADER.size:]
    if len(body) != expected:
        raise PreconditionError(f"{path}: expected {expected} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype=dtype).reshape(rows, cols).copy()


def save_embeddings(path, items) -> Path:
    """Write ``(utterance_id, vector)`` pairs as length-prefixed records."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        for utt_id, vec in items:
            key = str(utt_id).encode("utf-8")
            vec = np.asarray(vec, dtype="<f8").ravel()
            fh.write(struct.pack("<I", len(key)))
            fh.write(key)
            fh.write(struct.pack("<I", vec.size))
            fh.write(vec.tobytes())
    return path


def load_embeddings(path) -> list[tuple[str, np.ndarray]]:
    data = Path(path).read_bytes()
    out = []
    pos = 0
    while pos < len(data):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        key = data[pos:pos + n].decode("utf-8")
        pos += n
        (dim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        vec = np.frombuffer(data, dtype="<f8", count=dim, offset=pos).copy()
        pos += 8 * dim
        out.append((key, vec))
    return out


def write_trials(path, trials) -> Path:
    path = Path(path)
    lines = [f"{a} {b} {int(label)}" for a, b, label in trials]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return path


def read_trials(path) -> list[tuple[str, str, int]]:
    trials = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3 or parts[2] not in ("0", "1"):
            raise PreconditionError(f"{path}:{lineno}: expected 'utt_a utt_b 0|1'")
        trials.append((parts[0], parts[1], int(parts[2])))
    return trials
