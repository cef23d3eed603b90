"""CTT1 tensor files, CTW1 weight checkpoints, PNG export.

Both binary formats are little-endian throughout:

* CTT1: ``b"CTT1"``, u32 rank, rank x u32 dims, float32 payload (row-major).
* CTW1: ``b"CTW1"``, u32 tensor count, then per tensor: u32 name length,
  UTF-8 name, u32 rank, rank x u32 dims, float64 payload.

Checkpoint metadata is carried as rank-0 entries named ``meta:<key>=<value>``
whose single payload value is 0.0, so plain CTW1 readers still parse it.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .geometry import FormatError

CTT_MAGIC = b"CTT1"
CTW_MAGIC = b"CTW1"
META_PREFIX = "meta:"


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write via a sibling temp file and rename so readers never see partial data."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file while reading {what}")
    return data


def _read_u32(fh, what: str) -> int:
    return struct.unpack("<I", _read_exact(fh, 4, what))[0]


def encode_ctt(array) -> bytes:
    arr = np.asarray(array)
    buf = io.BytesIO()
    buf.write(CTT_MAGIC)
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def decode_ctt(payload: bytes) -> np.ndarray:
    fh = io.BytesIO(payload)
    if fh.read(4) != CTT_MAGIC:
        raise FormatError("not a CTT1 file (bad magic)")
    rank = _read_u32(fh, "rank")
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "dims"))
    count = int(np.prod(dims, dtype=np.int64))
    data = np.frombuffer(_read_exact(fh, 4 * count, "payload"), dtype="<f4")
    if fh.read(1):
        raise FormatError("trailing bytes after CTT1 payload")
    return data.astype(np.float64).reshape(dims)


def write_ctt(path, array) -> None:
    atomic_write_bytes(path, encode_ctt(array))


def read_ctt(path) -> np.ndarray:
    return decode_ctt(Path(path).read_bytes())


def encode_ctw(tensors: dict[str, np.ndarray], metadata: dict[str, str] | None = None) -> bytes:
    entries = [(f"{META_PREFIX}{k}={v}", np.zeros(())) for k, v in (metadata or {}).items()]
    entries += [(name, np.asarray(t, dtype=np.float64)) for name, t in tensors.items()]
    buf = io.BytesIO()
    buf.write(CTW_MAGIC)
    buf.write(struct.pack("<I", len(entries)))
    for name, arr in entries:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def decode_ctw(payload: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    fh = io.BytesIO(payload)
    if fh.read(4) != CTW_MAGIC:
        raise FormatError("not a CTW1 file (bad magic)")
    tensors: dict[str, np.ndarray] = {}
    metadata: dict[str, str] = {}
    for _ in range(_read_u32(fh, "tensor count")):
        name = _read_exact(fh, _read_u32(fh, "name length"), "name").decode("utf-8")
        rank = _read_u32(fh, "rank")
        dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "dims"))
        count = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(_read_exact(fh, 8 * count, name), dtype="<f8").reshape(dims)
        if name.startswith(META_PREFIX) and rank == 0:
            key, _, value = name[len(META_PREFIX):].partition("=")
            metadata[key] = value
        else:
            tensors[name] = arr.astype(np.float64)
    if fh.read(1):
        raise FormatError("trailing bytes after CTW1 payload")
    return tensors, metadata


def write_ctw(path, tensors, metadata=None) -> None:
    atomic_write_bytes(path, encode_ctw(tensors, metadata))


def read_ctw(path):
    return decode_ctw(Path(path).read_bytes())


def to_uint8(data: np.ndarray) -> np.ndarray:
    """Min-max window to 8 bits; constant images map to 0."""
    data = np.asarray(data, dtype=np.float64)
    lo, hi = float(data.min()), float(data.max())
    if hi <= lo:
        return np.zeros(data.shape, dtype=np.uint8)
    return np.round((data - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_png(path, data: np.ndarray) -> None:
    buf = io.BytesIO()
    PILImage.fromarray(to_uint8(data)).save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def write_png_grid(path, rows: list[list[np.ndarray]], gap: int = 2) -> None:
    """Tile images into a grid; every tile is windowed independently."""
    h = max(im.shape[0] for row in rows for im in row)
    w = max(im.shape[1] for row in rows for im in row)
    ncols = max(len(row) for row in rows)
    canvas = np.full((len(rows) * (h + gap) - gap, ncols * (w + gap) - gap), 255, dtype=np.uint8)
    for i, row in enumerate(rows):
        for j, im in enumerate(row):
            tile = to_uint8(im)
            y, x = i * (h + gap), j * (w + gap)
            canvas[y : y + tile.shape[0], x : x + tile.shape[1]] = tile
    buf = io.BytesIO()
    PILImage.fromarray(canvas).save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())
