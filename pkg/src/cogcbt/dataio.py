"""File formats: IDX image containers, matrix CSV, JSON checkpoints.

Also hosts the area-weighted image downsampler used to shrink 28x28 MNIST
digits to the reservoir's input resolution.
"""

from __future__ import annotations

import contextlib
import json
import os
import shutil
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, LengthError, SchemaError

IDX_UBYTE_3D_MAGIC = b"\x00\x00\x08\x03"


@dataclass(frozen=True)
class IdxHeader:
    magic: bytes
    dtype_code: int
    ndim: int
    dims: tuple

    @property
    def payload_size(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64))

    @property
    def nbytes(self) -> int:
        return 4 + 4 * self.ndim


def parse_idx_header(raw: bytes) -> IdxHeader:
    if len(raw) < 4:
        raise LengthError("file too short for an IDX header")
    magic = bytes(raw[:4])
    if magic != IDX_UBYTE_3D_MAGIC:
        raise FormatError(f"bad IDX magic {magic.hex()} (expected {IDX_UBYTE_3D_MAGIC.hex()})")
    ndim = magic[3]
    if len(raw) < 4 + 4 * ndim:
        raise LengthError("truncated IDX dimension block")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    return IdxHeader(magic=magic, dtype_code=magic[2], ndim=ndim, dims=tuple(dims))


def read_idx(path) -> np.ndarray:
    """Read an unsigned-byte 3-D IDX file as a ``uint8`` array ``(count, rows, cols)``."""
    raw = Path(path).read_bytes()
    header = parse_idx_header(raw)
    payload = raw[header.nbytes:]
    if len(payload) != header.payload_size:
        raise LengthError(
            f"IDX payload has {len(payload)} bytes, header promises {header.payload_size}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(header.dims).copy()


def read_idx_images(path, limit: int | None = None) -> np.ndarray:
    """Frames as float64 in [0, 1], shape ``(T, n_x, n_y)``; at most ``limit`` frames."""
    images = read_idx(path)
    if limit is not None:
        images = images[:max(int(limit), 0)]
    return images.astype(np.float64) / 255.0


def write_idx(path, images) -> None:
    """Write a ``uint8`` array ``(count, rows, cols)`` as IDX."""
    arr = np.asarray(images)
    if arr.ndim != 3:
        raise DimensionError(f"IDX writer expects 3-D data, got {arr.shape}")
    if arr.dtype != np.uint8:
        raise FormatError(f"IDX writer expects uint8, got {arr.dtype}")
    header = IDX_UBYTE_3D_MAGIC + struct.pack(">3I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes(order="C"))


def write_idx_images(path, frames) -> None:
    """Inverse of :func:`read_idx_images`: scale [0, 1] floats back to bytes."""
    f = np.asarray(frames, dtype=np.float64)
    write_idx(path, np.clip(np.rint(f * 255.0), 0, 255).astype(np.uint8))


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    # row o: fraction of each input cell covered by output bin o, divided by bin width
    width = n_in / n_out
    edges_out = np.arange(n_out + 1) * width
    lo = np.maximum(edges_out[:-1, None], np.arange(n_in)[None, :])
    hi = np.minimum(edges_out[1:, None], np.arange(1, n_in + 1)[None, :])
    return np.clip(hi - lo, 0.0, None) / width


def downsample_mean(img, out_x: int, out_y: int) -> np.ndarray:
    """Area-weighted mean pooling to ``(out_x, out_y)``.

    Each output pixel is the average of the input over its (possibly
    fractional) source rectangle, so 28 -> 10 works with 2.8-pixel bins.
    """
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D image, got {a.shape}")
    n_x, n_y = a.shape
    if not (1 <= out_x <= n_x and 1 <= out_y <= n_y):
        raise DimensionError(f"cannot resample {a.shape} to {(out_x, out_y)}")
    return _area_weights(n_x, out_x) @ a @ _area_weights(n_y, out_y).T


def downsample_sequence(frames, out_x: int, out_y: int) -> np.ndarray:
    f = np.asarray(frames, dtype=np.float64)
    if f.ndim != 3:
        raise DimensionError(f"expected (T, n_x, n_y) frames, got {f.shape}")
    if f.shape[0] == 0:
        return np.zeros((0, out_x, out_y))
    if not (1 <= out_x <= f.shape[1] and 1 <= out_y <= f.shape[2]):
        raise DimensionError(f"cannot resample {f.shape[1:]} to {(out_x, out_y)}")
    wx = _area_weights(f.shape[1], out_x)
    wy = _area_weights(f.shape[2], out_y)
    return np.einsum("oi,tij,pj->top", wx, f, wy)


def format_matrix_csv(m) -> str:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"CSV matrices must be 2-D, got {a.shape}")
    return "".join(",".join(format(float(v), ".17g") for v in row) + "\n" for row in a)


def write_matrix_csv(path, m) -> None:
    Path(path).write_text(format_matrix_csv(m))


def read_matrix_csv(path) -> np.ndarray:
    path = Path(path)
    rows = []
    try:
        for line in path.read_text().splitlines():
            if line.strip():
                rows.append([float(tok) for tok in line.split(",")])
    except ValueError as exc:
        raise SchemaError(path, f"non-numeric entry ({exc})") from exc
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise SchemaError(path, "empty or ragged matrix")
    return np.array(rows, dtype=np.float64)


def to_jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    return obj


def dumps_json(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=1, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps_json(obj))


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(path, f"invalid JSON ({exc.msg})") from exc


@contextlib.contextmanager
def atomic_directory(final):
    """Yield a scratch directory that replaces ``final`` only on success."""
    final = Path(final)
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{final.name}.", dir=final.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)
    os.chmod(final, 0o755)
