"""Versioned binary checkpoints: model params plus optional named arrays.

Layout (all multi-byte integers little-endian):

    magic      8 bytes  b"FATCKPT\\0"
    version    u32      currently 1
    desc_len   u32      length of the UTF-8 JSON model descriptor
    descriptor desc_len bytes
    n_arrays   u32
    per array:
        name_len u16, name bytes (UTF-8)
        dtype    u8   (0 = float64, 1 = float32, 2 = int64)
        ndim     u8, dims u32 each
        payload  raw little-endian values
    crc32      u32      over everything after the magic

Prior buffers and optimizer velocity ride along as extra arrays, so a
training run can be resumed bit-exactly from its last checkpoint.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .errors import FormatError, LengthError
from .models import Model, model_from_arrays

MAGIC = b"FATCKPT\x00"
VERSION = 1

_DTYPE_CODES = {np.dtype("float64"): 0, np.dtype("float32"): 1, np.dtype("int64"): 2}
_CODE_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4"), 2: np.dtype("<i8")}


def _pack_array(name: str, arr: np.ndarray) -> bytes:
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise FormatError(f"array {name!r}: unsupported dtype {arr.dtype}")
    nb = name.encode("utf-8")
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<BB", code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr).astype(_CODE_DTYPES[code], copy=False).tobytes()


def save_checkpoint(path, model: Model, extras: dict[str, np.ndarray] | None = None):
    """Write params (as ``param/<name>``) and any extra arrays."""
    arrays: list[tuple[str, np.ndarray]] = [
        (f"param/{name}", p.data) for name, p in model.named_parameters().items()
    ]
    for name, arr in (extras or {}).items():
        arrays.append((name, np.asarray(arr)))

    desc = json.dumps(model.descriptor, sort_keys=True).encode("utf-8")
    body = struct.pack("<I", VERSION)
    body += struct.pack("<I", len(desc)) + desc
    body += struct.pack("<I", len(arrays))
    for name, arr in arrays:
        body += _pack_array(name, arr)
    body += struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(MAGIC + body)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise LengthError(f"checkpoint truncated at byte {self.pos} (need {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Return (descriptor, params, extras); raises FormatError on corruption."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise FormatError(f"bad checkpoint magic {blob[:8]!r}")
    if len(blob) < 20:
        raise LengthError(f"checkpoint too short ({len(blob)} bytes)")
    body, tail = blob[8:-4], blob[-4:]
    (stored_crc,) = struct.unpack("<I", tail)
    if zlib.crc32(body) & 0xFFFFFFFF != stored_crc:
        raise FormatError("checkpoint checksum mismatch")

    rd = _Reader(body)
    (version,) = rd.unpack("<I")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (desc_len,) = rd.unpack("<I")
    descriptor = json.loads(rd.take(desc_len).decode("utf-8"))
    (n_arrays,) = rd.unpack("<I")

    params: dict[str, np.ndarray] = {}
    extras: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (name_len,) = rd.unpack("<H")
        name = rd.take(name_len).decode("utf-8")
        code, ndim = rd.unpack("<BB")
        if code not in _CODE_DTYPES:
            raise FormatError(f"array {name!r}: unknown dtype code {code}")
        shape = rd.unpack(f"<{ndim}I")
        dtype = _CODE_DTYPES[code]
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(rd.take(count * dtype.itemsize), dtype=dtype).reshape(shape).copy()
        if name.startswith("param/"):
            params[name[len("param/"):]] = arr
        else:
            extras[name] = arr
    if rd.pos != len(body):
        raise LengthError(f"{len(body) - rd.pos} trailing bytes after the last array")
    return descriptor, params, extras


def load_model(path) -> tuple[Model, dict[str, np.ndarray]]:
    descriptor, params, extras = load_checkpoint(path)
    return model_from_arrays(descriptor, params), extras
