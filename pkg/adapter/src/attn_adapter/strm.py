"""Reader/writer for the STRM tensor container.

Layout: ``STRM`` magic, u32 version (currently 1), u8 dtype code
(0 = float32, 1 = float64, 2 = uint8), u8 rank, rank u32 extents, then the
row-major little-endian payload.  This mirrors the container the scoring
package reads, but is implemented here on its own so the export tool works
without that package installed.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import InputError

_MAGIC = b"STRM"
_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("uint8"): 2}


def write_tensor(path, value) -> None:
    value = np.ascontiguousarray(value)
    if value.dtype not in _CODES:
        raise InputError(f"unsupported dtype {value.dtype}; use f32, f64 or u8")
    head = _MAGIC + struct.pack("<I", _VERSION)
    head += struct.pack("<BB", _CODES[value.dtype], value.ndim)
    head += struct.pack(f"<{value.ndim}I", *value.shape)
    Path(path).write_bytes(head + value.astype(value.dtype.newbyteorder("<")).tobytes())


def read_tensor(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError as err:
        raise InputError(f"no such tensor file: {path}") from err
    if raw[:4] != _MAGIC:
        raise InputError(f"{path}: bad magic at byte 0")
    if len(raw) < 10:
        raise InputError(f"{path}: truncated header at byte {len(raw)}")
    version, = struct.unpack_from("<I", raw, 4)
    if version != _VERSION:
        raise InputError(f"{path}: unsupported version {version} at byte 4")
    code, ndim = struct.unpack_from("<BB", raw, 8)
    if code not in _DTYPES:
        raise InputError(f"{path}: unknown dtype code {code} at byte 8")
    if len(raw) < 10 + 4 * ndim:
        raise InputError(f"{path}: truncated extents at byte {len(raw)}")
    shape = struct.unpack_from(f"<{ndim}I", raw, 10)
    dtype = _DTYPES[code]
    start = 10 + 4 * ndim
    expected = start + int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(raw) < expected:
        raise InputError(f"{path}: truncated payload at byte {len(raw)}")
    if len(raw) > expected:
        raise InputError(f"{path}: {len(raw) - expected} trailing bytes at byte {expected}")
    arr = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)),
                        offset=start)
    return arr.reshape(shape).astype(dtype.newbyteorder("="))


def write_manifest(path, entries: dict) -> None:
    lines = [f"{k}={v}" for k, v in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as err:
        raise InputError(f"no such manifest: {path}") from err
    out = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InputError(f"{path} line {ln}: not a key=value entry")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out
