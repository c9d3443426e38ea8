"""Binary file formats: LFTR tensors, LFTC checkpoint containers, PGM/PPM images.

LFTR tensor layout (little-endian throughout):

    magic   4 bytes  b"LFTR"
    version u32      1
    dtype   u8       0 = float32, 1 = float64
    rank    u32      0..5
    dims    u32 * rank
    payload row-major scalars

An LFTC container is a named collection of LFTR blobs: magic b"LFTC",
u32 version 1, u32 entry count, then per entry a u16 name length, the
UTF-8 name, u8 dtype, u32 rank and u32 dims; the header is followed by
the raw LFTR records in header order. Round-trips are bit-exact.

PGM (P5) and PPM (P6) support the 8-bit maxval-255 form only; masks use
255 as the ignore label.
"""

from __future__ import annotations

import struct
from typing import Mapping

import numpy as np

LFTR_MAGIC = b"LFTR"
LFTC_MAGIC = b"LFTC"
FORMAT_VERSION = 1
MAX_RANK = 5

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class FormatError(ValueError):
    """Malformed or unsupported file content."""


def _dtype_code(arr: np.ndarray) -> int:
    try:
        return _CODE_FOR[arr.dtype]
    except KeyError:
        raise FormatError(f"unsupported dtype {arr.dtype}; only float32/float64 are stored") from None


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    if arr.ndim > MAX_RANK:
        raise FormatError(f"rank {arr.ndim} exceeds the supported maximum of {MAX_RANK}")
    head = LFTR_MAGIC + struct.pack("<IBI", FORMAT_VERSION, _dtype_code(arr), arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    payload = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    return head + dims + payload


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}")
    return buf


def _read_tensor_header(fh):
    magic = _read_exact(fh, 4, "magic")
    if magic != LFTR_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {LFTR_MAGIC!r}")
    version, code, rank = struct.unpack("<IBI", _read_exact(fh, 9, "header"))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}")
    if code not in _DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code}")
    if rank > MAX_RANK:
        raise FormatError(f"rank {rank} exceeds the supported maximum of {MAX_RANK}")
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "dims")) if rank else ()
    return _DTYPE_CODES[code], dims


def _read_tensor_payload(fh, dtype, dims) -> np.ndarray:
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    raw = _read_exact(fh, count * dtype.itemsize, "payload")
    return np.frombuffer(raw, dtype=dtype).reshape(dims).copy()


def write_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(arr))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        dtype, dims = _read_tensor_header(fh)
        arr = _read_tensor_payload(fh, dtype, dims)
        if fh.read(1):
            raise FormatError("trailing bytes after tensor payload")
    return arr


def write_container(path, tensors: Mapping[str, np.ndarray]) -> None:
    """Write named arrays as an LFTC container; iteration order is preserved."""
    names = list(tensors)
    head = [LFTC_MAGIC, struct.pack("<II", FORMAT_VERSION, len(names))]
    for name in names:
        arr = tensors[name]
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise FormatError(f"entry name too long ({len(encoded)} bytes)")
        if arr.ndim > MAX_RANK:
            raise FormatError(f"entry {name!r}: rank {arr.ndim} exceeds the supported maximum of {MAX_RANK}")
        head.append(struct.pack("<H", len(encoded)))
        head.append(encoded)
        head.append(struct.pack(f"<BI{arr.ndim}I", _dtype_code(arr), arr.ndim, *arr.shape))
    with open(path, "wb") as fh:
        fh.write(b"".join(head))
        for name in names:
            fh.write(tensor_to_bytes(np.asarray(tensors[name])))


def read_container(path) -> dict:
    """Read an LFTC container into an ordered name -> array dict."""
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != LFTC_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {LFTC_MAGIC!r}")
        version, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported version {version}")
        entries = []
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            code, rank = struct.unpack("<BI", _read_exact(fh, 5, "entry header"))
            if code not in _DTYPE_CODES:
                raise FormatError(f"entry {name!r}: unknown dtype code {code}")
            if rank > MAX_RANK:
                raise FormatError(f"entry {name!r}: rank {rank} out of range")
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "entry dims")) if rank else ()
            if name in out:
                raise FormatError(f"duplicate entry name {name!r}")
            out[name] = None
            entries.append((name, _DTYPE_CODES[code], dims))
        for name, dtype, dims in entries:
            blob_dtype, blob_dims = _read_tensor_header(fh)
            if blob_dtype != dtype or blob_dims != dims:
                raise FormatError(f"entry {name!r}: blob header disagrees with container header")
            out[name] = _read_tensor_payload(fh, dtype, dims)
        if fh.read(1):
            raise FormatError("trailing bytes after last entry")
    return out


# ---------------------------------------------------------------------------
# netpbm images


def write_pgm(path, img: np.ndarray) -> None:
    """8-bit binary PGM (P5); input is [H,W] uint8 or castable integers 0..255."""
    arr = _as_u8(img, channels=1)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def write_ppm(path, img: np.ndarray) -> None:
    """8-bit binary PPM (P6); input is [H,W,3] uint8 or castable integers 0..255."""
    arr = _as_u8(img, channels=3)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def _as_u8(img: np.ndarray, channels: int) -> np.ndarray:
    arr = np.asarray(img)
    want = 2 if channels == 1 else 3
    if arr.ndim != want or (channels == 3 and arr.shape[2] != 3):
        kind = "grayscale [H,W]" if channels == 1 else "[H,W,3]"
        raise FormatError(f"expected {kind} image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.min() < 0 or arr.max() > 255:
            raise FormatError(f"pixel values outside 0..255 (min {arr.min()}, max {arr.max()})")
        arr = arr.astype(np.uint8)
    return np.ascontiguousarray(arr)


def _read_netpbm(path, magic: str):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(magic.encode("ascii")):
        raise FormatError(f"not a {magic} file: {path}")
    # Header = magic, width, height, maxval as whitespace/comment-separated tokens.
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"truncated header in {path}")
        tokens.append(int(data[start:pos]))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = tokens
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    return data[pos:], width, height


def read_pgm(path) -> np.ndarray:
    payload, width, height = _read_netpbm(path, "P5")
    if len(payload) != width * height:
        raise FormatError(f"PGM payload is {len(payload)} bytes, expected {width * height}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def read_ppm(path) -> np.ndarray:
    payload, width, height = _read_netpbm(path, "P6")
    if len(payload) != width * height * 3:
        raise FormatError(f"PPM payload is {len(payload)} bytes, expected {width * height * 3}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()
