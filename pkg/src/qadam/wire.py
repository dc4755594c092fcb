"""Binary frame format for QuantizedTensor.

Layout (all integers little-endian)::

    offset  size  field
    0       4     magic  b"QT01"
    4       1     k      bit width, uint8
    5       4     len    number of codes, uint32
    9       8     scale  IEEE-754 binary64
    17      P     codes  P = ceil(len * k / 8) bytes

Code ``j`` occupies bits ``j*k .. j*k + k - 1`` of the payload, counted
least-significant bit first within each byte.  Pad bits after the last code
must be zero.  A frame is therefore exactly ``17 + ceil(len*k/8)`` bytes.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import CorruptionError, WireFormatError, WireLengthError
from .quantize import MAX_BITS, MIN_BITS, QuantizedTensor, half_levels

MAGIC = b"QT01"
HEADER = struct.Struct("<4sBId")
HEADER_BYTES = HEADER.size  # 17

__all__ = ["MAGIC", "HEADER_BYTES", "encode", "decode", "frame_size", "bits_for_message"]


def frame_size(length: int, k: int) -> int:
    """Size in bytes of the frame for ``length`` codes of ``k`` bits."""
    return HEADER_BYTES + (length * k + 7) // 8


def bits_for_message(d: int, k: int) -> int:
    """Bits transferred for one quantized message of length ``d``."""
    if d < 0:
        raise ValueError("message length must be non-negative")
    if k < MIN_BITS:
        raise ValueError(f"bit width must be >= {MIN_BITS}")
    return 8 * frame_size(d, k)


def _pack_codes(codes: np.ndarray, k: int) -> bytes:
    if codes.size == 0:
        return b""
    shifts = np.arange(k, dtype=np.uint64)
    bits = (codes.astype(np.uint64)[:, None] >> shifts) & np.uint64(1)
    return np.packbits(bits.astype(np.uint8).reshape(-1), bitorder="little").tobytes()


def _unpack_codes(payload: bytes, length: int, k: int) -> np.ndarray:
    nbits = length * k
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little")
    if bits[nbits:].any():
        raise CorruptionError("nonzero pad bits after the last code")
    if length == 0:
        return np.zeros(0, dtype=np.int64)
    weights = np.left_shift(np.uint64(1), np.arange(k, dtype=np.uint64))
    words = bits[:nbits].reshape(length, k).astype(np.uint64)
    return (words * weights).sum(axis=1, dtype=np.uint64).astype(np.int64)


def encode(q: QuantizedTensor) -> bytes:
    q.validate()
    if len(q) >= 1 << 32:
        raise ValueError("frames hold at most 2**32 - 1 codes")
    header = HEADER.pack(MAGIC, q.k, len(q), q.scale)
    return header + _pack_codes(q.codes, q.k)


def decode(frame: bytes) -> QuantizedTensor:
    frame = bytes(frame)
    if len(frame) < HEADER_BYTES:
        if frame[:4] != MAGIC[: len(frame)]:
            raise WireFormatError("bad magic")
        raise WireLengthError(f"frame shorter than the {HEADER_BYTES}-byte header")
    magic, k, length, scale = HEADER.unpack_from(frame)
    if magic != MAGIC:
        raise WireFormatError(f"bad magic {magic!r}")
    if not MIN_BITS <= k <= MAX_BITS:
        raise CorruptionError(f"unsupported bit width {k}")
    expected = frame_size(length, k)
    if len(frame) < expected:
        raise WireLengthError(f"truncated payload: {len(frame)} of {expected} bytes")
    if len(frame) > expected:
        raise WireLengthError(f"{len(frame) - expected} trailing bytes after payload")
    if not np.isfinite(scale) or scale < 0:
        raise CorruptionError(f"invalid scale {scale!r}")
    codes = _unpack_codes(frame[HEADER_BYTES:], length, k)
    if codes.size and codes.max() > 2 * half_levels(k):
        raise CorruptionError(f"code {int(codes.max())} exceeds {2 * half_levels(k)} for k={k}")
    return QuantizedTensor(scale, k, codes)


def write_frames(path, frames) -> int:
    """Append length-prefixed frames to a message log; returns bytes written."""
    total = 0
    with open(path, "ab") as fh:
        for frame in frames:
            fh.write(struct.pack("<I", len(frame)))
            fh.write(frame)
            total += len(frame)
    return total


def read_frames(path):
    """Yield the raw frames of a message log written by :func:`write_frames`."""
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise WireLengthError("truncated length prefix in message log")
        (size,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + size > len(data):
            raise WireLengthError("truncated frame in message log")
        yield data[pos : pos + size]
        pos += size
