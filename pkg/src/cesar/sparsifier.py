"""Index selection (random subsampling, TopK) and Elias gamma index codec.

An index set is a strictly increasing ``int64`` array of positions in
``[0, d)``. Encoded index sets are bit strings of ``'0'``/``'1'``
characters; :func:`frame_index_set` packs them MSB-first into bytes behind a
4-byte little-endian bit-length prefix.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, IndexOutOfRange, MalformedBitstring
from .maskcrypt import prf_units

FRAME_HEADER_BYTES = 4


class Method(str, Enum):
    RANDOM = "random"
    TOPK = "topk"


@dataclass(frozen=True)
class SelectionSpec:
    """Sparsifier choice. ``alpha = 0`` is accepted so framing cost alone can be measured;
    training configs require ``alpha > 0``."""

    method: Method
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")


def check_index_set(indices: np.ndarray, d: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError("index set must be one-dimensional")
    if idx.size and (idx[0] < 0 or idx[-1] >= d or np.any(np.diff(idx) <= 0)):
        raise ValueError("index set must be strictly increasing within [0, d)")
    return idx


def random_subsample(d: int, alpha: float, seed: int) -> np.ndarray:
    """Keep position ``p`` iff ``prf_unit(seed, p) < alpha``.

    Inclusion is keyed per position, so anyone holding the seed can rebuild
    the set without replaying a sequential stream.
    """
    if d < 1:
        raise ValueError("model size must be positive")
    if alpha >= 1.0:
        return np.arange(d, dtype=np.int64)
    return np.flatnonzero(prf_units(seed, np.arange(d)) < alpha).astype(np.int64)


def topk(params, alpha: float) -> np.ndarray:
    """Positions of the ceil(alpha * d) largest magnitudes, ties to the lower index.

    ``uint64`` input is read as fixed-point words (signed magnitude).
    """
    v = np.asarray(params)
    if v.dtype == np.uint64:
        mag = np.abs(v.view(np.int64))
    else:
        mag = np.abs(v.astype(np.float64))
    d = v.size
    m = min(d, math.ceil(alpha * d - 1e-12))
    if m <= 0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(-mag, kind="stable")
    return np.sort(order[:m]).astype(np.int64)


def intersect(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.size == 0 or b.size == 0:
        return np.zeros(0, dtype=np.int64)
    member = np.zeros(max(a[-1], b[-1]) + 1, dtype=bool)
    member[a] = True
    return b[member[b]]


# -- Elias gamma -----------------------------------------------------------------


def _gaps(indices: np.ndarray) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        return idx
    return np.diff(idx, prepend=-1)


def _floor_log2(v: np.ndarray) -> np.ndarray:
    # exact for v < 2**53
    return np.frexp(v.astype(np.float64))[1].astype(np.int64) - 1


def elias_gamma_bit_length(indices: np.ndarray) -> int:
    """Length in bits of the gamma-coded gap sequence, without building it."""
    gaps = _gaps(indices)
    if gaps.size == 0:
        return 0
    return int(np.sum(2 * _floor_log2(gaps) + 1))


def elias_gamma_encode(indices: np.ndarray) -> str:
    """Gamma-code ``first + 1`` followed by the successive gaps."""
    gaps = _gaps(indices)
    if gaps.size == 0:
        return ""
    if np.any(gaps < 1):
        raise ValueError("index set must be strictly increasing and nonnegative")
    lg = _floor_log2(gaps)
    widths = 2 * lg + 1
    starts = np.concatenate(([0], np.cumsum(widths)[:-1]))
    bits = np.zeros(int(widths.sum()), dtype=np.uint8)
    # binary part of value v occupies positions start+lg .. start+2*lg, MSB first
    for b in range(int(lg.max()) + 1):
        sel = (lg >= b) & (((gaps >> b) & 1) == 1)
        bits[starts[sel] + 2 * lg[sel] - b] = 1
    return (bits + ord("0")).tobytes().decode("ascii")


def elias_gamma_decode(bits: str, d: int) -> np.ndarray:
    out = []
    pos = 0
    total = len(bits)
    cur = -1
    while pos < total:
        one = bits.find("1", pos)
        if one < 0:
            raise MalformedBitstring(f"truncated code at bit {pos}: no terminating 1")
        zeros = one - pos
        end = one + zeros + 1
        if end > total:
            raise MalformedBitstring(f"truncated code at bit {pos}: needs {zeros + 1} value bits")
        cur += int(bits[one:end], 2)
        if cur >= d:
            raise IndexOutOfRange(f"decoded index {cur} is outside [0, {d})")
        out.append(cur)
        pos = end
    return np.array(out, dtype=np.int64)


def frame_index_set(indices: np.ndarray) -> bytes:
    """Wire form: ``<u32 bit length>`` then MSB-first packed bits, zero padded."""
    bits = elias_gamma_encode(indices)
    arr = np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0")
    return struct.pack("<I", len(bits)) + np.packbits(arr).tobytes()


def unframe_index_set(frame: bytes, d: int) -> np.ndarray:
    if len(frame) < FRAME_HEADER_BYTES:
        raise MalformedBitstring("frame shorter than its length header")
    (nbits,) = struct.unpack_from("<I", frame)
    body = np.frombuffer(frame, dtype=np.uint8, offset=FRAME_HEADER_BYTES)
    if body.size != (nbits + 7) // 8:
        raise MalformedBitstring(f"frame body has {body.size} bytes, header says {nbits} bits")
    bits = np.unpackbits(body)[:nbits]
    return elias_gamma_decode((bits + ord("0")).tobytes().decode("ascii"), d)


def framed_size(indices: np.ndarray) -> int:
    """Byte size of :func:`frame_index_set` output."""
    return FRAME_HEADER_BYTES + (elias_gamma_bit_length(indices) + 7) // 8
