"""Fixed-point encoding and pairwise additive masks over Z/2^64.

Parameters are scaled by 10^6, rounded half away from zero and stored as
two's-complement 64-bit words (``numpy.uint64``). All mask arithmetic wraps
modulo 2^64, so masks cancel exactly rather than approximately.

The PRF below is SplitMix64-based. It is deterministic and well mixed, which
is what a simulator needs, but it is NOT a cryptographically secure PRF and
must not be used to protect real data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import FixedPointOverflow

SCALE = 1_000_000
MASK64 = (1 << 64) - 1
WORD_BYTES = 8

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# |v| must stay strictly below this so that round(v * SCALE) fits in int64
FX_LIMIT = (2**63 - 1) / SCALE


def splitmix64(state: int) -> int:
    """One SplitMix64 step: advance ``state`` by the golden gamma and finalize."""
    z = (state + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def splitmix64_array(state: np.ndarray) -> np.ndarray:
    z = np.asarray(state, dtype=np.uint64) + np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def prf_word(seed: int, index: int) -> int:
    return splitmix64((seed & MASK64) ^ splitmix64(index & MASK64))


def prf_words(seed: int, indices: np.ndarray) -> np.ndarray:
    """Vectorised :func:`prf_word` over an array of parameter positions."""
    idx = np.asarray(indices).astype(np.uint64, copy=False)
    return splitmix64_array(np.uint64(seed & MASK64) ^ splitmix64_array(idx))


def prf_units(seed: int, indices: np.ndarray) -> np.ndarray:
    """Map PRF words to floats in [0, 1) using the top 53 bits."""
    words = prf_words(seed, indices)
    return (words >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def prf_unit(seed: int, index: int) -> float:
    return (prf_word(seed, index) >> 11) * (1.0 / (1 << 53))


def derive_seed(root: int, *path: int) -> int:
    """Derive a child seed by chaining ``prf_word`` along ``path``.

    Used for the root -> node -> round -> pair seed hierarchy.
    """
    s = root & MASK64
    for part in path:
        s = prf_word(s, part)
    return s


# -- fixed point ------------------------------------------------------------


def fx_encode(values) -> np.ndarray:
    """Encode reals as 64-bit words at scale 10^6 (round half away from zero)."""
    x = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(x)) or np.any(np.abs(x) >= FX_LIMIT):
        raise FixedPointOverflow("value outside the representable fixed-point range")
    scaled = x * SCALE
    a = np.abs(scaled)
    f = np.floor(a)
    r = f + (a - f >= 0.5)
    if np.any(r >= 2.0**63):
        raise FixedPointOverflow("value outside the representable fixed-point range")
    signed = np.where(scaled < 0, -r, r).astype(np.int64)
    return signed.view(np.uint64)


def fx_decode(words) -> np.ndarray:
    w = np.asarray(words, dtype=np.uint64)
    return w.view(np.int64) / SCALE


def fx_signed(words) -> np.ndarray:
    return np.asarray(words, dtype=np.uint64).view(np.int64)


# -- pairwise masks -----------------------------------------------------------


class Direction(Enum):
    LOW_TO_HIGH = "low_to_high"
    HIGH_TO_LOW = "high_to_low"


@dataclass(frozen=True)
class MaskAgreement:
    """Seeds and domain for one unordered pair in one round.

    ``seed_low_to_high`` is the partial seed the lower id generated for the
    higher id; ``domain`` is the intersection of both parties' selections.
    """

    pair: tuple[int, int]
    round: int
    seed_low_to_high: int
    seed_high_to_low: int
    domain: np.ndarray = field(compare=False, repr=False)

    def __post_init__(self):
        lo, hi = self.pair
        if not lo < hi:
            raise ValueError(f"pair must be canonical (low, high), got {self.pair}")

    def __eq__(self, other):
        if not isinstance(other, MaskAgreement):
            return NotImplemented
        return (
            self.pair == other.pair
            and self.round == other.round
            and self.seed_low_to_high == other.seed_low_to_high
            and self.seed_high_to_low == other.seed_high_to_low
            and np.array_equal(self.domain, other.domain)
        )

    __hash__ = None  # type: ignore[assignment]

    def direction_for(self, node: int) -> Direction:
        if node == self.pair[0]:
            return Direction.LOW_TO_HIGH
        if node == self.pair[1]:
            return Direction.HIGH_TO_LOW
        raise ValueError(f"node {node} is not part of pair {self.pair}")

    def partner_of(self, node: int) -> int:
        lo, hi = self.pair
        return hi if node == lo else lo


def make_agreement(a: int, b: int, round_: int, seed_ab: int, seed_ba: int,
                   domain: np.ndarray) -> MaskAgreement:
    """Build the canonical agreement from either endpoint's perspective."""
    if a < b:
        return MaskAgreement((a, b), round_, seed_ab, seed_ba, domain)
    return MaskAgreement((b, a), round_, seed_ba, seed_ab, domain)


def pairwise_mask(agreement: MaskAgreement, direction: Direction) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(indices, words)`` of the mask this side adds over the domain.

    The low side adds ``M_lh - M_hl``; the high side adds the negation, so
    the two directions sum to zero modulo 2^64 at every index.
    """
    idx = agreement.domain
    if idx.size == 0:
        return idx, np.zeros(0, dtype=np.uint64)
    m_lh = prf_words(agreement.seed_low_to_high, idx)
    m_hl = prf_words(agreement.seed_high_to_low, idx)
    if direction is Direction.LOW_TO_HIGH:
        return idx, m_lh - m_hl
    return idx, m_hl - m_lh
