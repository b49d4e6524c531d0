"""Deterministic pseudo-random primitives.

Two publicly documented generators back all randomness in the package so
that runs reproduce bit-for-bit across platforms and can be re-implemented
in other languages:

* SplitMix64 (the finalizer of Steele, Lea & Flood's splittable generator)
  is used as a keyed mixer to derive independent stream seeds from a parent
  seed plus a list of 64-bit words (tree index, fold index, repetition, ...).
* PCG32 (PCG-XSH-RR, 64-bit state / 32-bit output, O'Neill,
  https://www.pcg-random.org/) supplies the actual draws: shuffles and
  bounded integers.

Nothing here depends on a library RNG; the algorithms are fixed.
"""

from __future__ import annotations

_MASK64 = 0xFFFFFFFFFFFFFFFF
_MASK32 = 0xFFFFFFFF

# SplitMix64 constants.
_SM_GOLDEN = 0x9E3779B97F4A7C15
_SM_MUL1 = 0xBF58476D1CE4E5B9
_SM_MUL2 = 0x94D049BB133111EB

# PCG32 multiplier (Knuth's MMIX LCG).
_PCG_MUL = 6364136223846793005


def splitmix64_mix(z: int) -> int:
    """One SplitMix64 step: add the golden-gamma and avalanche to 64 bits."""
    z = (z + _SM_GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * _SM_MUL1) & _MASK64
    z = ((z ^ (z >> 27)) * _SM_MUL2) & _MASK64
    return z ^ (z >> 31)


def derive_seed(parent: int, words: list[int] | tuple[int, ...]) -> int:
    """Derive a child seed from ``parent`` keyed by a word list.

    Pure function: the same (parent, words) always yields the same 64-bit
    value, and any change to a word produces an unrelated value. Used to
    give every tree, fold, repetition and replication its own stream.
    The accumulator is multiplied before each word is folded in, so the
    roles of parent and word are not interchangeable.
    """
    h = splitmix64_mix(parent & _MASK64)
    for w in words:
        h = splitmix64_mix(((h * _SM_MUL1) & _MASK64) ^ splitmix64_mix(w & _MASK64))
    return h


class Pcg32:
    """PCG-XSH-RR with 64-bit state, seeded per the reference implementation."""

    __slots__ = ("_state", "_inc")

    def __init__(self, seed: int, stream: int = 0) -> None:
        self._inc = ((stream << 1) | 1) & _MASK64
        self._state = 0
        self._advance()
        self._state = (self._state + (seed & _MASK64)) & _MASK64
        self._advance()

    def _advance(self) -> None:
        self._state = (self._state * _PCG_MUL + self._inc) & _MASK64

    def next_u32(self) -> int:
        old = self._state
        self._advance()
        xorshifted = (((old >> 18) ^ old) >> 27) & _MASK32
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & _MASK32

    def below(self, bound: int) -> int:
        """Unbiased integer in [0, bound) via rejection sampling."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        threshold = (0x100000000 - bound) % bound
        while True:
            r = self.next_u32()
            if r >= threshold:
                return r % bound

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
