"""Shared-seed common coin.

Every replica derives the same 64-bit seed from (shared_seed, slot, epoch) and
reads the p-th bit from a counter-mode splitmix64 stream, so the p-th flip is
identical everywhere without any communication.
"""

from __future__ import annotations

from .types import BinValue

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """splitmix64 finalizer."""
    z = (z + _GAMMA) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(shared_seed: int, slot: int, epoch: int) -> int:
    return mix64(mix64(mix64(shared_seed & _MASK) ^ (slot & _MASK)) ^ (epoch & _MASK))


class CommonCoin:
    __slots__ = ("seed",)

    def __init__(self, seed: int) -> None:
        self.seed = seed & _MASK

    @classmethod
    def for_slot(cls, slot: int, epoch: int, shared_seed: int = 0) -> "CommonCoin":
        return cls(derive_seed(shared_seed, slot, epoch))

    def flip(self, phase: int) -> BinValue:
        if phase < 1:
            raise ValueError("coin phases start at 1")
        return BinValue(mix64((self.seed + phase * _GAMMA) & _MASK) >> 63)


def coin_flip(slot: int, epoch: int, phase: int, shared_seed: int = 0) -> BinValue:
    return CommonCoin.for_slot(slot, epoch, shared_seed).flip(phase)
