"""Bit-vector popularity tracking.

Each request shifts the vector right and sets the most significant bit; each
decay period shifts it right once more. The number of set bits is the key's
popularity, compared against the resume/suspend and cache insert/evict
thresholds of a :class:`~tagindex.core.SystemConfig`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import FrozenSet

from .core import SystemConfig


@dataclass(frozen=True)
class PopularityVector:
    length: int
    value: int = 0

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("vector length must be >= 1")
        if not 0 <= self.value < (1 << self.length):
            raise ValueError(f"value {self.value} out of range for length {self.length}")

    @classmethod
    def zeros(cls, length: int) -> "PopularityVector":
        return cls(length, 0)

    @classmethod
    def from_bits(cls, bits: str) -> "PopularityVector":
        """Parse ``"1100"``; the leftmost character is the most recent bit."""
        return cls(len(bits), int(bits, 2))

    def bits(self) -> str:
        return format(self.value, f"0{self.length}b")

    def __str__(self) -> str:
        return self.bits()


def record_request(v: PopularityVector) -> PopularityVector:
    msb = 1 << (v.length - 1)
    return PopularityVector(v.length, (v.value >> 1) | msb)


def record_requests(v: PopularityVector, n: int) -> PopularityVector:
    for _ in range(min(n, v.length)):
        v = record_request(v)
    return v


def decay(v: PopularityVector) -> PopularityVector:
    return PopularityVector(v.length, v.value >> 1)


def popcount(v: PopularityVector) -> int:
    return bin(v.value).count("1")


class KeyState(enum.Enum):
    AVAILABLE = "available"
    SUSPENDED = "suspended"
    CACHED = "cached"


class Action(enum.Enum):
    RESUME = "resume"
    SUSPEND = "suspend"
    CACHE_INSERT = "cache_insert"
    CACHE_EVICT = "cache_evict"
    NONE = "none"


def classify(v: PopularityVector, cfg: SystemConfig, state: KeyState) -> FrozenSet[Action]:
    """Actions implied by the vector's popcount for a key in ``state``.

    A cached key is also available in the index, so it can be both evicted and
    suspended in the same round; callers must evict before suspending.
    """
    n = popcount(v)
    actions = set()
    if state is KeyState.SUSPENDED:
        if n >= cfg.b_res:
            actions.add(Action.RESUME)
    else:
        if n <= cfg.b_susp:
            actions.add(Action.SUSPEND)
        if state is KeyState.CACHED:
            if n <= cfg.c_del:
                actions.add(Action.CACHE_EVICT)
        elif n >= cfg.c_ins:
            actions.add(Action.CACHE_INSERT)
    return frozenset(actions) if actions else frozenset({Action.NONE})
