"""Set-associative cache model with pluggable replacement policies."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, NamedTuple

from .rng import SplitMix64, derive_seed


class Outcome(str, Enum):
    HIT = "hit"
    MISS = "miss"
    BYPASS = "bypass"


class Policy(str, Enum):
    LRU = "lru"
    TREE_PLRU = "tree-plru"
    BIT_PLRU = "bit-plru"
    FIFO = "fifo"
    RANDOM = "random"


@dataclass(frozen=True)
class AccessOutcome:
    kind: Outcome
    way: int | None
    evicted_tag: int | None = None

    @property
    def hit(self) -> bool:
        return self.kind is Outcome.HIT


def _is_pow2(x: int) -> bool:
    return x > 0 and x & (x - 1) == 0


@dataclass(frozen=True)
class CacheGeometry:
    num_sets: int = 64
    ways: int = 8
    line_size: int = 64

    def __post_init__(self):
        if not _is_pow2(self.num_sets):
            raise ValueError(f"num_sets must be a power of two, got {self.num_sets}")
        if not _is_pow2(self.line_size):
            raise ValueError(f"line_size must be a power of two, got {self.line_size}")
        if self.ways < 1:
            raise ValueError("ways must be at least 1")

    @property
    def offset_bits(self) -> int:
        return self.line_size.bit_length() - 1

    @property
    def index_bits(self) -> int:
        return self.num_sets.bit_length() - 1

    def split(self, addr: int) -> tuple[int, int]:
        """Return ``(tag, set_index)`` for a raw address."""
        if addr < 0 or addr >> 64:
            raise ValueError(f"address out of 64-bit range: {addr}")
        line = addr >> self.offset_bits
        return line >> self.index_bits, line & (self.num_sets - 1)

    def join(self, tag: int, set_index: int, offset: int = 0) -> int:
        if not 0 <= set_index < self.num_sets:
            raise ValueError(f"set index {set_index} out of range")
        return (((tag << self.index_bits) | set_index) << self.offset_bits) | offset


class LineMeta(NamedTuple):
    valid: bool
    tag: int
    locked: bool


# --- replacement state -------------------------------------------------------
#
# Each policy object holds the state of one set and exposes:
#   touch(way)  hit on a resident way
#   fill(way)   the way was just (re)filled
#   victim()    way to evict from a full set
#   snapshot()  hashable copy of the state


class TrueLRU:
    name = Policy.LRU

    def __init__(self, ways: int):
        self.ways = ways
        # recency order, least recent first
        self.order = list(range(ways - 1, -1, -1))

    @classmethod
    def from_ages(cls, ages: Iterable[int]) -> "TrueLRU":
        ages = list(ages)
        if sorted(ages) != list(range(len(ages))):
            raise ValueError("ages must be a permutation of 0..N-1")
        p = cls(len(ages))
        p.order = sorted(range(len(ages)), key=lambda w: -ages[w])
        return p

    @property
    def ages(self) -> list[int]:
        n = self.ways
        out = [0] * n
        for pos, w in enumerate(self.order):
            out[w] = n - 1 - pos
        return out

    def touch(self, way: int) -> None:
        self.order.remove(way)
        self.order.append(way)

    fill = touch

    def victim(self) -> int:
        return self.order[0]

    def snapshot(self) -> tuple:
        return tuple(self.ages)


class TreePLRU:
    """N-1 node bits in heap order; bit 0 sends the victim walk left."""

    name = Policy.TREE_PLRU

    def __init__(self, ways: int):
        if not _is_pow2(ways):
            raise ValueError(f"Tree-PLRU needs power-of-two ways, got {ways}")
        self.ways = ways
        self.bits = [0] * (ways - 1)
        paths = []
        for w in range(ways):
            i = w + ways - 1
            path = []
            while i > 0:
                p = (i - 1) // 2
                # point away from the child we came from
                path.append((p, 1 if i == 2 * p + 1 else 0))
                i = p
            paths.append(tuple(path))
        self._paths = tuple(paths)

    def touch(self, way: int) -> None:
        bits = self.bits
        for p, v in self._paths[way]:
            bits[p] = v

    fill = touch

    def victim(self) -> int:
        bits, inner = self.bits, self.ways - 1
        i = 0
        while i < inner:
            i = 2 * i + 1 + bits[i]
        return i - inner

    def snapshot(self) -> tuple:
        return tuple(self.bits)


class BitPLRU:
    """One MRU bit per way; the victim is the lowest-index clear bit.

    ``keep_accessed`` picks the saturation rule.  False (default) resets every
    bit to 0 once all are set.  True clears the others but leaves the accessed
    way's bit set, which makes the 2-way case behave exactly like LRU.
    """

    name = Policy.BIT_PLRU

    def __init__(self, ways: int, keep_accessed: bool = False):
        self.ways = ways
        self.keep_accessed = keep_accessed
        self.bits = [0] * ways
        self._ones = 0

    def touch(self, way: int) -> None:
        bits = self.bits
        if bits[way]:
            return
        bits[way] = 1
        self._ones += 1
        if self._ones == self.ways:
            self.bits = [0] * self.ways
            self._ones = 0
            if self.keep_accessed:
                self.bits[way] = 1
                self._ones = 1

    fill = touch

    def set_bits(self, bits: Iterable[int]) -> None:
        bits = [1 if b else 0 for b in bits]
        if len(bits) != self.ways:
            raise ValueError("wrong number of MRU bits")
        self.bits = bits
        self._ones = sum(bits)

    def victim(self) -> int:
        return self.bits.index(0)

    def snapshot(self) -> tuple:
        return tuple(self.bits)


class FIFO:
    name = Policy.FIFO

    def __init__(self, ways: int):
        self.ways = ways
        self.order: list[int] = []  # fill order, oldest first

    def touch(self, way: int) -> None:
        pass

    def fill(self, way: int) -> None:
        if way in self.order:
            self.order.remove(way)
        self.order.append(way)

    def victim(self) -> int:
        return self.order[0]

    def snapshot(self) -> tuple:
        return tuple(self.order)


class RandomReplacement:
    name = Policy.RANDOM

    def __init__(self, ways: int, rng: SplitMix64 | None = None):
        self.ways = ways
        self.rng = rng if rng is not None else SplitMix64(0)

    def touch(self, way: int) -> None:
        pass

    fill = touch

    def victim(self) -> int:
        return self.rng.below(self.ways)

    def snapshot(self) -> tuple:
        return (self.rng.state,)


def make_policy(policy: Policy | str, ways: int, seed: int = 0, **options):
    policy = Policy(policy)
    if policy is Policy.LRU:
        return TrueLRU(ways)
    if policy is Policy.TREE_PLRU:
        return TreePLRU(ways)
    if policy is Policy.BIT_PLRU:
        return BitPLRU(ways, keep_accessed=options.get("keep_accessed", False))
    if policy is Policy.FIFO:
        return FIFO(ways)
    return RandomReplacement(ways, SplitMix64(seed))


# --- sets and caches ----------------------------------------------------------


class CacheSet:
    __slots__ = ("ways", "tags", "locked", "policy")

    def __init__(self, policy):
        self.ways = policy.ways
        self.tags: list[int | None] = [None] * self.ways
        self.locked = [False] * self.ways
        self.policy = policy

    def lookup(self, tag: int) -> int | None:
        try:
            return self.tags.index(tag)
        except ValueError:
            return None

    def is_full(self) -> bool:
        return None not in self.tags

    def find_victim(self) -> int:
        if None in self.tags:
            raise ValueError("find_victim called on a set with an invalid way")
        return self.policy.victim()

    def free_way(self) -> int | None:
        try:
            return self.tags.index(None)
        except ValueError:
            return None

    def access(self, tag: int) -> AccessOutcome:
        tags = self.tags
        if tag in tags:
            way = tags.index(tag)
            self.policy.touch(way)
            return AccessOutcome(Outcome.HIT, way)
        return self.fill(tag)

    def fill(self, tag: int, way: int | None = None) -> AccessOutcome:
        """Install ``tag`` (assumed absent), evicting if the set is full."""
        tags = self.tags
        if way is None:
            way = self.free_way()
            if way is None:
                way = self.policy.victim()
        evicted = tags[way]
        tags[way] = tag
        self.locked[way] = False
        self.policy.fill(way)
        return AccessOutcome(Outcome.MISS, way, evicted)

    def hit_or_fill(self, tag: int) -> bool:
        """Allocation-free fast path of :meth:`access`; returns True on a hit."""
        tags = self.tags
        if tag in tags:
            self.policy.touch(tags.index(tag))
            return True
        if None in tags:
            way = tags.index(None)
        else:
            way = self.policy.victim()
        tags[way] = tag
        self.policy.fill(way)
        return False

    def invalidate(self, tag: int) -> bool:
        """Drop ``tag`` if resident (a flush); the replacement state is left alone."""
        way = self.lookup(tag)
        if way is None:
            return False
        self.tags[way] = None
        self.locked[way] = False
        return True

    def lines(self) -> list[LineMeta]:
        return [LineMeta(t is not None, t if t is not None else 0, lk)
                for t, lk in zip(self.tags, self.locked)]

    def resident(self) -> set[int]:
        return {t for t in self.tags if t is not None}


class Cache:
    """A cache of ``num_sets`` independent sets sharing one geometry and policy."""

    def __init__(self, geometry: CacheGeometry | None = None,
                 policy: Policy | str = Policy.LRU, seed: int = 0, **options):
        self.geometry = geometry or CacheGeometry()
        self.policy = Policy(policy)
        self.sets = [
            CacheSet(make_policy(self.policy, self.geometry.ways,
                                 derive_seed(seed, "set", i), **options))
            for i in range(self.geometry.num_sets)
        ]

    def set_for(self, addr: int) -> tuple[int, CacheSet]:
        tag, idx = self.geometry.split(addr)
        return tag, self.sets[idx]

    def lookup(self, addr: int) -> int | None:
        tag, s = self.set_for(addr)
        return s.lookup(tag)

    def access(self, addr: int) -> AccessOutcome:
        tag, s = self.set_for(addr)
        return s.access(tag)

    def line(self, tag: int, set_index: int) -> int:
        return self.geometry.join(tag, set_index)
