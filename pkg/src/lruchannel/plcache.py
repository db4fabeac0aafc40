"""Partition-locked cache: per-line lock bits, in two variants.

``ORIGINAL`` keeps locked lines resident but still lets hits on them update
the replacement state.  ``LRU_LOCKED`` additionally freezes the replacement
state for hits on locked lines, which removes what the no-shared-memory LRU
channel reads.  A miss whose victim is locked is served uncached (BYPASS) and
changes nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

from .cache import AccessOutcome, Cache, CacheGeometry, CacheSet, Outcome, Policy
from .channels import ChannelConfig, Protocol, receiver_init, sender_encode
from .rng import derive_seed, stream
from .timing import measure


class Variant(str, Enum):
    ORIGINAL = "original"
    LRU_LOCKED = "lru-locked"


def pl_access_set(cset: CacheSet, tag: int, variant: Variant) -> AccessOutcome:
    tags = cset.tags
    if tag in tags:
        way = tags.index(tag)
        if variant is Variant.ORIGINAL or not cset.locked[way]:
            cset.policy.touch(way)
        return AccessOutcome(Outcome.HIT, way)
    way = cset.free_way()
    if way is None:
        way = cset.policy.victim()
        if cset.locked[way]:
            return AccessOutcome(Outcome.BYPASS, None)
    return cset.fill(tag, way)


class PLCache:
    def __init__(self, geometry: CacheGeometry | None = None,
                 policy: Policy | str = Policy.LRU,
                 variant: Variant | str = Variant.ORIGINAL, seed: int = 0):
        self.cache = Cache(geometry, policy, seed=seed)
        self.geometry = self.cache.geometry
        self.variant = Variant(variant)

    def access(self, addr: int) -> AccessOutcome:
        tag, cset = self.cache.set_for(addr)
        return pl_access_set(cset, tag, self.variant)

    def lookup(self, addr: int) -> int | None:
        return self.cache.lookup(addr)

    def accessor(self, set_index: int) -> Callable[[int], AccessOutcome]:
        cset = self.cache.sets[set_index]
        variant = self.variant
        return lambda tag: pl_access_set(cset, tag, variant)

    def lock(self, addr: int) -> None:
        """Fetch the line if needed, then set its lock bit."""
        tag, cset = self.cache.set_for(addr)
        way = cset.lookup(tag)
        if way is None:
            out = pl_access_set(cset, tag, self.variant)
            if out.kind is Outcome.BYPASS:
                free = [w for w in range(cset.ways) if not cset.locked[w]]
                if not free:
                    raise ValueError("every way of the set is already locked")
                out = cset.fill(tag, free[0])
            way = out.way
        cset.locked[way] = True

    def unlock(self, addr: int) -> None:
        tag, cset = self.cache.set_for(addr)
        way = cset.lookup(tag)
        if way is not None:
            cset.locked[way] = False

    def is_locked(self, addr: int) -> bool:
        tag, cset = self.cache.set_for(addr)
        way = cset.lookup(tag)
        return way is not None and cset.locked[way]


@dataclass(frozen=True)
class DemoPoint:
    index: int
    window: int  # message bit this probe belongs to
    sent: str
    cycles: int
    classified: Outcome
    decoded: str


def pl_attack_demo(variant: Variant | str, message: str = "01" * 16,
                   cfg: ChannelConfig | None = None, seed: int = 0,
                   decode_lines: Sequence[int] | None = None,
                   rounds: int = 1) -> list[DemoPoint]:
    """The no-shared-memory channel with the sender's line locked, ``rounds`` rounds per bit.

    ``decode_lines`` replaces the receiver's decode accesses (lines d..N-1) with
    an explicit order; the timed probe of line 0 always follows.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    cfg = cfg or ChannelConfig(protocol=Protocol.NO_SHARED, d=4)
    if cfg.protocol is not Protocol.NO_SHARED:
        raise ValueError("the locked-line demo uses the no-shared-memory protocol")
    pl = PLCache(cfg.geometry, cfg.policy, variant, seed=derive_seed(seed, "cache"))
    pl.lock(pl.geometry.join(cfg.tag(cfg.sender_line), cfg.target_set))
    access = pl.accessor(cfg.target_set)
    order = list(cfg.decode_lines if decode_lines is None else decode_lines)
    rng = stream(seed, "latency")
    points = []
    for w, bit in enumerate(message):
        for _ in range(rounds):
            receiver_init(cfg, access)
            sender_encode(cfg, access, bit)
            for n in order:
                access(cfg.tag(n))
            obs = measure(cfg.latency, access(cfg.tag(0)).kind, rng)
            points.append(DemoPoint(len(points), w, bit, obs.total_cycles, obs.classified,
                                    cfg.decode(obs.classified)))
    return points


def demo_message(points: Sequence[DemoPoint]) -> str:
    """Majority bit per window, ties read as 0."""
    votes: dict[int, list[int]] = {}
    for p in points:
        v = votes.setdefault(p.window, [0, 0])
        v[0] += p.decoded == "1"
        v[1] += 1
    return "".join("1" if 2 * ones > n else "0" for ones, n in (votes[w] for w in sorted(votes)))
