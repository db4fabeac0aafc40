"""Toy bounds-check-bypass victim and a receiver that reads it through the LRU channels.

The victim reads ``array1[index]`` only when ``index`` is in bounds.  For an
out-of-bounds index it mis-speculates: the byte just past ``array1`` (the
secret) selects a cache set and the victim touches the channel's sender line
in that set.  The access is squashed, so nothing architectural depends on the
secret, but the tag and replacement-state change stays behind.

Bytes take 256 values and only ``num_sets - 1`` sets are usable (one holds
the pointer-chasing chain), so the receiver runs two passes per byte.  The
first maps a value to ``v mod 63`` and the second to ``v // 63``.  Together
they pin down the byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .cache import Cache, CacheGeometry, Outcome, Policy
from .channels import ChannelConfig, Protocol, receiver_decode, receiver_init
from .rng import derive_seed, stream
from .timing import INTEL, LatencyProfile, measure

PROBE_TAG_BASE = 0x4000


class ChannelKind(str, Enum):
    FLUSH_RELOAD = "flush-reload"
    LRU_SHARED = "lru-shared"
    LRU_NOSHARED = "lru-noshared"


@dataclass(frozen=True)
class Gadget:
    secret: bytes
    array1: bytes = bytes(range(1, 17))
    num_sets: int = 64

    @property
    def bounds(self) -> int:
        return len(self.array1)

    @property
    def usable_sets(self) -> int:
        return self.num_sets - 1

    def residue(self, value: int) -> int:
        return value % self.usable_sets

    def quotient(self, value: int) -> int:
        return value // self.usable_sets

    def byte_at(self, index: int) -> int:
        if index < self.bounds:
            return self.array1[index]
        return self.secret[index - self.bounds]

    def value_of(self, residue: int, quotient: int) -> int | None:
        v = quotient * self.usable_sets + residue
        return v if 0 <= v < 256 and residue < self.usable_sets else None


@dataclass(frozen=True)
class SpeculativeAccess:
    addr: int
    set_index: int
    squashed: bool
    outcome: Outcome


@dataclass(frozen=True)
class VictimResult:
    architectural: int | None
    speculative: SpeculativeAccess | None


def channel_config(kind: ChannelKind, set_index: int, ways: int = 8, d: int | None = None,
                   policy: Policy | str = Policy.LRU, num_sets: int = 64,
                   latency: LatencyProfile = INTEL) -> ChannelConfig:
    if kind is ChannelKind.LRU_NOSHARED:
        return ChannelConfig(Protocol.NO_SHARED, ways, d or ways // 2, set_index,
                             policy, latency, num_sets)
    return ChannelConfig(Protocol.SHARED, ways, d or ways, set_index, policy,
                         latency, num_sets)


def sender_tag(kind: ChannelKind, ways: int) -> int:
    if kind is ChannelKind.FLUSH_RELOAD:
        return PROBE_TAG_BASE
    line = 0 if kind is ChannelKind.LRU_SHARED else ways
    return ChannelConfig.tag(line)


def victim_run(gadget: Gadget, cache: Cache, index: int, kind: ChannelKind,
               set_map: Callable[[int], int] | None = None) -> VictimResult:
    """One call of the victim; out-of-bounds calls leave only cache side effects."""
    kind = ChannelKind(kind)
    set_map = set_map or gadget.residue
    if 0 <= index < gadget.bounds:
        # architectural path, touches the in-bounds entry's line
        value = gadget.array1[index]
        cache.access(cache.geometry.join(sender_tag(kind, cache.geometry.ways),
                                         set_map(value)))
        return VictimResult(value, None)
    value = gadget.byte_at(index)
    s = set_map(value)
    addr = cache.geometry.join(sender_tag(kind, cache.geometry.ways), s)
    out = cache.access(addr)
    return VictimResult(None, SpeculativeAccess(addr, s, True, out.kind))


@dataclass
class RecoveryReport:
    secret: bytes
    recovered: list[int | None]
    triggers: int
    victim_misses: int
    details: list[tuple[int | None, int | None]] = field(default_factory=list)

    @property
    def unresolved(self) -> list[int]:
        return [i for i, v in enumerate(self.recovered) if v is None]

    @property
    def correct(self) -> int:
        return sum(1 for a, b in zip(self.recovered, self.secret) if a == b)


class _Receiver:
    def __init__(self, gadget: Gadget, kind: ChannelKind, ways: int, d: int | None,
                 policy: Policy | str, seed: int, noise: float,
                 latency: LatencyProfile):
        self.gadget, self.kind, self.noise = gadget, kind, noise
        self.cache = Cache(CacheGeometry(gadget.num_sets, ways), policy,
                           seed=derive_seed(seed, "cache"))
        self.cfgs = [channel_config(kind, s, ways, d, policy, gadget.num_sets, latency)
                     for s in range(gadget.usable_sets)]
        self.lat_rng = stream(seed, "latency")
        self.noise_rng = stream(seed, "noise")
        self.victim_misses = 0

    def _prime(self) -> None:
        # the victim's own working set: its lines are resident before the attack
        if self.kind is ChannelKind.LRU_NOSHARED:
            for cfg in self.cfgs:
                self.cache.sets[cfg.target_set].access(cfg.tag(cfg.sender_line))

    def signalled_sets(self, index: int, set_map: Callable[[int], int]) -> list[int]:
        sets = self.cache.sets
        probe = ChannelConfig.tag(0) if self.kind is not ChannelKind.FLUSH_RELOAD else PROBE_TAG_BASE
        self._prime()
        for cfg in self.cfgs:
            if self.kind is ChannelKind.FLUSH_RELOAD:
                sets[cfg.target_set].invalidate(probe)
            else:
                receiver_init(cfg, sets[cfg.target_set].access)
        r = victim_run(self.gadget, self.cache, index, self.kind, set_map)
        if r.speculative.outcome is not Outcome.HIT:
            self.victim_misses += 1
        if self.noise > 0:
            for cfg in self.cfgs:
                if self.noise_rng.random() < self.noise:
                    sets[cfg.target_set].access(0x9000 + self.noise_rng.randrange(16))
        hot = []
        for cfg in self.cfgs:
            cset = sets[cfg.target_set]
            if self.kind is ChannelKind.FLUSH_RELOAD:
                obs = measure(cfg.latency, cset.access(probe).kind, self.lat_rng)
                bit = "1" if obs.hit else "0"
            else:
                _, out = receiver_decode(cfg, cset.access)
                bit = cfg.decode(measure(cfg.latency, out.kind, self.lat_rng).classified)
            if bit == "1":
                hot.append(cfg.target_set)
        return hot


def _plurality(counts: dict[int, int]) -> int | None:
    if not counts:
        return None
    best = max(counts.values())
    winners = [c for c, n in counts.items() if n == best]
    return winners[0] if len(winners) == 1 else None


def recover_secret(gadget: Gadget, kind: ChannelKind | str = ChannelKind.LRU_SHARED,
                   repetitions: int = 2, ways: int = 8, d: int | None = None,
                   policy: Policy | str = Policy.LRU, seed: int = 0,
                   noise: float = 0.0, latency: LatencyProfile = INTEL) -> RecoveryReport:
    """Leak every secret byte, one victim trigger per pass and repetition.

    Each pass tallies, over its repetitions, how often every set decoded a 1;
    the set with the strictly highest tally wins.  A pass without a unique
    winner leaves the byte unresolved.
    """
    kind = ChannelKind(kind)
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    rx = _Receiver(gadget, kind, ways, d, policy, seed, noise, latency)
    recovered, details, triggers = [], [], 0
    for i in range(len(gadget.secret)):
        index = gadget.bounds + i
        parts = []
        for set_map in (gadget.residue, gadget.quotient):
            counts: dict[int, int] = {}
            for _ in range(repetitions):
                for s in rx.signalled_sets(index, set_map):
                    counts[s] = counts.get(s, 0) + 1
                triggers += 1
            parts.append(_plurality(counts))
        details.append(tuple(parts))
        r, q = parts
        recovered.append(None if r is None or q is None else gadget.value_of(r, q))
    return RecoveryReport(bytes(gadget.secret), recovered, triggers, rx.victim_misses, details)


def architectural_outputs(gadget: Gadget, indices: list[int],
                          kind: ChannelKind = ChannelKind.LRU_SHARED) -> list[int | None]:
    """What the victim returns for each index, on a throwaway cache."""
    cache = Cache()
    return [victim_run(gadget, cache, i, kind).architectural for i in indices]
