"""Latency model for a pointer-chased probe.

A timed probe costs ``chain_length`` guaranteed hits followed by the probe
itself.  Each component latency is drawn uniformly from its range, optional
jitter is added, and the total is floored to the timer quantum.  Totals below
the threshold read as hits; a total equal to the threshold reads as a miss.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace

from .cache import Outcome


@dataclass(frozen=True)
class LatencyProfile:
    hit: tuple[int, int] = (4, 5)
    miss: tuple[int, int] = (12, 12)
    jitter: int = 0
    chain_length: int = 7
    quantum: int = 1
    threshold: float | None = None

    def __post_init__(self):
        for name in ("hit", "miss"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"bad {name} latency range {(lo, hi)}")
        if self.jitter < 0 or self.chain_length < 0 or self.quantum < 1:
            raise ValueError("jitter and chain_length must be >= 0, quantum >= 1")
        if sum(self.miss) <= sum(self.hit):
            raise ValueError("miss latency range must sit above the hit range")

    def hit_total_range(self) -> tuple[int, int]:
        n = self.chain_length + 1
        return n * self.hit[0], n * self.hit[1] + self.jitter

    def miss_total_range(self) -> tuple[int, int]:
        c = self.chain_length
        return (c * self.hit[0] + self.miss[0],
                c * self.hit[1] + self.miss[1] + self.jitter)

    def effective_threshold(self) -> float:
        """Configured threshold, or the midpoint between the two supports."""
        if self.threshold is not None:
            return self.threshold
        return (self.hit_total_range()[1] + self.miss_total_range()[0]) / 2

    def with_threshold(self, threshold: float) -> "LatencyProfile":
        return replace(self, threshold=threshold)


# Hit and L2 latencies for the two measured microarchitecture families.
INTEL = LatencyProfile(hit=(4, 5), miss=(12, 12))
AMD_ZEN = LatencyProfile(hit=(4, 5), miss=(17, 17))
# coarse timestamp counter: individual probes are hard to read, averages are not
AMD_ZEN_COARSE = LatencyProfile(hit=(4, 5), miss=(17, 17), jitter=24, quantum=20)

PROFILES = {"intel": INTEL, "amd": AMD_ZEN, "amd-coarse": AMD_ZEN_COARSE}


@dataclass(frozen=True)
class Observation:
    total_cycles: int
    classified: Outcome

    @property
    def hit(self) -> bool:
        return self.classified is Outcome.HIT


def sample_total(profile: LatencyProfile, hit: bool, rng: random.Random) -> int:
    lo, hi = profile.hit
    total = 0
    for _ in range(profile.chain_length):
        total += rng.randint(lo, hi)
    lo, hi = profile.hit if hit else profile.miss
    total += rng.randint(lo, hi)
    if profile.jitter:
        total += rng.randint(0, profile.jitter)
    q = profile.quantum
    return total - total % q if q > 1 else total


def measure(profile: LatencyProfile, outcome: Outcome | bool, rng: random.Random,
            threshold: float | None = None) -> Observation:
    """Time one probe whose cache outcome is known; a bypass costs a miss."""
    hit = outcome is True or outcome is Outcome.HIT
    total = sample_total(profile, hit, rng)
    t = profile.effective_threshold() if threshold is None else threshold
    return Observation(total, Outcome.HIT if total < t else Outcome.MISS)


def misclassification(threshold: float, hits: list[int], misses: list[int]) -> int:
    return sum(1 for h in hits if h >= threshold) + sum(1 for m in misses if m < threshold)


def calibrate_threshold(profile: LatencyProfile, samples: int,
                        rng: random.Random) -> float:
    """Pick a threshold from sampled hit and miss totals.

    Separated classes get the midpoint between the largest hit and smallest
    miss.  Overlapping classes get the half-integer cut with the fewest
    misclassified samples, ties going to the cut nearest the midpoint of the
    class means.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    hits = [sample_total(profile, True, rng) for _ in range(samples)]
    misses = [sample_total(profile, False, rng) for _ in range(samples)]
    if max(hits) < min(misses):
        return (max(hits) + min(misses)) / 2
    centre = (sum(hits) / samples + sum(misses) / samples) / 2
    lo, hi = min(hits + misses), max(hits + misses)
    best = None
    for v in range(lo - 1, hi + 1):
        cut = v + 0.5
        key = (misclassification(cut, hits, misses), abs(cut - centre))
        if best is None or key < best[0]:
            best = (key, cut)
    if best[0][0] >= samples:  # no better than guessing
        raise ValueError("hit and miss latencies are indistinguishable")
    return best[1]
