"""Monte-Carlo eviction probability of line 0 under pseudo-LRU policies.

A trial warms one 8-way set up, then repeats an access sequence and records,
after every iteration, whether line 0 is absent from the set.

Sequence 1 is the plain in-order sweep 0, 1, ..., N.  Sequence 2 sweeps
lines 0..N-1 and may insert one access to a fixed conflicting line ``x``
after each of them.  At least one insertion happens per iteration.

Warm-up models the set's history before the experiment:

* random: ``prefix_length`` accesses, each either one of a couple of unrelated
  conflicting tags (probability ``other_prob``) or a uniformly chosen line;
* sequential: the same random prefix, then an in-order cyclic stream over
  lines 0..N-1 starting at a random line, with an unrelated access slipped
  in after each element with probability ``insert_prob``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .cache import CacheSet, Policy, make_policy
from .rng import derive_seed, stream
from .runner import parallel_map


class AccessSequence(str, Enum):
    SEQ1 = "seq1"
    SEQ2 = "seq2"


class InitCondition(str, Enum):
    RANDOM = "random"
    SEQUENTIAL = "sequential"


OTHER_TAG_BASE = 1000
X_TAG = 100


@dataclass(frozen=True)
class WarmupModel:
    prefix_length: int = 64
    other_prob: float = 0.135
    prefix_tags: int = 2
    stream_length: int = 24
    insert_prob: float = 0.25
    insert_tags: int = 8
    seq2_slot_prob: float = 0.375

    def __post_init__(self):
        for name in ("other_prob", "insert_prob", "seq2_slot_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability")
        if self.seq2_slot_prob == 0.0:
            raise ValueError("seq2_slot_prob must be positive (one insertion is required)")
        if min(self.prefix_length, self.stream_length) < 0:
            raise ValueError("lengths must be >= 0")
        if self.prefix_tags < 1 or self.insert_tags < 1:
            raise ValueError("tag pools must be non-empty")


@dataclass(frozen=True)
class AnalysisSpec:
    policy: Policy = Policy.TREE_PLRU
    sequence: AccessSequence = AccessSequence.SEQ1
    init: InitCondition = InitCondition.RANDOM
    iterations: int = 8
    trials: int = 10_000
    seed: int = 0
    ways: int = 8
    model: WarmupModel = WarmupModel()
    keep_accessed: bool = False  # Bit-PLRU saturation rule, see cache.BitPLRU

    def __post_init__(self):
        object.__setattr__(self, "policy", Policy(self.policy))
        object.__setattr__(self, "sequence", AccessSequence(self.sequence))
        object.__setattr__(self, "init", InitCondition(self.init))
        if self.policy not in (Policy.LRU, Policy.TREE_PLRU, Policy.BIT_PLRU):
            raise ValueError(f"analysis covers lru, tree-plru and bit-plru, not {self.policy.value}")
        if self.iterations < 1 or self.trials < 1:
            raise ValueError("iterations and trials must be positive")

    @property
    def cell(self) -> tuple:
        return (self.policy.value, self.sequence.value, self.init.value, self.ways,
                self.keep_accessed, self.model)


@dataclass
class EvictionProbability:
    spec: AnalysisSpec
    evicted: list[int] = field(default_factory=list)  # per-iteration counts

    @property
    def trials(self) -> int:
        return self.spec.trials

    @property
    def series(self) -> list[float]:
        return [c / self.trials for c in self.evicted]

    @property
    def p(self) -> float:
        return self.series[-1]

    def at(self, iteration: int) -> float:
        return self.evicted[iteration - 1] / self.trials

    def stderr(self, iteration: int) -> float:
        p = self.at(iteration)
        return math.sqrt(p * (1 - p) / self.trials)


def warm_up(cset: CacheSet, init: InitCondition, rng, model: WarmupModel = WarmupModel()) -> None:
    n = cset.ways
    access = cset.hit_or_fill
    rand, randrange = rng.random, rng.randrange
    for _ in range(model.prefix_length):
        if rand() < model.other_prob:
            access(OTHER_TAG_BASE + randrange(model.prefix_tags))
        else:
            access(randrange(n))
    if init is InitCondition.SEQUENTIAL:
        start = randrange(n)
        for i in range(model.stream_length):
            access((start + i) % n)
            if rand() < model.insert_prob:
                access(OTHER_TAG_BASE + randrange(model.insert_tags))


def seq2_slots(n: int, prob: float, rng) -> list[bool]:
    """Insertion pattern for sequence 2, redrawn until at least one slot is used."""
    while True:
        slots = [rng.random() < prob for _ in range(n)]
        if any(slots):
            return slots


def run_trial(spec: AnalysisSpec, rng) -> list[bool]:
    n = spec.ways
    cset = CacheSet(make_policy(spec.policy, n, keep_accessed=spec.keep_accessed))
    warm_up(cset, spec.init, rng, spec.model)
    access = cset.hit_or_fill
    tags = cset.tags
    out = []
    for _ in range(spec.iterations):
        if spec.sequence is AccessSequence.SEQ1:
            for line in range(n + 1):
                access(line)
        else:
            slots = seq2_slots(n, spec.model.seq2_slot_prob, rng)
            for line in range(n):
                access(line)
                if slots[line]:
                    access(X_TAG)
        out.append(0 not in tags)
    return out


def _trial_block(job) -> list[int]:
    spec, start, stop = job
    counts = [0] * spec.iterations
    for t in range(start, stop):
        rng = stream(spec.seed, spec.cell, t)
        for k, gone in enumerate(run_trial(spec, rng)):
            counts[k] += gone
    return counts


def run_analysis(spec: AnalysisSpec, jobs: int = 1, block: int = 2500) -> EvictionProbability:
    """Eviction probability of line 0 after each of ``spec.iterations`` sweeps.

    Every trial draws from its own stream keyed by (seed, cell, trial index),
    so the totals do not depend on ``jobs`` or ``block``.
    """
    blocks = [(spec, s, min(s + block, spec.trials)) for s in range(0, spec.trials, block)]
    counts = [0] * spec.iterations
    for part in parallel_map(_trial_block, blocks, jobs):
        counts = [a + b for a, b in zip(counts, part)]
    return EvictionProbability(spec, counts)


DEFAULT_ROWS = (1, 2, 3, 8)


@dataclass(frozen=True)
class TableRow:
    policy: str
    sequence: str
    init: str
    iteration: int
    p: float
    stderr: float
    trials: int


def eviction_table(policies: Sequence[Policy | str] = (Policy.LRU, Policy.TREE_PLRU, Policy.BIT_PLRU),
                   sequences: Sequence[AccessSequence | str] = tuple(AccessSequence),
                   inits: Sequence[InitCondition | str] = tuple(InitCondition),
                   rows: Sequence[int] = DEFAULT_ROWS, trials: int = 10_000, seed: int = 0,
                   jobs: int = 1, model: WarmupModel = WarmupModel(),
                   keep_accessed: bool = False) -> list[TableRow]:
    """All requested cells, rows ordered policy, init, sequence, iteration."""
    iters = max(rows)
    specs = [AnalysisSpec(pol, seq, ini, iters, trials, seed, model=model,
                          keep_accessed=keep_accessed)
             for pol in policies for ini in inits for seq in sequences]
    blocks, owners = [], []
    for i, sp in enumerate(specs):
        for s in range(0, trials, 2500):
            blocks.append((sp, s, min(s + 2500, trials)))
            owners.append(i)
    counts = [[0] * iters for _ in specs]
    for i, part in zip(owners, parallel_map(_trial_block, blocks, jobs)):
        counts[i] = [a + b for a, b in zip(counts[i], part)]
    out = []
    for sp, c in zip(specs, counts):
        ep = EvictionProbability(sp, c)
        for r in rows:
            out.append(TableRow(sp.policy.value, sp.sequence.value, sp.init.value, r,
                                ep.at(r), ep.stderr(r), trials))
    return out


def derive_cell_seed(seed: int, spec: AnalysisSpec) -> int:
    return derive_seed(seed, spec.cell)
