"""One-bit LRU channel protocols and the multi-bit covert-channel driver.

Two protocols are supported.  With shared memory the receiver fills the target
set with lines 0..N and the sender signals a 1 by touching line 0, which then
survives the receiver's final fill (timed hit => 1).  Without shared memory the
receiver owns lines 0..N-1 and the sender signals a 1 by touching its own line
N, which pushes line 0 out (timed miss => 1).
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterator, Sequence

from .cache import AccessOutcome, Cache, CacheGeometry, Outcome, Policy
from .evaluation import edit_distance, runlength_filter
from .rng import derive_seed, stream
from .runner import parallel_map
from .timing import INTEL, LatencyProfile, Observation, measure

LINE_TAG_BASE = 0x100
NOISE_TAG_BASE = 0x8000

Accessor = Callable[[int], AccessOutcome]


class Protocol(str, Enum):
    SHARED = "shared"
    NO_SHARED = "noshared"


class ScheduleMode(str, Enum):
    IDEAL = "ideal"
    HYPER_THREADED = "hyperthreaded"
    TIME_SLICED = "timesliced"


@dataclass(frozen=True)
class ChannelConfig:
    protocol: Protocol = Protocol.SHARED
    ways: int = 8
    d: int = 8
    target_set: int = 0
    policy: Policy = Policy.LRU
    latency: LatencyProfile = INTEL
    num_sets: int = 64

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        object.__setattr__(self, "policy", Policy(self.policy))
        top = self.ways + 1 if self.protocol is Protocol.SHARED else self.ways
        if not 1 <= self.d <= top:
            raise ValueError(f"d={self.d} outside 1..{top} for {self.protocol.value}")
        if not 0 <= self.target_set < self.num_sets:
            raise ValueError("target_set outside the cache")
        CacheGeometry(self.num_sets, self.ways)  # validates

    @property
    def geometry(self) -> CacheGeometry:
        return CacheGeometry(self.num_sets, self.ways)

    @staticmethod
    def tag(line: int) -> int:
        return LINE_TAG_BASE + line

    @property
    def sender_line(self) -> int:
        return 0 if self.protocol is Protocol.SHARED else self.ways

    @property
    def init_lines(self) -> range:
        return range(self.d)

    @property
    def decode_lines(self) -> range:
        last = self.ways if self.protocol is Protocol.SHARED else self.ways - 1
        return range(self.d, last + 1)

    @property
    def receiver_accesses(self) -> int:
        """Accesses per receiver iteration, the timed probe included."""
        return len(self.init_lines) + len(self.decode_lines) + 1

    def decode(self, classified: Outcome) -> str:
        hit = classified is Outcome.HIT
        if self.protocol is Protocol.SHARED:
            return "1" if hit else "0"
        return "0" if hit else "1"

    def make_cache(self, seed: int = 0) -> Cache:
        return Cache(self.geometry, self.policy, seed=seed)


# --- protocol phases on one set ------------------------------------------------


def receiver_init(cfg: ChannelConfig, access: Accessor) -> list[AccessOutcome]:
    return [access(cfg.tag(n)) for n in cfg.init_lines]


def sender_encode(cfg: ChannelConfig, access: Accessor, m: int | str) -> AccessOutcome | None:
    if int(m):
        return access(cfg.tag(cfg.sender_line))
    return None


def receiver_decode(cfg: ChannelConfig, access: Accessor) -> tuple[list[AccessOutcome], AccessOutcome]:
    fills = [access(cfg.tag(n)) for n in cfg.decode_lines]
    return fills, access(cfg.tag(0))


@dataclass
class BitTransfer:
    bit: str
    observation: Observation
    probe: AccessOutcome
    sender: AccessOutcome | None
    receiver: list[AccessOutcome]


def transfer_bit(cfg: ChannelConfig, m: int | str, cache: Cache | None = None,
                 rng: random.Random | None = None,
                 access: Accessor | None = None) -> BitTransfer:
    """One init/encode/decode round in strict order on the target set."""
    if access is None:
        cache = cache if cache is not None else cfg.make_cache()
        access = cache.sets[cfg.target_set].access
    rng = rng if rng is not None else random.Random(0)
    init = receiver_init(cfg, access)
    sent = sender_encode(cfg, access, m)
    fills, probe = receiver_decode(cfg, access)
    obs = measure(cfg.latency, probe.kind, rng)
    return BitTransfer(cfg.decode(obs.classified), obs, probe, sent, init + fills + [probe])


def transfer_bit_shared(cfg: ChannelConfig, m: int | str, **kw) -> BitTransfer:
    if cfg.protocol is not Protocol.SHARED:
        raise ValueError("config is not a shared-memory channel")
    return transfer_bit(cfg, m, **kw)


def transfer_bit_noshared(cfg: ChannelConfig, m: int | str, **kw) -> BitTransfer:
    if cfg.protocol is not Protocol.NO_SHARED:
        raise ValueError("config is not a no-shared-memory channel")
    return transfer_bit(cfg, m, **kw)


# --- multi-bit driver -------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleModel:
    mode: ScheduleMode = ScheduleMode.IDEAL
    ts: int = 6000
    tr: int = 600
    quantum: int = 100_000
    access_cost: int = 50
    # accesses to the target set by whatever else runs at a context switch
    switch_accesses: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", ScheduleMode(self.mode))
        if self.ts < 1 or self.tr < 1 or self.quantum < 1 or self.access_cost < 1:
            raise ValueError("ts, tr, quantum and access_cost must be positive")
        if self.switch_accesses < 0:
            raise ValueError("switch_accesses must be >= 0")


@dataclass(frozen=True)
class NoiseModel:
    rate: float = 0.0  # expected accesses to the target set per 1000 cycles
    tag_pool: int = 16

    def __post_init__(self):
        if self.rate < 0 or self.tag_pool < 1:
            raise ValueError("noise rate must be >= 0 and tag_pool >= 1")


@dataclass(frozen=True)
class TracePoint:
    time: int
    window: int
    sent: str
    cycles: int
    classified: Outcome
    decoded: str


@dataclass
class ChannelRun:
    sent: str
    received: str
    trace: list[TracePoint]
    sender_outcomes: list[Outcome]
    cycles: int
    edit_distance: int = field(init=False)
    error_rate: float = field(init=False)

    def __post_init__(self):
        self.edit_distance = edit_distance(self.sent, self.received)
        self.error_rate = self.edit_distance / len(self.sent)

    @property
    def sender_misses(self) -> int:
        return sum(1 for o in self.sender_outcomes if o is not Outcome.HIT)


def majority_decode(trace: Sequence[TracePoint], nbits: int) -> str:
    """One bit per window by majority; ties read as 0, empty windows are lost."""
    ones = [0] * nbits
    total = [0] * nbits
    for p in trace:
        if 0 <= p.window < nbits:
            total[p.window] += 1
            ones[p.window] += p.decoded == "1"
    return "".join("1" if 2 * o > t else "0" for o, t in zip(ones, total) if t)


def _poisson_times(rate: float, end: int, rng: random.Random) -> Iterator[int]:
    if rate <= 0:
        return
    t = 0.0
    scale = rate / 1000.0
    while True:
        t += rng.expovariate(scale)
        if t >= end:
            return
        yield int(t)


def _check(cfg: ChannelConfig, sched: ScheduleModel, message: str) -> None:
    if not message or set(message) - {"0", "1"}:
        raise ValueError("message must be a non-empty bit string")
    need = cfg.receiver_accesses * sched.access_cost
    if sched.tr < need:
        raise ValueError(f"Tr={sched.tr} is below the receiver's own cost of {need} cycles")
    if sched.ts < sched.access_cost:
        raise ValueError("Ts is shorter than one encode access")


def run_covert_channel(cfg: ChannelConfig, sched: ScheduleModel, noise: NoiseModel,
                       message: str, seed: int = 0, prime: bool = True) -> ChannelRun:
    """Send ``message`` for ``Ts`` cycles per bit while the receiver samples every ``Tr``.

    ``prime`` runs one silent receiver round first so the lines start resident.
    """
    _check(cfg, sched, message)
    cache = cfg.make_cache(derive_seed(seed, "cache"))
    cset = cache.sets[cfg.target_set]
    lat_rng = stream(seed, "latency")
    noise_rng = stream(seed, "noise")
    if prime:
        for n in range(cfg.ways + 1):
            cset.access(cfg.tag(n))
        receiver_init(cfg, cset.access)
        receiver_decode(cfg, cset.access)
    run = {
        ScheduleMode.IDEAL: _run_ideal,
        ScheduleMode.HYPER_THREADED: _run_hyperthreaded,
        ScheduleMode.TIME_SLICED: _run_timesliced,
    }[sched.mode]
    trace, sender = run(cfg, sched, noise, message, cset, lat_rng, noise_rng)
    received = majority_decode(trace, len(message))
    return ChannelRun(message, received, trace, sender, len(message) * sched.ts)


def _noise_tag(noise: NoiseModel, rng: random.Random) -> int:
    return NOISE_TAG_BASE + rng.randrange(noise.tag_pool)


def _observe(cfg, probe, t, ts, message, lat_rng) -> TracePoint:
    obs = measure(cfg.latency, probe.kind, lat_rng)
    w = t // ts
    sent = message[w] if w < len(message) else ""
    return TracePoint(t, w, sent, obs.total_cycles, obs.classified, cfg.decode(obs.classified))


def _run_ideal(cfg, sched, noise, message, cset, lat_rng, noise_rng):
    trace, sender = [], []
    rounds = max(1, sched.ts // sched.tr)
    for i, bit in enumerate(message):
        for j in range(rounds):
            receiver_init(cfg, cset.access)
            out = sender_encode(cfg, cset.access, bit)
            if out is not None:
                sender.append(out.kind)
            for _ in _poisson_times(noise.rate, sched.tr, noise_rng):
                cset.access(_noise_tag(noise, noise_rng))
            _, probe = receiver_decode(cfg, cset.access)
            trace.append(_observe(cfg, probe, i * sched.ts + j * sched.tr,
                                  sched.ts, message, lat_rng))
    return trace, sender


# event ranks break timestamp ties: receiver, then sender, then noise
_RECV, _SEND, _NOISE = 0, 1, 2


def _receiver_events(cfg, sched, end) -> Iterator[tuple]:
    c = sched.access_cost
    t, t_last = 0, 0
    while True:
        for n in cfg.init_lines:
            yield (t, _RECV, cfg.tag(n), False)
            t += c
        t = max(t, t_last + sched.tr)
        t_last = t
        for n in cfg.decode_lines:
            yield (t, _RECV, cfg.tag(n), False)
            t += c
        if t >= end:
            return
        yield (t, _RECV, cfg.tag(0), True)
        t += c


def _sender_events(cfg, sched, message) -> Iterator[tuple]:
    tag = cfg.tag(cfg.sender_line)
    for i, bit in enumerate(message):
        if bit == "1":
            for t in range(i * sched.ts, (i + 1) * sched.ts, sched.access_cost):
                yield (t, _SEND, tag, False)


def _noise_events(noise, end, rng) -> Iterator[tuple]:
    for t in _poisson_times(noise.rate, end, rng):
        yield (t, _NOISE, _noise_tag(noise, rng), False)


def _run_hyperthreaded(cfg, sched, noise, message, cset, lat_rng, noise_rng):
    end = len(message) * sched.ts
    trace, sender = [], []
    events = heapq.merge(_receiver_events(cfg, sched, end),
                         _sender_events(cfg, sched, message),
                         _noise_events(noise, end, noise_rng),
                         key=lambda e: (e[0], e[1]))
    for t, actor, tag, timed in events:
        out = cset.access(tag)
        if actor == _SEND:
            sender.append(out.kind)
        elif timed:
            trace.append(_observe(cfg, out, t, sched.ts, message, lat_rng))
    return trace, sender


def _run_timesliced(cfg, sched, noise, message, cset, lat_rng, noise_rng):
    """Receiver and sender share one core; the receiver gives up the core while it sleeps."""
    end = len(message) * sched.ts
    c = sched.access_cost
    trace, sender = [], []
    pending = iter(_noise_events(noise, end, noise_rng))
    nxt = next(pending, None)

    def background_until(t):
        nonlocal nxt
        while nxt is not None and nxt[0] < t:
            cset.access(nxt[2])
            nxt = next(pending, None)

    def context_switch():
        for _ in range(sched.switch_accesses):
            cset.access(_noise_tag(noise, noise_rng))

    def receiver_steps():
        # yields None after each access and "sleep" when waiting for Tr
        t_last = 0
        while True:
            for n in cfg.init_lines:
                yield cfg.tag(n), False
            while now < t_last + sched.tr:
                yield None, "sleep"
            t_last = now
            for n in cfg.decode_lines:
                yield cfg.tag(n), False
            yield cfg.tag(0), True

    now = 0
    steps = receiver_steps()
    sender_tag = cfg.tag(cfg.sender_line)
    while now < end:
        # receiver slice
        slice_end = now + sched.quantum
        while now < end and now < slice_end:
            tag, kind = next(steps)
            if kind == "sleep":
                break
            background_until(now)
            out = cset.access(tag)
            if kind:
                trace.append(_observe(cfg, out, now, sched.ts, message, lat_rng))
            now += c
        if now >= end:
            break
        context_switch()
        # sender slice: busy for the whole quantum, touching its line during 1-bits
        slice_end = min(now + sched.quantum, end)
        while now < slice_end:
            if message[now // sched.ts] == "1":
                background_until(now)
                sender.append(cset.access(sender_tag).kind)
            now += c
        context_switch()
    return trace, sender


# --- parameter sweeps ------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    protocol: str
    policy: str
    d: int
    mode: str
    ts: int
    tr: int
    quantum: int
    noise_rate: float
    repetitions: int
    error_rate: float
    bits_per_kcycle: float
    effective_bits_per_kcycle: float
    filtered_bits: int
    sender_misses: int


def random_message(bits: int, seed: int) -> str:
    rng = stream(seed, "message")
    return "".join(rng.choice("01") for _ in range(bits))


def _cell_key(cfg: ChannelConfig, sched: ScheduleModel, noise: NoiseModel) -> tuple:
    return (cfg.protocol.value, cfg.policy.value, cfg.ways, cfg.d, cfg.target_set,
            repr(cfg.latency), sched.mode.value, sched.ts, sched.tr, sched.quantum,
            sched.access_cost, sched.switch_accesses, noise.rate, noise.tag_pool)


def _run_cell(job) -> SweepRow:
    cfg, sched, noise, message, reps, seed, max_run = job
    key = _cell_key(cfg, sched, noise)
    errors, filtered, misses = [], 0, 0
    for r in range(reps):
        run = run_covert_channel(cfg, sched, noise, message, derive_seed(seed, key, r))
        errors.append(run.error_rate)
        filtered += runlength_filter(run.received, max_run).discarded_bits
        misses += run.sender_misses
    err = sum(errors) / reps
    rate = 1000.0 / sched.ts
    return SweepRow(cfg.protocol.value, cfg.policy.value, cfg.d, sched.mode.value,
                    sched.ts, sched.tr, sched.quantum, noise.rate, reps, err,
                    rate, rate * max(0.0, 1.0 - err), filtered, misses)


def sweep(configs: Sequence[ChannelConfig], schedules: Sequence[ScheduleModel],
          noise: NoiseModel = NoiseModel(), repetitions: int = 30,
          message_bits: int = 128, seed: int = 0, jobs: int = 1,
          max_run: int = 16, message: str | None = None) -> list[SweepRow]:
    """Error rate for every (config, schedule) pair, in grid order.

    Every cell reuses the same random message; per-repetition seeds are derived
    from the cell's own parameters, so adding cells leaves the others unchanged.
    """
    if not configs or not schedules:
        raise ValueError("sweep grids must be non-empty")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    msg = message if message is not None else random_message(message_bits, seed)
    jobs_list = [(c, s, noise, msg, repetitions, seed, max_run)
                 for c in configs for s in schedules]
    return parallel_map(_run_cell, jobs_list, jobs)


def grid(base: ChannelConfig, d_values: Sequence[int]) -> list[ChannelConfig]:
    return [replace(base, d=d) for d in d_values]
