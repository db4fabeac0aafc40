"""Error measurement, noise filtering, latency-trace decoding and miss rates."""

from __future__ import annotations

import os
import random
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .cache import Cache, CacheGeometry, Outcome, Policy


# --- edit distance -------------------------------------------------------------


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit costs (Wagner-Fischer, two rows)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class ErrorReport:
    sent: str
    received: str
    edit_distance: int
    error_rate: float


def error_report(sent: str, received: str) -> ErrorReport:
    if not sent:
        raise ValueError("sent string must be non-empty")
    ed = edit_distance(sent, received)
    return ErrorReport(sent, received, ed, ed / len(sent))


# --- run-length filter ---------------------------------------------------------


@dataclass
class FilterResult:
    segments: list[tuple[int, str]] = field(default_factory=list)
    discarded: list[tuple[int, int]] = field(default_factory=list)  # (start, length)

    @property
    def kept(self) -> str:
        return "".join(s for _, s in self.segments)

    @property
    def discarded_bits(self) -> int:
        return sum(n for _, n in self.discarded)


def runlength_filter(bits: str, max_run: int) -> FilterResult:
    """Drop runs of identical bits longer than ``max_run``.

    Long constant stretches are what a polluted set looks like, so they are
    cut out; the pieces in between are returned with their start offsets.
    """
    if max_run < 1:
        raise ValueError("max_run must be >= 1")
    out = FilterResult()
    seg_start = 0
    for m in re.finditer(r"0+|1+", bits):
        if m.end() - m.start() > max_run:
            if m.start() > seg_start:
                out.segments.append((seg_start, bits[seg_start:m.start()]))
            out.discarded.append((m.start(), m.end() - m.start()))
            seg_start = m.end()
    if seg_start < len(bits):
        out.segments.append((seg_start, bits[seg_start:]))
    return out


# --- moving-average decoding -----------------------------------------------------


@dataclass(frozen=True)
class DecodeResult:
    bits: str
    period: float
    offset: float
    separation: float
    degenerate: bool


def moving_average(x: Sequence[float], window: int) -> np.ndarray:
    if window < 1:
        raise ValueError("window must be >= 1")
    arr = np.asarray(x, dtype=float)
    if window == 1 or arr.size == 0:
        return arr
    kernel = np.ones(window) / window
    # divide by the true overlap so the edges are not dragged towards zero
    num = np.convolve(arr, kernel, mode="same")
    den = np.convolve(np.ones_like(arr), kernel, mode="same")
    return num / den


def _sample_points(n: int, period: float, offset: float) -> np.ndarray:
    count = int((n - offset) // period)
    return np.floor(offset + (np.arange(count) + 0.5) * period).astype(int)


def two_means_threshold(values: np.ndarray, rounds: int = 50) -> float:
    """Midpoint of a two-cluster split, started from the extremes."""
    lo, hi = float(values.min()), float(values.max())
    for _ in range(rounds):
        t = (lo + hi) / 2
        low, high = values[values <= t], values[values > t]
        if low.size == 0 or high.size == 0:
            break
        new = float(low.mean()), float(high.mean())
        if new == (lo, hi):
            break
        lo, hi = new
    return (lo + hi) / 2


def _separation(values: np.ndarray, threshold: float) -> float:
    hi = values[values > threshold]
    lo = values[values <= threshold]
    if hi.size == 0 or lo.size == 0:
        return 0.0
    spread = np.sqrt((hi.var() * hi.size + lo.var() * lo.size) / values.size)
    gap = hi.mean() - lo.mean()
    return float(gap / spread) if spread > 0 else float("inf")


def moving_average_decode(latencies: Sequence[float], window: int, period: float,
                          offset: float = 0.0, high_bit: str = "1") -> DecodeResult:
    """Smooth, split into two latency levels, and read one bit per ``period`` samples.

    ``high_bit`` is the bit a high latency stands for: "1" when a miss means 1,
    "0" when a miss means 0.
    """
    if period < 1:
        raise ValueError("period must be >= 1")
    smooth = moving_average(latencies, window)
    if smooth.size == 0:
        return DecodeResult("", period, offset, 0.0, True)
    picks = smooth[_sample_points(smooth.size, period, offset)]
    flat = np.ptp(smooth) <= 1e-9 * max(1.0, float(np.abs(smooth).max()))
    degenerate = bool(flat) or picks.size == 0
    threshold = float(smooth[0]) if degenerate else two_means_threshold(picks)
    low_bit = "0" if high_bit == "1" else "1"
    bits = "".join(high_bit if v > threshold else low_bit for v in picks)
    sep = 0.0 if degenerate else _separation(picks, threshold)
    return DecodeResult(bits, float(period), float(offset), sep, degenerate)


def best_fit_decode(latencies: Sequence[float], periods: Iterable[float],
                    window: int | None = None, phases: int = 8,
                    high_bit: str = "1") -> DecodeResult:
    """Scan candidate periods (and sampling phases) for the widest class gap."""
    best: DecodeResult | None = None
    for p in periods:
        w = window if window is not None else max(1, int(p) // 2)
        for k in range(phases):
            r = moving_average_decode(latencies, w, p, offset=p * k / phases,
                                      high_bit=high_bit)
            if best is None or r.separation > best.separation:
                best = r
    if best is None:
        raise ValueError("no candidate periods")
    return best


# --- trace files and synthetic traces ---------------------------------------------


class TraceFormatError(ValueError):
    def __init__(self, path: str, line_no: int, text: str):
        super().__init__(f"{path}:{line_no}: malformed address {text!r}")
        self.path, self.line_no, self.text = path, line_no, text


_HEX = re.compile(r"(?:0x)?([0-9a-f]{1,16})")


def parse_trace(lines: Iterable[str], source: str = "<trace>") -> list[int]:
    out = []
    for n, raw in enumerate(lines, 1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        m = _HEX.fullmatch(text)
        if not m:
            raise TraceFormatError(source, n, text)
        out.append(int(m.group(1), 16))
    return out


def read_trace(path: str | os.PathLike) -> list[int]:
    with open(path, encoding="ascii", errors="replace") as fh:
        return parse_trace(fh, str(path))


def write_trace(path: str | os.PathLike, addrs: Iterable[int], comment: str = "") -> None:
    with open(path, "w") as fh:
        for line in comment.splitlines():
            fh.write(f"# {line}\n")
        for a in addrs:
            fh.write(f"{a:x}\n")


def sequential_scan(geometry: CacheGeometry, lines: int, repeats: int = 4) -> list[int]:
    one = [i * geometry.line_size for i in range(lines)]
    return one * repeats


def strided(geometry: CacheGeometry, count: int, stride_lines: int, repeats: int = 4) -> list[int]:
    one = [i * stride_lines * geometry.line_size for i in range(count)]
    return one * repeats


def cyclic_conflict(geometry: CacheGeometry, repeats: int = 100, set_index: int = 0,
                    lines: int | None = None) -> list[int]:
    """Round-robin over ``ways + 1`` lines that all map to one set."""
    n = geometry.ways + 1 if lines is None else lines
    one = [geometry.join(tag, set_index) for tag in range(1, n + 1)]
    return one * repeats


def zipf_random(geometry: CacheGeometry, length: int, lines: int, s: float = 1.0,
                seed: int = 0) -> list[int]:
    rng = random.Random(seed)
    weights = [1.0 / (k + 1) ** s for k in range(lines)]
    picks = rng.choices(range(lines), weights=weights, k=length)
    # scatter line numbers so popular lines do not all share low set indices
    perm = list(range(lines))
    rng.shuffle(perm)
    return [perm[p] * geometry.line_size for p in picks]


SYNTHETIC = {
    "sequential": lambda g, seed: sequential_scan(g, lines=g.num_sets * g.ways * 2),
    "strided": lambda g, seed: strided(g, count=3 * g.ways, stride_lines=g.num_sets),
    "cyclic": lambda g, seed: cyclic_conflict(g),
    "zipf": lambda g, seed: zipf_random(g, 20000, g.num_sets * g.ways * 4, seed=seed),
}


# --- miss rate -------------------------------------------------------------------------


@dataclass(frozen=True)
class MissRateReport:
    trace_id: str
    policy: str
    accesses: int
    hits: int
    misses: int
    compulsory: int

    @property
    def miss_rate(self) -> float:
        return self.misses / self.accesses


@dataclass
class Replay:
    outcomes: list[Outcome]
    victims: list[tuple[int, int]]  # (set index, evicted tag)


def replay(trace: Sequence[int], cache: Cache) -> Replay:
    outcomes, victims = [], []
    for addr in trace:
        tag, idx = cache.geometry.split(addr)
        r = cache.sets[idx].access(tag)
        outcomes.append(r.kind)
        if r.evicted_tag is not None:
            victims.append((idx, r.evicted_tag))
    return Replay(outcomes, victims)


def miss_rate(trace: Sequence[int], geometry: CacheGeometry, policy: Policy | str,
              seed: int = 0, trace_id: str = "trace", **options) -> MissRateReport:
    if not trace:
        raise ValueError("trace is empty")
    cache = Cache(geometry, policy, seed=seed, **options)
    hits = 0
    first_touch = set()
    for addr in trace:
        tag, idx = geometry.split(addr)
        first_touch.add((tag, idx))
        hits += cache.sets[idx].hit_or_fill(tag)
    n = len(trace)
    return MissRateReport(trace_id, Policy(policy).value, n, hits, n - hits, len(first_touch))
