"""Acceptance suite: one PASS/FAIL line per criterion, plus informational lines.

The lines are printed at the end of the pytest run (and immediately when this
file is executed directly).  Known shortfalls are reported as FAIL and left
failing rather than tuned away.
"""

import os
import random
import sys
from functools import lru_cache
from pathlib import Path

import pytest

from lruchannel import cli
from lruchannel.cache import Cache, CacheGeometry, CacheSet, Policy, make_policy
from lruchannel.channels import (ChannelConfig, NoiseModel, Protocol, ScheduleMode,
                                 ScheduleModel, random_message, run_covert_channel)
from lruchannel.evaluation import cyclic_conflict, edit_distance, miss_rate, replay
from lruchannel.plcache import Variant, demo_message, pl_attack_demo
from lruchannel.plru import eviction_table
from lruchannel.runner import parallel_map
from lruchannel.transient import ChannelKind, Gadget, recover_secret

sys.path.insert(0, str(Path(__file__).parent))
from conftest import ACCEPTANCE_LINES  # noqa: E402

JOBS = min(4, os.cpu_count() or 1)


def report(n, ok, detail, info=False):
    tag = "INFO" if info else ("PASS" if ok else "FAIL")
    line = f"[{tag}] criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    return ok


# --- 1 ---------------------------------------------------------------------------------

EXPECTED_EVICTION = {
    # (policy, init, sequence): {iteration: (expected, tolerance)}; tolerance 0 means exact
    ("tree-plru", "random", "seq1"): {1: (0.504, .03), 2: (0.828, .03), 3: (0.992, .03), 8: (1.0, 0)},
    ("bit-plru", "random", "seq1"): {1: (0.385, .03), 8: (1.0, 0)},
    ("tree-plru", "sequential", "seq1"): {1: (0.909, .03), 8: (1.0, 0)},
    ("bit-plru", "sequential", "seq1"): {8: (1.0, 0)},
    ("tree-plru", "random", "seq2"): {1: (.627, .08), 2: (.656, .08), 3: (.642, .08), 8: (.620, .08)},
    ("tree-plru", "sequential", "seq2"): {1: (.756, .08), 2: (.659, .08), 3: (.640, .08), 8: (.620, .08)},
    ("bit-plru", "random", "seq2"): {1: (.555, .08), 2: (.697, .08), 3: (.801, .08), 8: (.990, .08)},
    ("bit-plru", "sequential", "seq2"): {1: (.610, .08), 2: (.641, .08), 3: (.703, .08), 8: (.990, .08)},
}


def test_criterion_1_eviction_table():
    import time
    t0 = time.perf_counter()
    rows = eviction_table(trials=10_000, seed=0, jobs=JOBS)
    elapsed = time.perf_counter() - t0
    got = {(r.policy, r.init, r.sequence, r.iteration): r.p for r in rows}
    bad = []
    for (pol, init, seq), it in EXPECTED_EVICTION.items():
        for i, (want, tol) in it.items():
            p = got[(pol, init, seq, i)]
            if (tol == 0 and p != want) or abs(p - want) > tol + 1e-12:
                bad.append(f"{pol}/{init}/{seq}@{i}={p:.3f} (want {want}±{tol})")
    lru = [p for (pol, *_), p in got.items() if pol == "lru"]
    if any(p != 1.0 for p in lru):
        bad.append("LRU cell below 1.0")
    ok = not bad and elapsed < 60
    report(1, ok, f"eviction table at 10000 trials/cell, {len(rows)} rows in {elapsed:.1f}s"
           + ("" if not bad else "; off: " + ", ".join(bad)))
    assert ok, bad


# --- 2 and 3 -------------------------------------------------------------------------------


def _ideal_runs():
    msg = random_message(128, 2024)
    out = {}
    for proto, ds in ((Protocol.SHARED, range(1, 9)), (Protocol.NO_SHARED, range(1, 8))):
        for d in ds:
            out[(proto, d)] = run_covert_channel(ChannelConfig(proto, 8, d),
                                                 ScheduleModel(ScheduleMode.IDEAL),
                                                 NoiseModel(0), msg, seed=d)
    return out


@pytest.fixture(scope="module")
def ideal_runs():
    return _ideal_runs()


def test_criterion_2_noiseless_exact(ideal_runs):
    failing = [f"{p.value} d={d} ({r.error_rate:.3f})" for (p, d), r in ideal_runs.items()
               if r.error_rate != 0]
    ok = report(2, not failing, "noiseless Ideal LRU, 128 bits, shared d=1..8 and noshared d=1..7"
                + ("" if not failing else "; nonzero error: " + ", ".join(failing)))
    rest = [r.error_rate for (p, d), r in ideal_runs.items() if not (p is Protocol.SHARED and d == 1)]
    report(2, all(e == 0 for e in rest),
           "shared d=2..8 and noshared d=1..7 all exact; shared d=1 cannot signal under strict "
           "init/encode/decode order (sender hits the only line init touched)", info=True)
    hyper = run_covert_channel(ChannelConfig(Protocol.SHARED, 8, 1),
                               ScheduleModel(ScheduleMode.HYPER_THREADED), NoiseModel(0),
                               random_message(128, 2024), 1)
    report(2, hyper.error_rate == 0,
           f"shared d=1 under HyperThreaded interleaving: error {hyper.error_rate:.3f}", info=True)
    assert ok


def test_criterion_3_sender_stealth(ideal_runs):
    misses = {d: r.sender_misses for (p, d), r in ideal_runs.items() if p is Protocol.SHARED}
    ok = all(m == 0 for m in misses.values())
    report(3, ok, f"shared-protocol sender misses over d=1..8: {sum(misses.values())}")
    assert ok


# --- 4 --------------------------------------------------------------------------------------


def test_criterion_4_pl_cache():
    alternating = "01" * 32
    messages = ["0" * 64, "1" * 64, alternating, random_message(64, 5)]
    leaks = []
    for pol in (Policy.LRU, Policy.TREE_PLRU, Policy.BIT_PLRU):
        for d in range(1, 8):
            cfg = ChannelConfig(Protocol.NO_SHARED, 8, d, policy=pol)
            pts = pl_attack_demo(Variant.ORIGINAL, alternating, cfg, seed=1)
            if "".join(p.decoded for p in pts) == alternating:
                leaks.append((pol.value, d))
    original_ok = bool(leaks)
    locked_ok = True
    for pol in (Policy.LRU, Policy.TREE_PLRU, Policy.BIT_PLRU):
        cfg = ChannelConfig(Protocol.NO_SHARED, 8, 4, policy=pol)
        obs = [[(p.cycles, p.classified) for p in pl_attack_demo(Variant.LRU_LOCKED, m, cfg, seed=1)]
               for m in messages]
        locked_ok &= all(o == obs[0] for o in obs)
    ok = original_ok and locked_ok
    report(4, ok, f"PL cache, literal noshared receiver: Original decodes alternating bits "
           f"in {len(leaks)} of 21 (policy, d) settings; LruLocked replay-identical: {locked_ok}")
    cfg = ChannelConfig(Protocol.NO_SHARED, 8, 2, policy=Policy.TREE_PLRU)
    pts = pl_attack_demo(Variant.ORIGINAL, alternating, cfg, seed=1,
                         decode_lines=[2, 3, 4, 1, 5, 6, 7], rounds=5)
    err = edit_distance(alternating, demo_message(pts)) / len(alternating)
    report(4, err == 0, f"Original, Tree-PLRU d=2, receiver re-touching line 1 during decode, "
           f"majority of 5 probes per bit: error {err:.3f}", info=True)
    assert ok


# --- 5 --------------------------------------------------------------------------------------


def test_criterion_5_transient():
    secret = b"The Magic Words!"
    parts = []
    ok = True
    for kind in (ChannelKind.LRU_SHARED, ChannelKind.LRU_NOSHARED):
        rep = recover_secret(Gadget(secret), kind, repetitions=2, seed=7)
        per_byte = rep.triggers / len(secret)
        ok &= rep.correct == len(secret) and per_byte <= 4
        parts.append(f"{kind.value} {rep.correct}/16 with {per_byte:g} triggers/byte")
    report(5, ok, "; ".join(parts))
    assert ok


# --- 6 --------------------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _brute(a, b):
    if not a or not b:
        return len(a) + len(b)
    return min(_brute(a[1:], b) + 1, _brute(a, b[1:]) + 1, _brute(a[1:], b[1:]) + (a[0] != b[0]))


def test_criterion_6_edit_distance():
    words = [format(i, f"0{n}b") if n else "" for n in range(7) for i in range(2 ** n)]
    bad = sum(edit_distance(a, b) != _brute(a, b) for a in words for b in words)
    rng = random.Random(6)
    rand = lambda: "".join(rng.choice("01") for _ in range(rng.randint(7, 10)))
    bad += sum(edit_distance(a, b) != _brute(a, b) for a, b in ((rand(), rand()) for _ in range(1000)))
    metric_bad = 0
    for _ in range(10_000):
        a, b, c = ("".join(rng.choice("01") for _ in range(rng.randint(0, 16))) for _ in range(3))
        ab, ba, ac, bc = edit_distance(a, b), edit_distance(b, a), edit_distance(a, c), edit_distance(b, c)
        metric_bad += not ((ab == 0) == (a == b) and ab == ba and ac <= ab + bc and ab >= 0)
    ok = bad == 0 and metric_bad == 0
    report(6, ok, f"{len(words) ** 2} exhaustive + 1000 random pairs vs recursion: {bad} "
           f"mismatches; metric violations on 10000 triples: {metric_bad}")
    assert ok


# --- 7 --------------------------------------------------------------------------------------


def _equivalence_block(job):
    start, stop, keep = job
    diffs = {"tree-plru": 0, "bit-plru": 0}
    for s in range(start, stop):
        rng = random.Random(s)
        seq = [rng.randrange(4) for _ in range(10_000)]
        def trace(policy, **kw):
            f = CacheSet(make_policy(policy, 2, **kw)).hit_or_fill
            return [f(x) for x in seq]
        ref = trace(Policy.LRU)
        diffs["tree-plru"] += trace(Policy.TREE_PLRU) != ref
        diffs["bit-plru"] += trace(Policy.BIT_PLRU, keep_accessed=keep) != ref
    return diffs


def _equivalence(keep):
    blocks = [(s, s + 250, keep) for s in range(0, 1000, 250)]
    total = {"tree-plru": 0, "bit-plru": 0}
    for part in parallel_map(_equivalence_block, blocks, JOBS):
        for k in total:
            total[k] += part[k]
    return total


def test_criterion_7_policy_equivalence():
    d = _equivalence(keep=False)
    ok = d["tree-plru"] == 0 and d["bit-plru"] == 0
    report(7, ok, f"N=2, 1000 x 10000 accesses: sequences differing from LRU: "
           f"tree-plru {d['tree-plru']}, bit-plru (clear-all reset) {d['bit-plru']}")
    k = _equivalence(keep=True)
    report(7, k["bit-plru"] == 0,
           f"bit-plru with the keep-accessed reset: {k['bit-plru']} differing sequences "
           "(that rule breaks the Bit-PLRU eviction rows instead)", info=True)
    assert ok


# --- 8 --------------------------------------------------------------------------------------


def test_criterion_8_mitigation():
    g = CacheGeometry()
    trace = cyclic_conflict(g)
    lru = miss_rate(trace, g, Policy.LRU).miss_rate
    rnd = [miss_rate(trace, g, Policy.RANDOM, seed=s).miss_rate for s in range(20)]
    rng = random.Random(8)
    fifo_ok = True
    for _ in range(200):
        tags = [rng.randrange(12) for _ in range(300)]
        base = replay([g.join(t, 0) for t in tags], Cache(g, Policy.FIFO)).victims
        c, victims = Cache(g, Policy.FIFO), []
        for t in tags:
            r = c.access(g.join(t, 0))
            if r.evicted_tag is not None:
                victims.append((0, r.evicted_tag))
            for _ in range(rng.randrange(3)):
                c.access(g.join(rng.choice(sorted(c.sets[0].resident())), 0))
        fifo_ok &= victims == base
    ok = lru == 1.0 and max(rnd) < 1.0 and fifo_ok
    report(8, ok, f"cyclic conflict: LRU miss rate {lru:.3f}, Random max {max(rnd):.3f} over "
           f"20 seeds; FIFO victims unchanged by re-hits on 200 traces: {fifo_ok}")
    assert ok


# --- 9 --------------------------------------------------------------------------------------


def _mean_error(cfg, sched, noise, seeds, bits=128):
    msg = random_message(bits, 99)
    return sum(run_covert_channel(cfg, sched, noise, msg, s).error_rate for s in seeds) / len(seeds)


def test_criterion_9_degraded():
    noshared_cfg = ChannelConfig(Protocol.NO_SHARED, 8, 4)
    sliced = [_mean_error(noshared_cfg, ScheduleModel(ScheduleMode.TIME_SLICED, 6000, 600, quantum=q),
                          NoiseModel(0), range(3)) for q in (6000, 100_000)]
    noise = NoiseModel(1.0)
    fast = _mean_error(noshared_cfg, ScheduleModel(ScheduleMode.HYPER_THREADED, 4500, 600), noise, range(10))
    slow = _mean_error(noshared_cfg, ScheduleModel(ScheduleMode.HYPER_THREADED, 30000, 600), noise, range(10))
    ok = min(sliced) >= 0.4 and slow < fast
    report(9, ok, f"noshared time-sliced error {sliced[0]:.3f} (quantum=Ts) / {sliced[1]:.3f} "
           f"(quantum=100000); hyper-threaded with noise: Ts=4500 {fast:.3f} > Ts=30000 {slow:.3f}")
    assert ok


# --- 10 -------------------------------------------------------------------------------------

CLI_RUNS = [
    ["plru-table", "--trials", "400"],
    ["channel", "run", "--mode", "hyperthreaded", "--noise-rate", "1", "--protocol", "noshared",
     "--bits", "32", "--repeat", "2"],
    ["channel", "sweep", "--ts", "4500,6000", "--tr", "600,1000", "--d", "2,4", "--mode",
     "hyperthreaded", "--noise-rate", "0.5", "--repetitions", "2", "--bits", "16"],
    ["plcache", "--variant", "original"],
    ["spectre", "--channel", "lru-noshared", "--noise", "0.02", "--repetitions", "1"],
    ["missrate", "--synthetic", "zipf", "--policies", "lru,tree-plru,random"],
]


def test_criterion_10_determinism(tmp_path):
    differing = []
    for argv in CLI_RUNS:
        outs = []
        for i, jobs in enumerate((1, 1, 4, 4)):
            path = tmp_path / f"{argv[0]}-{i}.csv"
            cli.main(argv + ["--seed", "12345", "--jobs", str(jobs), "-o", str(path)])
            outs.append(path.read_bytes())
        if len(set(outs)) != 1:
            differing.append(" ".join(argv[:2]))
    ok = not differing
    report(10, ok, f"{len(CLI_RUNS)} subcommands x (jobs 1, 1, 4, 4) byte-identical"
           + ("" if ok else "; differ: " + ", ".join(differing)))
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
