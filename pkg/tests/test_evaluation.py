import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lruchannel.cache import Cache, CacheGeometry, Policy
from lruchannel.channels import (ChannelConfig, NoiseModel, Protocol, ScheduleMode,
                                 ScheduleModel, random_message, run_covert_channel)
from lruchannel.evaluation import (SYNTHETIC, TraceFormatError, best_fit_decode,
                                   cyclic_conflict, edit_distance, error_report, miss_rate,
                                   moving_average, moving_average_decode, parse_trace,
                                   read_trace, replay, runlength_filter, write_trace)
from lruchannel.timing import AMD_ZEN_COARSE

bits = st.text(alphabet="01", max_size=12)


def brute_edit(a, b):
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(brute_edit(a[1:], b) + 1, brute_edit(a, b[1:]) + 1,
               brute_edit(a[1:], b[1:]) + (a[0] != b[0]))


@pytest.mark.parametrize("a,b,d", [("", "", 0), ("0101", "0101", 0), ("0101", "1010", 2),
                                   ("000", "", 3), ("0110", "0100", 1)])
def test_edit_distance_examples(a, b, d):
    assert edit_distance(a, b) == d


@settings(max_examples=300)
@given(st.text(alphabet="01", max_size=7), st.text(alphabet="01", max_size=7))
def test_edit_distance_matches_recursion(a, b):
    assert edit_distance(a, b) == brute_edit(a, b)


@given(bits, bits, bits)
def test_edit_distance_is_a_metric(a, b, c):
    assert (edit_distance(a, b) == 0) == (a == b)
    assert edit_distance(a, b) == edit_distance(b, a)
    assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)
    assert abs(len(a) - len(b)) <= edit_distance(a, b) <= max(len(a), len(b))


def test_error_report_rate():
    r = error_report("1111", "111")
    assert r.edit_distance == 1 and r.error_rate == 0.25
    with pytest.raises(ValueError):
        error_report("", "1")


def test_runlength_filter_cuts_long_runs():
    r = runlength_filter("01" + "1" * 20 + "0110", 16)
    assert r.discarded == [(1, 21)]
    assert r.kept == "00110"
    assert runlength_filter("0101", 2).discarded_bits == 0


@given(st.text(alphabet="01", max_size=80), st.integers(1, 10))
def test_runlength_filter_partitions_input(s, k):
    r = runlength_filter(s, k)
    assert len(r.kept) + r.discarded_bits == len(s)
    pieces = sorted([(a, len(t)) for a, t in r.segments] + r.discarded)
    pos = 0
    for start, n in pieces:
        assert start == pos
        pos += n
    assert pos == len(s)


def test_moving_average_keeps_constants():
    assert np.allclose(moving_average([3.0] * 10, 4), 3.0)


def test_moving_average_decode_square_wave():
    msg = "0110100111"
    lat = [80.0 if b == "1" else 40.0 for b in msg for _ in range(10)]
    r = moving_average_decode(lat, 3, 10)
    assert r.bits == msg and not r.degenerate
    assert moving_average_decode(lat, 3, 10, high_bit="0").bits == msg.translate(str.maketrans("01", "10"))


def test_moving_average_decode_flat_is_degenerate():
    assert moving_average_decode([40.0] * 50, 5, 10).degenerate


@pytest.mark.parametrize("proto", list(Protocol))
def test_moving_average_decode_coarse_timer(proto):
    # coarse, jittery timer: single probes are unreliable, smoothing recovers the bits
    msg = random_message(64, 4)
    d = 8 if proto is Protocol.SHARED else 4
    cfg = ChannelConfig(proto, 8, d, latency=AMD_ZEN_COARSE)
    run = run_covert_channel(cfg, ScheduleModel(ScheduleMode.HYPER_THREADED, 6000, 600),
                             NoiseModel(0), msg, 2)
    lat = [p.cycles for p in run.trace]
    high = "0" if proto is Protocol.SHARED else "1"
    r = best_fit_decode(lat, [len(lat) / len(msg)], high_bit=high)
    assert edit_distance(msg, r.bits) / len(msg) < 0.25


def test_trace_roundtrip(tmp_path):
    p = tmp_path / "t.trace"
    write_trace(p, [0, 0x40, 0xdeadbeef], comment="demo")
    assert read_trace(p) == [0, 0x40, 0xdeadbeef]


def test_trace_comments_and_blank_lines():
    assert parse_trace(["# hi", "", "0x10  # tail", "ff"]) == [0x10, 0xff]


def test_trace_bad_line_reports_location():
    with pytest.raises(TraceFormatError) as e:
        parse_trace(["10", "zz"], source="x.trace")
    assert e.value.line_no == 2 and "x.trace" in str(e.value)


def test_missing_trace_is_oserror(tmp_path):
    with pytest.raises(OSError):
        read_trace(tmp_path / "nope")


def test_lru_cyclic_conflict_always_misses():
    g = CacheGeometry()
    r = miss_rate(cyclic_conflict(g), g, Policy.LRU)
    assert r.miss_rate == 1.0 and r.compulsory == g.ways + 1


@pytest.mark.parametrize("seed", range(5))
def test_random_breaks_cyclic_thrash(seed):
    g = CacheGeometry()
    assert miss_rate(cyclic_conflict(g), g, Policy.RANDOM, seed=seed).miss_rate < 1.0


@pytest.mark.parametrize("kind", sorted(SYNTHETIC))
def test_alternative_policies_bounded_against_lru(kind):
    g = CacheGeometry()
    trace = SYNTHETIC[kind](g, 1)
    lru = miss_rate(trace, g, Policy.LRU).miss_rate
    for pol in (Policy.TREE_PLRU, Policy.BIT_PLRU, Policy.FIFO, Policy.RANDOM):
        alt = miss_rate(trace, g, pol, seed=1).miss_rate
        if kind == "zipf":
            assert abs(alt - lru) / lru <= 0.15
        else:
            # looping footprints: never worse than LRU, which already misses everything
            assert alt <= lru


@settings(max_examples=40)
@given(st.lists(st.integers(0, 15), max_size=200), st.data())
def test_fifo_victims_ignore_rehits(tags, data):
    """Inserting hits to resident lines leaves FIFO's eviction sequence unchanged."""
    g = CacheGeometry(1, 4)
    base = replay([g.join(t, 0) for t in tags], Cache(g, Policy.FIFO)).victims
    cache = Cache(g, Policy.FIFO)
    out = []
    for t in tags:
        r = cache.access(g.join(t, 0))
        if r.evicted_tag is not None:
            out.append(r.evicted_tag)
        resident = sorted(cache.sets[0].resident())
        if data.draw(st.booleans()):
            cache.access(g.join(data.draw(st.sampled_from(resident)), 0))
    assert out == [tag for _, tag in base]
