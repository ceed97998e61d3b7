import random
from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from camnids.compiler import HwConfig, compile_ruleset
from camnids.engine import (GLOBAL_COUNTERS, HAVE_KERNEL, Engine, EngineConfig, EngineError, Policy,
                            events_csv, latency_cycles, load, pipeline_latency, run_stream,
                            run_stream_logged, stats_json)
from camnids.oracle import oracle_match, oracle_skip_lanes
from camnids.rules import RuleSet, parse_rules

from conftest import SMALL_HW, random_ruleset, small_cases


def image(text, **hw):
    return compile_ruleset(parse_rules(text), HwConfig(**hw)).image


def trip(events, lane=None):
    return Counter((e.sub_pattern_id, e.start, e.end) for e in events if lane is None or e.lane == lane)


def test_terminal_event_timing():
    ev, st = run_stream(EngineConfig(image('rule 1 = "ab"', depth=2)), b"xab", backend="python")
    assert [(e.cycle, e.start, e.end) for e in ev] == [(2, 1, 2)]
    assert st.terminal_events == 1


def test_phase2_event_timing():
    img = image('rule 1 = "abcd"', depth=2)
    eng = Engine(EngineConfig(img))
    eng.attach(b"zabcdz")
    eng.step(), eng.step()
    r = eng.step()                       # 'b' at offset 2 completes the prefix
    assert not r.events
    assert list(eng.lanes[0].fifo)[0].window_start == 3
    ev, st, issues = run_stream_logged(EngineConfig(img), b"zabcdz", backend="python")
    assert issues == [(3, 0, 1)]
    assert [(e.cycle, e.start, e.end) for e in ev] == [(4, 1, 4)]
    assert ev[0].cycle - issues[0][0] + 1 == 2


def test_no_candidates_no_searches():
    _, st = run_stream(EngineConfig(image('rule 1 = "abcd"', depth=2)), b"zzzzzz")
    assert st.phase1_searches == 0 and st.stage1_reads == 6


def test_empty_ruleset():
    img = compile_ruleset(RuleSet(), HwConfig()).image
    ev, st = run_stream(EngineConfig(img), b"anything at all")
    assert ev == [] and st.phase1_searches == 0 and st.requests == 0


def test_load_and_config_errors():
    img = image('rule 1 = "abcd"', depth=2)
    eng = load(EngineConfig(img))
    assert sum(1 for rows in img.pe_images if rows) == 1
    assert eng.done
    with pytest.raises(EngineError):
        EngineConfig(img, queue_depth=0)
    with pytest.raises(EngineError):
        run_stream(EngineConfig(img), b"ab", b"cd")


def test_single_lane_never_uses_port_b(desk):
    rs, res = desk
    _, st = run_stream(EngineConfig(res.image), bytes(range(256)) * 8)
    assert all(p.searches_b == 0 for p in st.pes + st.banks)
    assert st.bytes_b == 0 and st.phase2_searches_b == 0


def test_lane_symmetry_and_throughput(desk):
    rs, res = desk
    rnd = random.Random(3)
    s = bytes(rnd.randrange(256) for _ in range(4000))
    ev, st = run_stream(EngineConfig(res.image, dual_port=True, clock_gating=False), s, s)
    assert trip(ev, 0) == trip(ev, 1)
    assert st.bytes_consumed == 8000 and st.stall_cycles == 0
    assert st.bytes_per_cycle == 2.0


def test_latency():
    assert pipeline_latency(4, 2) == 6
    assert pipeline_latency(2, 2) == 4
    assert pipeline_latency(4, 2, pattern_len=3) == 3
    img = image('rule 1 = "abcdefgh"')
    assert latency_cycles(EngineConfig(img)) == 6
    ev, _ = run_stream(EngineConfig(img), b"xxabcdefghxx")
    assert ev[0].cycle - ev[0].start + 1 == 6


def test_csv_and_stats_outputs():
    ev, st = run_stream(EngineConfig(image('rule 1 = "ab"', depth=2)), b"xab")
    assert events_csv(ev) == "cycle,lane,sub_pattern_id,start,end\n2,0,0,1,2\n"
    assert all(k in stats_json(st) for k in GLOBAL_COUNTERS)


engine_flags = st.fixed_dictionaries({
    "dual": st.booleans(), "gating": st.booleans(), "drop": st.booleans(),
    "qd": st.integers(1, 4), "lat": st.integers(1, 3)})


def _cfg(img, f):
    return EngineConfig(img, dual_port=f["dual"], clock_gating=f["gating"],
                        congestion_policy=Policy.DROP if f["drop"] else Policy.STALL,
                        queue_depth=f["qd"], phase2_latency=f["lat"])


def _stream_b(case, f):
    return case[1][::-1] if f["dual"] else None


@pytest.mark.skipif(not HAVE_KERNEL, reason="compiled kernel not built")
@given(small_cases(), engine_flags)
def test_kernel_matches_python(case, f):
    rs, s = case
    cfg = _cfg(compile_ruleset(rs, SMALL_HW).image, f)
    a = run_stream_logged(cfg, s, _stream_b(case, f), backend="python")
    b = run_stream_logged(cfg, s, _stream_b(case, f), backend="kernel")
    assert a[0] == b[0] and a[1] == b[1] and a[2] == [tuple(x) for x in b[2]]


@given(small_cases(), engine_flags)
def test_engine_against_oracles(case, f):
    rs, s = case
    res = compile_ruleset(rs, SMALL_HW)
    cfg = _cfg(res.image, f)
    sb = _stream_b(case, f)
    streams = [s, sb] if f["dual"] else [s]
    ev, st = run_stream(cfg, s, sb)
    lens = {sp.id: sp.total_len for sp in res.subpatterns}
    assert all(e.end - e.start + 1 == lens[e.sub_pattern_id] for e in ev)
    assert [e.cycle for e in ev] == sorted(e.cycle for e in ev)
    assert st.phase1_searches <= (SMALL_HW.depth - 1) * st.cycles * cfg.lanes
    if f["drop"]:
        for lane, x in enumerate(streams):
            assert trip(ev, lane) <= trip_occ(oracle_match(res.subpatterns, x))
        return
    assert st.dropped_requests == 0
    if f["gating"]:
        want = oracle_skip_lanes(res.subpatterns, streams, SMALL_HW.depth, SMALL_HW.slots,
                                 f["lat"], f["qd"])
    else:
        want = [oracle_match(res.subpatterns, x) for x in streams]
    for lane in range(len(streams)):
        assert trip(ev, lane) == trip_occ(want[lane])


def trip_occ(occ):
    return Counter((o.pattern_id, o.start, o.end) for o in occ)


@given(small_cases(), st.integers(1, 3), st.integers(1, 3))
def test_phase2_occupancy_and_priority(case, lat, qd):
    rs, s = case
    cfg = EngineConfig(compile_ruleset(rs, SMALL_HW).image, dual_port=True, phase2_latency=lat,
                       queue_depth=qd)
    eng = Engine(cfg)
    eng.attach(s, s[::-1])
    while not eng.done:
        idle = eng._p2 is None
        both = all(ln.fifo for ln in eng.lanes)
        n = len(eng.issue_log)
        eng.step()
        if idle and both:
            assert eng.issue_log[n][1] == 0
    cycles = [c for c, _, _ in eng.issue_log]
    assert all(b - a >= lat for a, b in zip(cycles, cycles[1:]))
    st = eng.stats
    assert st.phase2_busy_cycles == lat * len(cycles)
