import json
from dataclasses import fields

import pytest
from hypothesis import given
from hypothesis import strategies as st

from camnids.compiler import AcStats, HwConfig, compile_ruleset
from camnids.engine import EngineConfig, run_stream
from camnids.generate import gen_traffic
from camnids.metrics import (COMPONENTS, DEFAULT_COEFFS, CoefficientTable, MetricsError, accumulate,
                             best_depth, latency_ns, memory_report, model_conventional,
                             model_no_row_enable, sweep_rulesize, throughput_mbps)
from camnids.rules import RuleSet, TrafficSpec, parse_rules

from conftest import SMALL_HW, small_cases

UNIT_ML = CoefficientTable(1.0, 0, 0, 0, 0, 0, 0)


def fan_out_image():
    text = "".join(f'rule {i + 1} = "a{c}"\n' for i, c in enumerate("bcdefghi"))
    return compile_ruleset(parse_rules(text), HwConfig(depth=2)).image


def test_ml_example():
    _, stats = run_stream(EngineConfig(fan_out_image()), b"ab")
    assert stats.phase1_searches == 1
    rep = accumulate(stats, UNIT_ML)
    assert rep.components["ml"] == 88.0
    assert rep.total == 88.0


def test_no_row_enable_ratio():
    img = fan_out_image()
    full = accumulate(run_stream(EngineConfig(img), b"ab")[1], UNIT_ML)
    nre = model_no_row_enable(img, b"ab", UNIT_ML)
    assert nre.components["ml"] == 64 / 8 * full.components["ml"]
    assert nre.components["decoder"] == 0 and nre.components["retention"] == 0


def test_zero_activity():
    img = fan_out_image()
    rep = accumulate(run_stream(EngineConfig(img), b"")[1])
    assert all(v == 0 for v in rep.components.values())
    assert rep.energy_per_search == 0


def test_coefficient_validation_and_io(tmp_path):
    with pytest.raises(MetricsError):
        CoefficientTable(e_ml_per_bit=-1)
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"e_sram_per_bit": 2.5}))
    c = CoefficientTable.load(p)
    assert c.e_sram_per_bit == 2.5 and c.e_ml_per_bit == 1.0
    assert CoefficientTable.from_dict(c.to_dict()) == c


@given(small_cases(), st.floats(0.1, 10))
def test_linearity(case, k):
    rs, s = case
    img = compile_ruleset(rs, SMALL_HW).image
    _, stats = run_stream(EngineConfig(img), s)
    a = accumulate(stats)
    b = accumulate(stats, DEFAULT_COEFFS.scaled(k))
    assert b.total == pytest.approx(k * a.total)
    d = accumulate(stats, CoefficientTable(e_sram_per_bit=2 * DEFAULT_COEFFS.e_sram_per_bit))
    for name in COMPONENTS:
        want = 2 * a.components[name] if name == "sram" else a.components[name]
        assert d.components[name] == pytest.approx(want)
    # recomputable: components add up to the block totals
    blocks = a.stage1 + sum(a.pes) + a.phase2 + a.decoder + a.router + a.clock + a.retention
    assert blocks == pytest.approx(a.total)


@given(small_cases())
def test_design_ordering(case):
    rs, s = case
    img = compile_ruleset(rs, SMALL_HW).image
    _, stats = run_stream(EngineConfig(img), s)
    assert accumulate(stats).components["ml"] <= accumulate(stats, row_enable=False).components["ml"]
    on = accumulate(run_stream(EngineConfig(img, clock_gating=True), s)[1])
    off = accumulate(run_stream(EngineConfig(img, clock_gating=False), s)[1])
    assert on.total <= off.total + 1e-9


def test_conventional_model():
    ac = AcStats(n_states=60, n_forward=60, n_backward=40, per_depth=())
    pt = model_conventional(ac, 10, UNIT_ML)
    assert pt.transitions == 100
    assert pt.ml_per_byte == 100 * pt.entry_bits
    assert pt.entry_bits == 6 + 11
    ac2 = AcStats(n_states=60, n_forward=120, n_backward=80, per_depth=())
    assert model_conventional(ac2, 10, UNIT_ML).ml_per_byte == 2 * pt.ml_per_byte


def test_memory_example():
    img = compile_ruleset(parse_rules('rule 1 = "abcd"'), HwConfig(depth=2)).image
    m = memory_report(img)
    assert m.cam_bits_used == 231
    assert m.cam_bytes_per_char == pytest.approx(231 / 8 / 4)
    empty = memory_report(compile_ruleset(RuleSet(), HwConfig()).image)
    assert empty.cam_bytes_per_char is None and empty.sram_bytes_per_char is None


def test_table_arithmetic():
    assert latency_ns(6) == pytest.approx(41.667, abs=1e-3)
    assert throughput_mbps(2.0) == 288.0


def test_sweep_shape():
    rows = sweep_rulesize(1, [30, 60], length=4096)
    assert [(r[0], r[1]) for r in rows] == [(s, d) for s in (30, 60)
                                            for d in ("conventional", "no_row_enable", "full")]
    assert rows == sweep_rulesize(1, [30, 60], length=4096)
    with pytest.raises(MetricsError):
        sweep_rulesize(1, [60, 30])


def test_best_depth():
    rows = [(2, 0.0, 5.0, 0), (4, 0.0, 3.0, 0), (2, 0.9, 1.0, 0), (4, 0.9, 2.0, 0)]
    assert best_depth(rows) == {0.0: 4, 0.9: 2}
