import json
import struct

import pytest

from camnids.cli import join_frames, main, split_frames
from camnids.imagefile import read_image

RULES = 'rule 1 = "hello"\nrule 2 = "wor" -> [0,*] "ld!"\nrule 3 = "abcdefghijklmnop"\n'


@pytest.fixture
def rules(tmp_path):
    p = tmp_path / "rules.txt"
    p.write_text(RULES)
    return p


def compile_to(tmp_path, rules, *extra):
    img = tmp_path / "image.json"
    assert main(["compile", str(rules), "-o", str(img), *extra]) == 0
    return img


def test_compile_deterministic(tmp_path, rules, capsys):
    a = compile_to(tmp_path, rules).read_bytes()
    b = compile_to(tmp_path, rules).read_bytes()
    assert a == b


def test_compile_report(tmp_path, rules, capsys):
    compile_to(tmp_path, rules)
    out = capsys.readouterr().out
    rep = json.loads(out[out.index("{"):])
    assert rep["patterns"] == 4 and rep["pipelined"]["backward"] == 0
    assert rep["memory"]["cam_bytes_per_char"] > 0


def test_stages_flag(tmp_path, rules):
    img = compile_to(tmp_path, rules, "--depth", "4", "--stages", "2:0-2,3:3-5,4:6-7")
    stages = dict(read_image(img).config.stages)
    assert stages == {2: (0, 1, 2), 3: (3, 4, 5), 4: (6, 7)}


def test_wildcard_prefix_diagnostic(tmp_path, capsys):
    p = tmp_path / "bad.txt"
    p.write_text('rule 1 = "\\?bcd"\n')
    assert main(["compile", str(p), "-o", str(tmp_path / "x.json")]) == 2
    err = capsys.readouterr().err
    assert "pattern 0" in err and "byte 0" in err


def test_usage_and_data_errors(tmp_path, capsys):
    assert main(["frobnicate"]) == 1
    assert main(["run"]) == 1
    assert main(["--help"]) == 0
    assert main(["compile", str(tmp_path / "missing.txt")]) == 2
    bad = tmp_path / "syntax.txt"
    bad.write_text("rule one = nope\n")
    assert main(["compile", str(bad)]) == 2


def test_gen_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["gen", "rules", "--n", "60", "--seed", "7", "-o", str(tmp_path / f"{d}.txt")]) == 0
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
    for d in ("a", "b"):
        assert main(["gen", "traffic", "--rules", str(tmp_path / "a.txt"), "--hit-rate", "0.9",
                     "--len", "8192", "--seed", "1", "-o", str(tmp_path / f"{d}.bin")]) == 0
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert (tmp_path / "a.truth.csv").read_text().startswith("pattern_id,start,end")


@pytest.fixture
def workload(tmp_path):
    rules = tmp_path / "rules.txt"
    assert main(["gen", "rules", "--n", "120", "--seed", "7", "-o", str(rules)]) == 0
    img = compile_to(tmp_path, rules)
    stream = tmp_path / "s.bin"
    assert main(["gen", "traffic", "--rules", str(rules), "--hit-rate", "0.5", "--len", "16384",
                 "--seed", "1", "-o", str(stream)]) == 0
    return img, stream


@pytest.mark.parametrize("flags", [[], ["--no-gating"], ["--lanes", "2"], ["--congestion", "drop"],
                                   ["--no-gating", "--queue-depth", "1", "--phase2-latency", "3"]])
def test_run_oracle_check(tmp_path, workload, flags):
    img, stream = workload
    out = tmp_path / "out"
    extra = ["--stream-b", str(stream)] if "--lanes" in flags else []
    assert main(["run", str(img), str(stream), "--out", str(out), "--oracle-check", *flags, *extra]) == 0
    for f in ("events.csv", "rule_hits.csv", "stats.json", "energy.json"):
        assert (out / f).exists()


def test_run_gating_energy_and_lanes(tmp_path, workload):
    img, stream = workload
    energy = {}
    for tag, flags in (("on", []), ("off", ["--no-gating"])):
        out = tmp_path / tag
        assert main(["run", str(img), str(stream), "--out", str(out), *flags]) == 0
        energy[tag] = json.loads((out / "energy.json").read_text())["total"]
    assert energy["on"] <= energy["off"]
    out = tmp_path / "dual"
    assert main(["run", str(img), str(stream), "--stream-b", str(stream), "--lanes", "2",
                 "--no-gating", "--out", str(out)]) == 0
    st = json.loads((out / "stats.json").read_text())
    assert st["bytes_consumed"] == 2 * st["cycles"]


def test_run_data_errors(tmp_path, workload):
    img, _ = workload
    empty = tmp_path / "empty.bin"
    empty.write_bytes(b"")
    assert main(["run", str(img), str(empty)]) == 2
    assert main(["run", str(tmp_path / "nope.json"), str(empty)]) == 2


def test_framing(tmp_path, rules):
    pkts = [b"xxhello", b"", b"world!", b"hel", b"lo"]
    blob = join_frames(pkts)
    assert blob[:4] == struct.pack("<I", 7)
    assert split_frames(blob) == pkts
    img = compile_to(tmp_path, rules)
    stream = tmp_path / "f.bin"
    stream.write_bytes(blob)
    out = tmp_path / "out"
    assert main(["run", str(img), str(stream), "--framed", "--out", str(out), "--oracle-check"]) == 0
    hits = (out / "rule_hits.csv").read_text().splitlines()
    # Phase-3 resets between packets, so "hel" + "lo" is no hit
    assert hits == ["packet,rule_id,end_offset", "0,1,6", "2,2,5"]
    stream.write_bytes(blob[:-1])
    assert main(["run", str(img), str(stream), "--framed"]) == 2


def test_sweep_and_dump(tmp_path, rules, capsys):
    assert main(["sweep", "rulesize", "--sizes", "30", "--len", "2048", "--out", str(tmp_path)]) == 0
    text = (tmp_path / "sweep_rulesize.csv").read_text().splitlines()
    assert text[0] == "size,design,energy_per_byte,energy_per_char_per_search" and len(text) == 4
    img = compile_to(tmp_path, rules)
    capsys.readouterr()
    assert main(["dump", str(img), "--rules"]) == 0
    out = capsys.readouterr().out
    assert "stage 1:" in out and "rule 1" in out
