"""``camnids`` command line: compile, run, sweep, gen, dump.

Exit codes: 0 success, 1 usage, 2 data error, 3 oracle mismatch.
"""

from __future__ import annotations

import argparse
import json
import os
import struct
import sys
from collections import Counter
from dataclasses import fields, replace
from typing import List, Optional, Sequence, Tuple

from .compiler import CompileError, HwConfig, build_conventional_ac, compile_ruleset, parse_stages
from .engine import (EngineConfig, EngineError, MatchEvent, Policy, events_csv, run_stream,
                     stats_json)
from .generate import GenerationError, gen_ruleset, gen_traffic
from .imagefile import ImageError, dumps_image, read_image
from .metrics import (CoefficientTable, MetricsError, accumulate, best_depth, hitrate_csv,
                      memory_report, rulesize_csv, stages_csv, sweep_hitrate, sweep_rulesize,
                      sweep_stages)
from .oracle import occurrences_csv, oracle_match, oracle_rules, oracle_skip_lanes
from .phase3 import build_rule_table, process_events, rule_hits_csv
from .rules import RuleError, TrafficSpec, format_rules, parse_rules

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MISMATCH = 0, 1, 2, 3

_HW_KEYS = {f.name for f in fields(HwConfig)}
_ENGINE_KEYS = {"clock_gating", "congestion_policy", "queue_depth", "phase2_latency", "lanes"}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------ helpers


def _read_text(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except (OSError, UnicodeDecodeError) as e:
        raise DataError(f"{path}: {e}") from None


def _read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as e:
        raise DataError(f"{path}: {e}") from None


def _write(path: str, data, binary: bool = False) -> None:
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "wb" if binary else "w", encoding=None if binary else "utf-8") as fh:
        fh.write(data)


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(_read_text(path))
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: {e}") from None
    if not isinstance(doc, dict):
        raise DataError(f"{path}: expected a JSON object")
    unknown = set(doc) - _HW_KEYS - _ENGINE_KEYS
    if unknown:
        raise DataError(f"{path}: unknown keys {sorted(unknown)}")
    return doc


def _hw_config(args, conf: dict) -> HwConfig:
    hw = {k: v for k, v in conf.items() if k in _HW_KEYS}
    if isinstance(hw.get("stages"), str):
        hw["stages"] = parse_stages(hw["stages"])
    if getattr(args, "depth", None) is not None:
        hw["depth"] = args.depth
    if getattr(args, "stages", None):
        try:
            hw["stages"] = parse_stages(args.stages)
        except ValueError:
            raise UsageError(f"bad --stages spec {args.stages!r}") from None
    try:
        return HwConfig(**hw)
    except TypeError as e:
        raise DataError(f"config: {e}") from None


def split_frames(data: bytes) -> List[bytes]:
    """Packets of a ``u32-LE length`` framed container."""
    out, i = [], 0
    while i < len(data):
        if i + 4 > len(data):
            raise DataError(f"truncated frame header at byte {i}")
        (n,) = struct.unpack_from("<I", data, i)
        i += 4
        if i + n > len(data):
            raise DataError(f"frame at byte {i - 4} claims {n} bytes, {len(data) - i} remain")
        out.append(data[i:i + n])
        i += n
    return out


def join_frames(packets: Sequence[bytes]) -> bytes:
    return b"".join(struct.pack("<I", len(p)) + p for p in packets)


def _print(msg: str = "") -> None:
    print(msg, flush=True)


# ------------------------------------------------------------ compile


def cmd_compile(args) -> int:
    conf = _load_config(args.config)
    cfg = _hw_config(args, conf)
    rs = parse_rules(_read_text(args.rules))
    res = compile_ruleset(rs, cfg)
    img = res.image
    out = args.output or os.path.join(args.out or ".", "image.json")
    _write(out, dumps_image(img))
    mem = memory_report(img)
    conv = build_conventional_ac(rs)
    report = {
        "image": out,
        "patterns": len(rs.patterns),
        "rules": len(rs.rules),
        "subpatterns": len(res.subpatterns),
        "stages": {str(s): list(p) for s, p in img.config.stages},
        "pipelined": {"states_per_depth": list(res.trie_stats.per_depth[1:]),
                      "forward": res.trie_stats.n_forward, "backward": res.trie_stats.n_backward},
        "conventional": {"states": conv.n_states, "forward": conv.n_forward,
                         "backward": conv.n_backward, "skipped_wildcard_patterns": conv.skipped_wildcard},
        "memory": mem.to_dict(),
    }
    _print(json.dumps(report, indent=1))
    return EXIT_OK


# ------------------------------------------------------------ run


def _engine_config(args, conf: dict, img) -> EngineConfig:
    lanes = args.lanes if args.lanes is not None else conf.get("lanes", 1)
    if lanes not in (1, 2):
        raise UsageError("--lanes must be 1 or 2")
    gating = conf.get("clock_gating", True) and not args.no_gating
    policy = Policy(args.congestion or conf.get("congestion_policy", "stall"))
    try:
        return EngineConfig(img, dual_port=lanes == 2, clock_gating=gating, congestion_policy=policy,
                            queue_depth=args.queue_depth or conf.get("queue_depth", 4),
                            phase2_latency=args.phase2_latency or conf.get("phase2_latency", 2))
    except EngineError as e:
        raise DataError(str(e)) from None


def _jobs(args, img) -> List[Tuple[int, bytes, Optional[bytes]]]:
    """(packet index, lane A bytes, lane B bytes) per engine run."""
    a = _read_bytes(args.stream)
    b = _read_bytes(args.stream_b) if args.stream_b else None
    if args.framed:
        if b is not None:
            raise UsageError("--framed takes one container; packets alternate lanes")
        pkts = split_frames(a)
        if not pkts:
            raise DataError(f"{args.stream}: no packets")
        if args.lanes == 2:
            return [(i, pkts[i], pkts[i + 1] if i + 1 < len(pkts) else b"")
                    for i in range(0, len(pkts), 2)]
        return [(i, p, None) for i, p in enumerate(pkts)]
    if not a:
        raise DataError(f"{args.stream}: empty stream")
    if b is not None and args.lanes != 2:
        raise UsageError("--stream-b needs --lanes 2")
    if args.lanes == 2 and b is None:
        b = b""
    return [(0, a, b)]


def _first_diff(got: Sequence, want: Sequence) -> str:
    g, w = Counter(got), Counter(want)
    extra = sorted((g - w).elements())
    missing = sorted((w - g).elements())
    parts = []
    if missing:
        parts.append(f"missing {missing[0]} ({len(missing)} total)")
    if extra:
        parts.append(f"unexpected {extra[0]} ({len(extra)} total)")
    return "; ".join(parts)


def _oracle_check(ecfg: EngineConfig, res, rs, table, streams, events, hits) -> Optional[str]:
    hw = ecfg.image.config
    subs = res.subpatterns
    if ecfg.clock_gating:
        if ecfg.congestion_policy is not Policy.STALL:
            return None if all(
                Counter((e.sub_pattern_id, e.start, e.end) for e in events if e.lane == lane)
                <= Counter((o.pattern_id, o.start, o.end) for o in oracle_match(subs, s))
                for lane, s in enumerate(streams)) else "events outside the brute-force scan"
        expect = oracle_skip_lanes(subs, streams, hw.depth, hw.slots, ecfg.phase2_latency,
                                   ecfg.queue_depth)
    else:
        expect = [oracle_match(subs, s) for s in streams]
    for lane, s in enumerate(streams):
        got = [(e.sub_pattern_id, e.start, e.end) for e in events if e.lane == lane]
        want = [(o.pattern_id, o.start, o.end) for o in expect[lane]]
        if Counter(got) != Counter(want):
            return f"lane {lane} events: {_first_diff(got, want)}"
        if not ecfg.clock_gating and ecfg.congestion_policy is Policy.STALL:
            got_r = [(h.rule_id, h.end) for h in hits if h.lane == lane]
            want_r = oracle_rules(rs, s)
            if Counter(got_r) != Counter(want_r):
                return f"lane {lane} rule hits: {_first_diff(got_r, want_r)}"
    return None


def cmd_run(args) -> int:
    conf = _load_config(args.config)
    img = read_image(args.image)
    if img.rules is None:
        raise DataError(f"{args.image}: image has no host rules section (needed for Phase-3)")
    ecfg = _engine_config(args, conf, img)
    coeffs = CoefficientTable.load(args.coeffs) if args.coeffs else CoefficientTable()
    rs = img.rules
    res = compile_ruleset(rs, img.config)
    table = build_rule_table(rs, res.chain_plan, res.subpatterns)

    all_events: List[Tuple[int, MatchEvent]] = []
    all_hits = []
    total = None
    mismatch = None
    for pkt, a, b in _jobs(args, img):
        streams = [a] + ([b] if ecfg.dual_port else [])
        events, stats = run_stream(ecfg, a, b if ecfg.dual_port else None)
        hits = process_events(table, events)
        all_events.extend((pkt + e.lane, e) for e in events)
        all_hits.extend((pkt + h.lane, h) for h in hits)
        total = stats if total is None else total.merge(stats)
        if args.oracle_check and mismatch is None:
            why = _oracle_check(ecfg, res, rs, table, streams, events, hits)
            if why:
                mismatch = f"packet {pkt}: {why}" if args.framed else why

    report = accumulate(total, coeffs, rs.pattern_bytes)
    out = args.out or "."
    if args.framed:
        ev_csv = "packet," + events_csv([]).strip() + "\n" + "".join(
            f"{p},{e.cycle},{e.lane},{e.sub_pattern_id},{e.start},{e.end}\n" for p, e in all_events)
        hit_csv = "packet,rule_id,end_offset\n" + "".join(f"{p},{h.rule_id},{h.end}\n" for p, h in all_hits)
    else:
        ev_csv = events_csv([e for _, e in all_events])
        hit_csv = rule_hits_csv([h for _, h in all_hits])
    _write(os.path.join(out, "events.csv"), ev_csv)
    _write(os.path.join(out, "rule_hits.csv"), hit_csv)
    _write(os.path.join(out, "stats.json"), stats_json(total))
    _write(os.path.join(out, "energy.json"), json.dumps(report.to_dict(), indent=1) + "\n")
    _print(f"bytes {total.bytes_consumed}  cycles {total.cycles}  "
           f"bytes/cycle {total.bytes_per_cycle:.3f}  events {len(all_events)}  "
           f"rule hits {len(all_hits)}")
    _print(f"energy/byte {report.energy_per_search:.4f}  gated bytes {total.gated_bytes}  "
           f"stall cycles {total.stall_cycles}  dropped {total.dropped_requests}")
    if args.oracle_check:
        if mismatch:
            _print(f"oracle check FAILED: {mismatch}")
            return EXIT_MISMATCH
        _print("oracle check passed")
    return EXIT_OK


# ------------------------------------------------------------ sweep


def _floats(s: str) -> List[float]:
    try:
        return [float(x) for x in s.split(",") if x]
    except ValueError:
        raise UsageError(f"bad number list {s!r}") from None


def _ints(s: str) -> List[int]:
    try:
        return [int(x) for x in s.split(",") if x]
    except ValueError:
        raise UsageError(f"bad integer list {s!r}") from None


def cmd_sweep(args) -> int:
    coeffs = CoefficientTable.load(args.coeffs) if args.coeffs else CoefficientTable()
    conf = _load_config(args.config)
    hw = {k: v for k, v in conf.items() if k in _HW_KEYS}
    cfg = HwConfig(**hw) if hw else None
    try:
        if args.kind == "rulesize":
            rows = sweep_rulesize(args.seed, _ints(args.sizes), cfg, coeffs, args.hit_rate,
                                  args.len, args.jobs)
            text = rulesize_csv(rows)
        elif args.kind == "hitrate":
            rows = sweep_hitrate(args.seed, _floats(args.rates), cfg, coeffs, args.len, jobs=args.jobs)
            text = hitrate_csv(rows)
        else:
            kw = {"cfg": cfg} if cfg else {}
            rows = sweep_stages(args.seed, _ints(args.depths), _floats(args.rates), coeffs=coeffs,
                                length=args.len, jobs=args.jobs, **kw)
            text = stages_csv(rows)
            best = best_depth(rows)
            sys.stderr.write("best depth per hit rate: " +
                             ", ".join(f"{r:g}->{d}" for r, d in best.items()) + "\n")
    except CompileError as e:
        raise DataError(f"sweep point failed to compile: {e}") from None
    if args.out:
        path = args.out if args.out.endswith(".csv") else os.path.join(args.out, f"sweep_{args.kind}.csv")
        _write(path, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------ gen


def cmd_gen(args) -> int:
    if args.what == "rules":
        conf = _load_config(args.config)
        cfg = _hw_config(args, conf)
        rs = gen_ruleset(args.seed, args.n, (args.len_min, args.len_max), args.wildcard_frac,
                         args.multi_rule_frac, cfg)
        text = format_rules(rs)
        path = args.output or os.path.join(args.out or ".", "rules.txt")
        _write(path, text)
        _print(f"wrote {len(rs.patterns)} patterns / {len(rs.rules)} rules to {path}")
        return EXIT_OK
    if not args.rules:
        raise UsageError("gen traffic needs --rules")
    rs = parse_rules(_read_text(args.rules))
    stream, truth = gen_traffic(TrafficSpec(args.len, args.hit_rate, args.seed), rs)
    path = args.output or os.path.join(args.out or ".", "stream.bin")
    truth_path = args.truth or os.path.splitext(path)[0] + ".truth.csv"
    _write(path, stream, binary=True)
    _write(truth_path, occurrences_csv(truth))
    _print(f"wrote {len(stream)} bytes to {path}, {len(truth)} occurrences to {truth_path}")
    return EXIT_OK


# ------------------------------------------------------------ dump


def cmd_dump(args) -> int:
    from .fixed1s import format_code

    img = read_image(args.image)
    hw = img.config

    def nr(e):
        if e is None:
            return "-"
        s = e.kind.value if e.kind.value == "terminal" else f"{e.kind.value}:{e.target}[{e.dn},{e.up}]"
        return s + (f" emit {e.emit}" if e.emit is not None else "")

    _print(f"depth {hw.depth}  W {hw.slots}  PEs {hw.n_pes}x{hw.pe_rows}  banks {hw.n_banks}x{hw.bank_rows}")
    _print("stages: " + "  ".join(f"{s}:{','.join(map(str, p))}" for s, p in hw.stages))
    _print("stage 1:")
    for c, e in enumerate(img.stage1):
        if e is not None:
            ch = chr(c) if 0x21 <= c <= 0x7E else f"\\x{c:02x}"
            _print(f"  {ch:>4}  {nr(e)}")
    for p, rows in enumerate(img.pe_images):
        if rows:
            _print(f"PE {p} (stage {hw.stage_of_pe(p)}), {len(rows)} rows:")
            for i, r in enumerate(rows):
                _print(f"  {i:3d}  {format_code(r.stored)}  {nr(r.sram)}")
    for b, rows in enumerate(img.phase2_banks):
        if rows:
            _print(f"bank {b}, {len(rows)} rows:")
            for i, r in enumerate(rows):
                _print(f"  {i:3d}  sp {r.sub_pattern_id:4d}  len {r.suffix_len:2d}  "
                       + " ".join(format_code(w) for w in r.stored[:r.suffix_len]))
    if img.rules is not None and args.rules:
        _print("rules:")
        sys.stdout.write(format_rules(img.rules))
    return EXIT_OK


# ------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with hardware/engine settings")
    common.add_argument("--seed", type=int, default=1)
    common.add_argument("--out", help="output directory")
    common.add_argument("--coeffs", help="JSON energy coefficient file")

    hw = argparse.ArgumentParser(add_help=False)
    hw.add_argument("--depth", type=int, help="Phase-1 stages D")
    hw.add_argument("--stages", help='stage-to-PE map, e.g. "2:0-2,3:3-5,4:6-7"')

    p = _Parser(prog="camnids", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    c = sub.add_parser("compile", parents=[common, hw], help="compile a rule file to an image")
    c.add_argument("rules")
    c.add_argument("-o", "--output", help="image path (default <out>/image.json)")
    c.set_defaults(func=cmd_compile)

    r = sub.add_parser("run", parents=[common], help="simulate an image over a stream")
    r.add_argument("image")
    r.add_argument("stream")
    r.add_argument("--stream-b", help="second raw stream for lane B")
    r.add_argument("--framed", action="store_true", help="stream is a u32-LE length-framed container")
    r.add_argument("--lanes", type=int, choices=(1, 2))
    r.add_argument("--no-gating", action="store_true")
    r.add_argument("--congestion", choices=("stall", "drop"))
    r.add_argument("--queue-depth", type=int)
    r.add_argument("--phase2-latency", type=int)
    r.add_argument("--oracle-check", action="store_true")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", parents=[common], help="energy sweeps")
    s.add_argument("kind", choices=("rulesize", "hitrate", "stages"))
    s.add_argument("--sizes", default="30,60,120,240")
    s.add_argument("--rates")
    s.add_argument("--depths", default="2,3,4,5")
    s.add_argument("--hit-rate", type=float, default=0.1, help="rulesize sweep traffic")
    s.add_argument("--len", type=int, default=1 << 16)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("gen", parents=[common, hw], help="generate rules or traffic")
    g.add_argument("what", choices=("rules", "traffic"))
    g.add_argument("-o", "--output")
    g.add_argument("--n", type=int, default=240)
    g.add_argument("--len-min", type=int, default=8)
    g.add_argument("--len-max", type=int, default=24)
    g.add_argument("--wildcard-frac", type=float, default=0.1)
    g.add_argument("--multi-rule-frac", type=float, default=0.2)
    g.add_argument("--rules", help="rule file (traffic)")
    g.add_argument("--hit-rate", type=float, default=0.1)
    g.add_argument("--len", type=int, default=1 << 16)
    g.add_argument("--truth", help="truth CSV path (default <output>.truth.csv)")
    g.set_defaults(func=cmd_gen)

    d = sub.add_parser("dump", help="pretty-print an image")
    d.add_argument("image")
    d.add_argument("--rules", action="store_true", help="also print the embedded rules")
    d.set_defaults(func=cmd_dump)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    if getattr(args, "kind", None) == "hitrate" and args.rates is None:
        args.rates = "0,0.1,0.3,0.5,0.7,0.9"
    elif getattr(args, "kind", None) == "stages" and args.rates is None:
        args.rates = "0,0.1,0.5,0.9"
    try:
        return args.func(args)
    except UsageError as e:
        sys.stderr.write(f"camnids: usage error: {e}\n")
        return EXIT_USAGE
    except (DataError, RuleError, CompileError, ImageError, EngineError, MetricsError,
            GenerationError, OSError) as e:
        sys.stderr.write(f"camnids: error: {e}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
