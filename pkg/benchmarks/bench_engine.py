"""Compiled kernel vs pure-Python engine on the desk workload.

    python3 benchmarks/bench_engine.py [--len 65536] [--hit-rate 0.5] [--repeat 3]
"""

import argparse
import time

from camnids.compiler import compile_ruleset
from camnids.engine import HAVE_KERNEL, EngineConfig, run_stream
from camnids.generate import desk_ruleset, gen_traffic
from camnids.rules import TrafficSpec


def best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--len", type=int, default=1 << 16)
    ap.add_argument("--hit-rate", type=float, default=0.5)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--python-len", type=int, default=1 << 14,
                    help="bytes for the (slow) Python engine; throughput is scaled")
    args = ap.parse_args()

    rs = desk_ruleset()
    img = compile_ruleset(rs).image
    stream, _ = gen_traffic(TrafficSpec(args.len, args.hit_rate, 1), rs)
    cfg = EngineConfig(img)

    short = stream[:args.python_len]
    t_py, (ev_py, st_py) = best_of(lambda: run_stream(cfg, short, backend="python"), args.repeat)
    print(f"python : {len(short) / t_py / 1e3:9.1f} kB/s  ({len(short)} bytes, {t_py:.3f} s)")
    if not HAVE_KERNEL:
        print("kernel : not built")
        return
    t_k, (ev_k, st_k) = best_of(lambda: run_stream(cfg, stream, backend="kernel"), args.repeat)
    print(f"kernel : {len(stream) / t_k / 1e3:9.1f} kB/s  ({len(stream)} bytes, {t_k:.3f} s)")
    ev_ks, st_ks = run_stream(cfg, short, backend="kernel")
    assert ev_ks == ev_py and st_ks == st_py, "backends disagree"
    print(f"speedup: {(len(stream) / t_k) / (len(short) / t_py):.1f}x (outputs identical)")


if __name__ == "__main__":
    main()
