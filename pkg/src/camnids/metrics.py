"""Activation-count energy model, baselines, memory report and sweeps.

Energies are in relative units: every component is an activity counter
from :class:`~camnids.engine.CycleStats` times a coefficient.  The default
coefficients are modelling assumptions, so only ratios and trends between
designs mean anything.

Components::

    ml         e_ml   * enabled row-bits searched (PE and Phase-2)
    sl         e_sl   * search-line bits driven (11 per PE search, 11*W per wide search)
    sram       e_sram * SRAM bits read (stage 1, PE next-range, Phase-2 ids)
    decoder    e_dec  * level-1 decoder segments opened
    router     e_rt   * routed hits
    clock      e_clk  * active block-cycles (stage 1, each PE, Phase-2)
    retention  e_ret  * row-cycles spent gated at retention voltage
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .compiler import AcStats, HwConfig, TableImage, build_conventional_ac, compile_ruleset
from .engine import CycleStats, EngineConfig, run_stream
from .fixed1s import CODE_BITS
from .rules import RuleSet, TrafficSpec

COMPONENTS = ("ml", "sl", "sram", "decoder", "router", "clock", "retention")

# reference operating point
CLOCK_MHZ = 144.0


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class CoefficientTable:
    e_ml_per_bit: float = 1.0
    e_sl_per_bit: float = 0.5
    e_sram_per_bit: float = 0.8
    e_decoder_per_segment: float = 2.0
    e_router_per_route: float = 1.0
    e_clock_per_active_block_cycle: float = 0.2
    e_retention_per_gated_row_cycle: float = 0.001

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or v < 0 or math.isnan(v):
                raise MetricsError(f"coefficient {f.name} must be a non-negative number, got {v!r}")

    def scaled(self, k: float) -> "CoefficientTable":
        return CoefficientTable(**{f.name: getattr(self, f.name) * k for f in fields(self)})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CoefficientTable":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise MetricsError(f"unknown coefficients: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CoefficientTable":
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as e:
                raise MetricsError(f"{path}: {e}") from None


DEFAULT_COEFFS = CoefficientTable()


@dataclass(frozen=True)
class EnergyReport:
    components: Dict[str, float]
    stage1: float
    pes: Tuple[float, ...]
    phase2: float
    decoder: float
    router: float
    clock: float
    retention: float
    bytes_consumed: int
    pattern_bytes: int
    coeffs: CoefficientTable = DEFAULT_COEFFS
    row_enable: bool = True

    @property
    def total(self) -> float:
        return sum(self.components.values())

    @property
    def energy_per_search(self) -> float:
        """Energy per input byte (one search cycle per byte and lane)."""
        return self.total / self.bytes_consumed if self.bytes_consumed else 0.0

    @property
    def energy_per_char_per_search(self) -> Optional[float]:
        if not self.pattern_bytes:
            return None
        return self.energy_per_search / self.pattern_bytes

    def to_dict(self) -> dict:
        return {
            "components": dict(self.components),
            "blocks": {"stage1": self.stage1, "pes": list(self.pes), "phase2": self.phase2,
                       "decoder": self.decoder, "router": self.router, "clock": self.clock,
                       "retention": self.retention},
            "total": self.total,
            "bytes_consumed": self.bytes_consumed,
            "pattern_bytes": self.pattern_bytes,
            "energy_per_search": self.energy_per_search,
            "energy_per_char_per_search": self.energy_per_char_per_search,
            "row_enable": self.row_enable,
            "coefficients": self.coeffs.to_dict(),
        }


def accumulate(stats: CycleStats, coeffs: CoefficientTable = DEFAULT_COEFFS,
               pattern_bytes: int = 0, row_enable: bool = True) -> EnergyReport:
    """Price a run's activity.

    With ``row_enable=False`` every search is charged its whole array (the
    pipelined design without row enabling): match lines of all rows, no
    range decoder, and no rows parked at retention voltage.  Everything
    else, including which searches happen, is the same run.
    """
    c = coeffs
    W = stats.slots
    pe_ml = []
    pe_tot = []
    ml = sl = sram = dec = 0.0
    for p in stats.pes:
        bits = p.searched_bits if row_enable else p.searches * stats.pe_rows * CODE_BITS
        e_ml = c.e_ml_per_bit * bits
        e_sl = c.e_sl_per_bit * p.searches * CODE_BITS
        e_sram = c.e_sram_per_bit * p.sram_bits_read
        ml += e_ml
        sl += e_sl
        sram += e_sram
        dec += p.l1_segments if row_enable else 0
        pe_ml.append(e_ml)
        pe_tot.append(e_ml + e_sl + e_sram)
    p2 = 0.0
    for b in stats.banks:
        bits = b.searched_bits if row_enable else b.searches * stats.bank_rows * W * CODE_BITS
        e = c.e_ml_per_bit * bits + c.e_sl_per_bit * b.searches * W * CODE_BITS \
            + c.e_sram_per_bit * b.sram_bits_read
        ml += c.e_ml_per_bit * bits
        sl += c.e_sl_per_bit * b.searches * W * CODE_BITS
        sram += c.e_sram_per_bit * b.sram_bits_read
        dec += b.l1_segments if row_enable else 0
        p2 += e
    stage1 = c.e_sram_per_bit * stats.stage1_sram_bits
    sram += stage1
    decoder = c.e_decoder_per_segment * dec
    router = c.e_router_per_route * stats.routes
    clock = c.e_clock_per_active_block_cycle * stats.clock_block_cycles
    retention = 0.0
    if row_enable:
        provisioned = len(stats.pes) * stats.pe_rows + len(stats.banks) * stats.bank_rows
        active = sum(p.enabled_rows for p in stats.pes) + \
            sum(b.enabled_rows for b in stats.banks) * stats.phase2_latency
        retention = c.e_retention_per_gated_row_cycle * max(0, stats.cycles * provisioned - active)
    comps = {"ml": ml, "sl": sl, "sram": sram, "decoder": decoder, "router": router,
             "clock": clock, "retention": retention}
    return EnergyReport(comps, stage1, tuple(pe_tot), p2, decoder, router, clock, retention,
                        stats.bytes_consumed, pattern_bytes, coeffs, row_enable)


def _image_pattern_bytes(img: TableImage) -> int:
    if img.rules is not None:
        return img.rules.pattern_bytes
    return sum(sp.total_len for sp in img.subpatterns)


def model_no_row_enable(image: TableImage, stream: bytes,
                        coeffs: CoefficientTable = DEFAULT_COEFFS, **engine_kw) -> EnergyReport:
    """Run ``stream`` and price it as if every search enabled all rows."""
    _, stats = run_stream(EngineConfig(image, **engine_kw), stream)
    return accumulate(stats, coeffs, _image_pattern_bytes(image), row_enable=False)


@dataclass(frozen=True)
class ConventionalPoint:
    transitions: int
    entry_bits: int
    ml_per_byte: float
    energy_per_byte: float
    stream_len: int

    @property
    def total(self) -> float:
        return self.energy_per_byte * self.stream_len


def model_conventional(ac: AcStats, stream_len: int,
                       coeffs: CoefficientTable = DEFAULT_COEFFS) -> ConventionalPoint:
    """Single CAM holding every DFA transition, searched in full per byte.

    Entries are ``{state, char}``: ``ceil(log2(states))`` bits plus one
    11-bit code.
    """
    c = coeffs
    state_bits = max(1, math.ceil(math.log2(ac.n_states + 1)))
    width = state_bits + CODE_BITS
    rows = ac.n_forward + ac.n_backward
    ml = rows * width * c.e_ml_per_bit
    per_byte = ml + width * c.e_sl_per_bit + state_bits * c.e_sram_per_bit \
        + c.e_clock_per_active_block_cycle
    return ConventionalPoint(rows, width, ml, per_byte, stream_len)


# ------------------------------------------------------------ memory


@dataclass(frozen=True)
class MemoryReport:
    pattern_bytes: int
    cam_bits_used: int
    sram_bits_used: int
    cam_bits_provisioned: int
    sram_bits_provisioned: int

    def _per_char(self, bits: int) -> Optional[float]:
        return bits / 8 / self.pattern_bytes if self.pattern_bytes else None

    @property
    def cam_bytes_per_char(self) -> Optional[float]:
        return self._per_char(self.cam_bits_used)

    @property
    def sram_bytes_per_char(self) -> Optional[float]:
        return self._per_char(self.sram_bits_used)

    @property
    def cam_bytes_per_char_provisioned(self) -> Optional[float]:
        return self._per_char(self.cam_bits_provisioned)

    @property
    def sram_bytes_per_char_provisioned(self) -> Optional[float]:
        return self._per_char(self.sram_bits_provisioned)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("cam_bytes_per_char", "sram_bytes_per_char", "cam_bytes_per_char_provisioned",
                  "sram_bytes_per_char_provisioned"):
            d[k] = getattr(self, k)
        return d


def memory_report(image: TableImage) -> MemoryReport:
    hw = image.config
    cam = image.pe_rows_used * CODE_BITS + image.bank_rows_used * hw.row_bits
    used_s1 = sum(e is not None for e in image.stage1)
    sram = (used_s1 + image.pe_rows_used) * hw.range_bits + image.bank_rows_used * hw.phase2_sram_bits
    cam_p = hw.n_pes * hw.pe_rows * CODE_BITS + hw.n_banks * hw.bank_rows * hw.row_bits
    sram_p = (256 + hw.n_pes * hw.pe_rows) * hw.range_bits + hw.n_banks * hw.bank_rows * hw.phase2_sram_bits
    return MemoryReport(_image_pattern_bytes(image), cam, sram, cam_p, sram_p)


# ------------------------------------------------------------ latency and throughput


def latency_ns(cycles: int, mhz: float = CLOCK_MHZ) -> float:
    return cycles / mhz * 1e3


def throughput_mbps(bytes_per_cycle: float, mhz: float = CLOCK_MHZ) -> float:
    return bytes_per_cycle * mhz


# ------------------------------------------------------------ sweeps

SWEEP_LEN = 1 << 16
RULESIZE_DESIGNS = ("conventional", "no_row_enable", "full")


@dataclass(frozen=True)
class SweepRow:
    key: Tuple
    values: Tuple


def _write_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _rulesize_point(args):
    from .generate import DESK_LEN, gen_ruleset, gen_traffic
    seed, size, cfg, coeffs, hit_rate, length = args
    rs = gen_ruleset(seed, size, DESK_LEN, 0.1, 0.2, cfg)
    img = compile_ruleset(rs, cfg).image
    stream, _ = gen_traffic(TrafficSpec(length, hit_rate, seed), rs)
    _, stats = run_stream(EngineConfig(img), stream)
    pb = rs.pattern_bytes
    full = accumulate(stats, coeffs, pb)
    nre = accumulate(stats, coeffs, pb, row_enable=False)
    conv = model_conventional(build_conventional_ac(rs), len(stream), coeffs)
    return [
        (size, "conventional", conv.energy_per_byte, conv.energy_per_byte / pb),
        (size, "no_row_enable", nre.energy_per_search, nre.energy_per_char_per_search),
        (size, "full", full.energy_per_search, full.energy_per_char_per_search),
    ]


def sweep_rulesize(seed: int, sizes: Sequence[int], cfg: Optional[HwConfig] = None,
                   coeffs: CoefficientTable = DEFAULT_COEFFS, hit_rate: float = 0.1,
                   length: int = SWEEP_LEN, jobs: int = 1) -> List[tuple]:
    """Rows ``(size, design, energy_per_byte, energy_per_char_per_search)``."""
    if list(sizes) != sorted(sizes):
        raise MetricsError("sizes must be ascending")
    cfg = cfg or HwConfig()
    pts = _map(_rulesize_point, [(seed, s, cfg, coeffs, hit_rate, length) for s in sizes], jobs)
    rows = [r for pt in pts for r in pt]
    order = {d: i for i, d in enumerate(RULESIZE_DESIGNS)}
    return sorted(rows, key=lambda r: (r[0], order[r[1]]))


def rulesize_csv(rows) -> str:
    return _write_csv(("size", "design", "energy_per_byte", "energy_per_char_per_search"), rows)


def _hitrate_point(args):
    from .generate import desk_ruleset, gen_traffic
    seed, rate, cfg, coeffs, length, rs = args
    rs = rs or desk_ruleset(cfg)
    img = compile_ruleset(rs, cfg).image
    stream, _ = gen_traffic(TrafficSpec(length, rate, seed), rs)
    out = []
    for gating in (True, False):
        _, stats = run_stream(EngineConfig(img, clock_gating=gating), stream)
        rep = accumulate(stats, coeffs, rs.pattern_bytes)
        out.append((rate, "on" if gating else "off", rep.energy_per_search, rep.total,
                    stats.gated_bytes / max(1, stats.bytes_consumed)))
    return out


HITRATES = (0.0, 0.1, 0.3, 0.5, 0.7, 0.9)


def sweep_hitrate(seed: int, rates: Sequence[float] = HITRATES, cfg: Optional[HwConfig] = None,
                  coeffs: CoefficientTable = DEFAULT_COEFFS, length: int = SWEEP_LEN,
                  rs: Optional[RuleSet] = None, jobs: int = 1) -> List[tuple]:
    """Rows ``(hit_rate, gating, energy_per_byte, normalized, gated_fraction)``.

    ``normalized`` divides by the gating-off energy at hit rate 0 (or the
    first rate given).
    """
    cfg = cfg or HwConfig()
    pts = _map(_hitrate_point, [(seed, r, cfg, coeffs, length, rs) for r in rates], jobs)
    rows = sorted((r for pt in pts for r in pt), key=lambda r: (r[0], r[1] == "off"))
    base = next(r[2] for r in rows if r[1] == "off")
    return [(r[0], r[1], r[2], r[2] / base if base else 0.0, r[4]) for r in rows]


def hitrate_csv(rows) -> str:
    return _write_csv(("hit_rate", "gating", "energy_per_byte", "normalized", "gated_fraction"), rows)


STAGE_DEPTHS = (2, 3, 4, 5)
STAGE_RATES = (0.0, 0.1, 0.5, 0.9)
STAGE_LEN = (8, 22)   # single chunk for every depth in 2..5 with W=20


def _stages_point(args):
    from .generate import gen_ruleset, gen_traffic
    seed, depth, rates, base_cfg, coeffs, length = args
    # wildcards kept out of the first max(depths) bytes so one ruleset serves every depth
    gen_cfg = replace(base_cfg, depth=max(STAGE_DEPTHS), stages=None)
    rs = gen_ruleset(seed, 240, STAGE_LEN, 0.1, 0.2, gen_cfg)
    cfg = replace(base_cfg, depth=depth, stages=None)
    img = compile_ruleset(rs, cfg).image
    out = []
    for rate in rates:
        stream, _ = gen_traffic(TrafficSpec(length, rate, seed), rs)
        _, stats = run_stream(EngineConfig(img), stream)
        rep = accumulate(stats, coeffs, rs.pattern_bytes)
        p2 = sum(b.searches for b in stats.banks)
        out.append((depth, rate, rep.energy_per_search, p2))
    return out


def sweep_stages(seed: int, depths: Sequence[int] = STAGE_DEPTHS, rates: Sequence[float] = STAGE_RATES,
                 cfg: Optional[HwConfig] = None, coeffs: CoefficientTable = DEFAULT_COEFFS,
                 length: int = SWEEP_LEN, jobs: int = 1) -> List[tuple]:
    """Rows ``(depth, hit_rate, energy_per_byte, phase2_searches)``, gating on.

    The hardware is the default one with 12 PEs so that every depth fits
    the same ruleset; the retention term is therefore the same for all
    depths.
    """
    if any(d not in STAGE_DEPTHS for d in depths):
        raise MetricsError(f"depths must lie in {STAGE_DEPTHS}")
    cfg = cfg or HwConfig(n_pes=12)
    pts = _map(_stages_point, [(seed, d, tuple(rates), cfg, coeffs, length) for d in depths], jobs)
    return sorted((r for pt in pts for r in pt), key=lambda r: (r[1], r[0]))


def best_depth(rows) -> Dict[float, int]:
    """Lowest-energy depth per hit rate (the crossover shows as a change)."""
    best: Dict[float, Tuple[float, int]] = {}
    for depth, rate, e, _ in rows:
        if rate not in best or e < best[rate][0]:
            best[rate] = (e, depth)
    return {r: d for r, (e, d) in sorted(best.items())}


def stages_csv(rows) -> str:
    return _write_csv(("depth", "hit_rate", "energy_per_byte", "phase2_searches"), rows)
