"""Cycle-level simulator of the Phase-1 pipeline and the Phase-2 wide CAM.

One cycle, in order:

1. **Arbiter.**  If no Phase-2 search occupies this cycle, pop the oldest
   request from lane A's FIFO, else lane B's.  The search occupies
   ``phase2_latency`` cycles starting now.
2. **Input.**  Each lane consumes one byte unless its stream is exhausted
   or (stall policy) its FIFO is full.  A byte inside a clock-gated span
   is consumed without any search.  Otherwise every valid stage register,
   deepest first, searches its PE over the stored ``[DN, UP]`` rows (port
   A for lane A, port B for lane B), then stage 1 indexes its SRAM table
   with the byte and starts a new candidate.  A hit routes the SRAM entry:
   ``TO_PE`` loads the next stage register, ``TO_PHASE2`` queues a
   request whose window starts at the next byte, ``emit`` reports a match.
3. **Completion.**  A search whose last cycle is this one compares its
   bank rows with the ``W`` bytes starting at the window (zero search
   words past the end of the stream), reports every matching row and, with
   clock gating on, flushes the lane's candidates that start inside the
   longest match and skips its input up to the end of that match.

The pure-Python :class:`Engine` is the readable model and the fallback;
``camnids._kernel`` runs the same cycle on flat arrays and is used by
:func:`run_stream` when it is importable.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import os
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .camcore import Activity, CamArray, EnableRange, Port, cam_search, decode_range, sram_read
from .compiler import Kind, NextRange, TableImage
from .fixed1s import PAD

try:
    if os.environ.get("CAMNIDS_PURE_PYTHON"):
        raise ImportError("pure Python forced")
    from . import _kernel
except ImportError:
    _kernel = None

HAVE_KERNEL = _kernel is not None


class EngineError(ValueError):
    pass


class Policy(enum.Enum):
    STALL = "stall"
    DROP = "drop"


@dataclass(frozen=True)
class EngineConfig:
    image: TableImage
    dual_port: bool = False
    clock_gating: bool = True
    congestion_policy: Policy = Policy.STALL
    queue_depth: int = 4
    phase2_latency: int = 2

    def __post_init__(self):
        if self.queue_depth < 1:
            raise EngineError("queue_depth must be >= 1")
        if self.phase2_latency < 1:
            raise EngineError("phase2_latency must be >= 1")

    @property
    def lanes(self) -> int:
        return 2 if self.dual_port else 1


@dataclass(frozen=True, order=True)
class MatchEvent:
    cycle: int
    lane: int
    sub_pattern_id: int
    start: int
    end: int


# Global counter layout shared with the compiled kernel.
GLOBAL_COUNTERS = (
    "cycles", "input_cycles", "bytes_a", "bytes_b", "gated_bytes", "gated_cycles",
    "stall_cycles", "dropped_requests", "phase2_busy_cycles", "phase2_searches_a",
    "phase2_searches_b", "routes", "clock_block_cycles", "stage1_reads", "stage1_sram_bits",
    "requests", "terminal_events", "phase2_events",
)
BLOCK_COUNTERS = ("searches_a", "searches_b", "enabled_rows", "searched_bits", "l1_segments",
                  "sram_bits_read", "hits")
_G = {name: i for i, name in enumerate(GLOBAL_COUNTERS)}


@dataclass
class BlockStats:
    searches_a: int = 0
    searches_b: int = 0
    enabled_rows: int = 0
    searched_bits: int = 0
    l1_segments: int = 0
    sram_bits_read: int = 0
    hits: int = 0

    @property
    def searches(self) -> int:
        return self.searches_a + self.searches_b


@dataclass
class CycleStats:
    cycles: int = 0
    input_cycles: int = 0
    bytes_a: int = 0
    bytes_b: int = 0
    gated_bytes: int = 0
    gated_cycles: int = 0
    stall_cycles: int = 0
    dropped_requests: int = 0
    phase2_busy_cycles: int = 0
    phase2_searches_a: int = 0
    phase2_searches_b: int = 0
    routes: int = 0
    clock_block_cycles: int = 0
    stage1_reads: int = 0
    stage1_sram_bits: int = 0
    requests: int = 0
    terminal_events: int = 0
    phase2_events: int = 0
    pes: List[BlockStats] = field(default_factory=list)
    banks: List[BlockStats] = field(default_factory=list)
    # array geometry, needed to price the activity
    pe_rows: int = 0
    bank_rows: int = 0
    slots: int = 0
    phase2_latency: int = 0

    @property
    def bytes_consumed(self) -> int:
        return self.bytes_a + self.bytes_b

    @property
    def phase1_searches(self) -> int:
        return sum(p.searches for p in self.pes)

    @property
    def bytes_per_cycle(self) -> float:
        return self.bytes_consumed / self.input_cycles if self.input_cycles else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bytes_consumed"] = self.bytes_consumed
        d["phase1_searches"] = self.phase1_searches
        d["bytes_per_cycle"] = self.bytes_per_cycle
        return d

    def merge(self, other: "CycleStats") -> "CycleStats":
        """Sum of two runs on the same image (e.g. consecutive packets)."""
        out = CycleStats(**{k: getattr(self, k) + getattr(other, k) for k in GLOBAL_COUNTERS})
        out.pes = [_add_block(a, b) for a, b in zip(self.pes, other.pes)] or other.pes
        out.banks = [_add_block(a, b) for a, b in zip(self.banks, other.banks)] or other.banks
        for k in ("pe_rows", "bank_rows", "slots", "phase2_latency"):
            setattr(out, k, getattr(self, k) or getattr(other, k))
        return out

    @classmethod
    def from_arrays(cls, glob, pes, banks, cfg: EngineConfig) -> "CycleStats":
        hw = cfg.image.config
        st = cls(**{name: int(glob[i]) for i, name in enumerate(GLOBAL_COUNTERS)})
        st.pes = [BlockStats(*map(int, row)) for row in pes]
        st.banks = [BlockStats(*map(int, row)) for row in banks]
        st.pe_rows, st.bank_rows, st.slots = hw.pe_rows, hw.bank_rows, hw.slots
        st.phase2_latency = cfg.phase2_latency
        return st


def _add_block(a: BlockStats, b: BlockStats) -> BlockStats:
    return BlockStats(*(getattr(a, k) + getattr(b, k) for k in BLOCK_COUNTERS))


@dataclass
class _Candidate:
    pe: int
    dn: int
    up: int
    start: int


@dataclass(frozen=True)
class Phase2Request:
    lane: int
    bank: int
    dn: int
    up: int
    window_start: int
    start: int
    issue_cycle: int


class _Lane:
    def __init__(self, depth: int):
        self.stream = b""
        self.pos = 0
        self.gate_until = 0
        self.regs: List[Optional[_Candidate]] = [None] * (depth + 2)
        self.fifo: deque[Phase2Request] = deque()


@dataclass(frozen=True)
class StepResult:
    events: Tuple[MatchEvent, ...]
    activity: Activity
    consumed: Tuple[bool, ...]


class Engine:
    """Sequential cycle model of one chip instance."""

    def __init__(self, cfg: EngineConfig):
        img = cfg.image
        hw = img.config
        if hw.stages is None:
            raise EngineError("image has no stage assignment")
        for d in range(2, hw.depth + 1):
            if not hw.pes_for_stage(d):
                raise EngineError(f"stage {d} has no PE")
        if len(img.pe_images) != hw.n_pes or len(img.phase2_banks) != hw.n_banks:
            raise EngineError("image arrays do not match its configuration")
        self.cfg = cfg
        self.hw = hw
        self.book = img.codebook
        self.pe_arrays = [CamArray(tuple(r.stored for r in rows), hw.pe_rows) for rows in img.pe_images]
        self.pe_sram = [[r.sram for r in rows] for rows in img.pe_images]
        self.banks = [CamArray(tuple(r.stored for r in rows), hw.bank_rows, hw.slots)
                      for rows in img.phase2_banks]
        self.bank_sram = [[(r.sub_pattern_id, r.suffix_len) for r in rows] for rows in img.phase2_banks]
        self.reset()

    def reset(self) -> None:
        hw = self.hw
        self.cycle = 0
        self.lanes = [_Lane(hw.depth) for _ in range(self.cfg.lanes)]
        self.glob = [0] * len(GLOBAL_COUNTERS)
        self.pe_stats = [[0] * len(BLOCK_COUNTERS) for _ in range(hw.n_pes)]
        self.bank_stats = [[0] * len(BLOCK_COUNTERS) for _ in range(hw.n_banks)]
        self.events: List[MatchEvent] = []
        self.issue_log: List[Tuple[int, int, int]] = []   # (cycle, lane, candidate start)
        self._p2: Optional[Tuple[Phase2Request, int]] = None

    def attach(self, stream_a: bytes, stream_b: bytes | None = None) -> None:
        """Load the input streams (the Phase-2 window reads ahead in them)."""
        if stream_b is not None and not self.cfg.dual_port:
            raise EngineError("lane B input requires dual_port")
        self.reset()
        self.lanes[0].stream = bytes(stream_a)
        if self.cfg.dual_port:
            self.lanes[1].stream = bytes(stream_b or b"")

    @property
    def done(self) -> bool:
        return self._p2 is None and all(
            ln.pos >= len(ln.stream) and not ln.fifo for ln in self.lanes)

    @property
    def stats(self) -> CycleStats:
        return CycleStats.from_arrays(self.glob, self.pe_stats, self.bank_stats, self.cfg)

    # ------------------------------------------------------------ one cycle

    def step(self) -> StepResult:
        cfg, g = self.cfg, self.glob
        cycle = self.cycle
        new_events: List[MatchEvent] = []
        act = Activity()
        touched: set[int] = set()

        if self._p2 is None:
            for lane_id, lane in enumerate(self.lanes):
                if lane.fifo:
                    req = lane.fifo.popleft()
                    self._p2 = (req, cycle + cfg.phase2_latency - 1)
                    self.issue_log.append((cycle, lane_id, req.start))
                    g[_G["phase2_searches_a" if lane_id == 0 else "phase2_searches_b"]] += 1
                    break
        busy = self._p2 is not None

        consumed = []
        any_read = any_gated = any_stall = False
        for lane_id, lane in enumerate(self.lanes):
            if lane.pos >= len(lane.stream):
                consumed.append(False)
                continue
            if cfg.congestion_policy is Policy.STALL and len(lane.fifo) >= cfg.queue_depth:
                any_stall = True
                consumed.append(False)
                continue
            consumed.append(True)
            t = lane.pos
            lane.pos += 1
            g[_G["bytes_a" if lane_id == 0 else "bytes_b"]] += 1
            if t < lane.gate_until:
                g[_G["gated_bytes"]] += 1
                any_gated = True
                continue
            act += self._phase1(lane_id, lane, t, cycle, new_events, touched)
            any_read = True

        if any(consumed):
            g[_G["input_cycles"]] += 1
        if any_stall:
            g[_G["stall_cycles"]] += 1
        if any_gated:
            g[_G["gated_cycles"]] += 1
        if busy:
            g[_G["phase2_busy_cycles"]] += 1
        g[_G["clock_block_cycles"]] += int(any_read) + len(touched) + int(busy)

        if self._p2 is not None and self._p2[1] == cycle:
            act += self._complete(cycle, new_events)

        g[_G["cycles"]] += 1
        self.cycle += 1
        self.events.extend(new_events)
        return StepResult(tuple(new_events), act, tuple(consumed))

    def _phase1(self, lane_id, lane, t, cycle, events, touched) -> Activity:
        hw, g = self.hw, self.glob
        code = self.book[lane.stream[t]]
        port = Port.A if lane_id == 0 else Port.B
        act = Activity(port=port)
        for d in range(hw.depth, 1, -1):
            cand = lane.regs[d]
            if cand is None:
                continue
            lane.regs[d] = None
            arr = self.pe_arrays[cand.pe]
            mask, dec = decode_range(EnableRange(cand.dn, cand.up), arr.row_count)
            hits, srch = cam_search(arr, mask, code, port)
            touched.add(cand.pe)
            st = self.pe_stats[cand.pe]
            st[lane_id] += 1
            st[2] += srch.enabled_rows
            st[3] += srch.searched_bits
            st[4] += dec.l1_segments
            act += Activity(srch.enabled_rows, srch.searched_bits, dec.l1_segments, 0, 1, port)
            if hits:
                entry, rd = sram_read(self.pe_sram[cand.pe], hits[0], hw.range_bits)
                st[5] += rd.sram_bits_read
                st[6] += 1
                act += rd
                self._route(lane_id, lane, entry, cand.start, t, d, cycle, events)
        g[_G["stage1_reads"]] += 1
        g[_G["stage1_sram_bits"]] += hw.range_bits
        act += Activity(sram_bits_read=hw.range_bits)
        entry = self.cfg.image.stage1[lane.stream[t]]
        if entry is not None:
            self._route(lane_id, lane, entry, t, t, 1, cycle, events)
        return act

    def _route(self, lane_id, lane, nr: NextRange, start, t, depth, cycle, events):
        g = self.glob
        if nr.emit is not None:
            events.append(MatchEvent(cycle, lane_id, nr.emit, start, t))
            g[_G["terminal_events"]] += 1
        if nr.kind is Kind.TO_PE:
            g[_G["routes"]] += 1
            lane.regs[depth + 1] = _Candidate(nr.target, nr.dn, nr.up, start)
        elif nr.kind is Kind.TO_PHASE2:
            g[_G["routes"]] += 1
            g[_G["requests"]] += 1
            if len(lane.fifo) >= self.cfg.queue_depth:
                g[_G["dropped_requests"]] += 1
            else:
                lane.fifo.append(Phase2Request(lane_id, nr.target, nr.dn, nr.up, t + 1, start, cycle))

    def _complete(self, cycle, events) -> Activity:
        hw, g = self.hw, self.glob
        req, _ = self._p2
        self._p2 = None
        lane = self.lanes[req.lane]
        arr = self.banks[req.bank]
        data = lane.stream
        ws = req.window_start
        window = tuple(self.book[data[i]] if i < len(data) else PAD for i in range(ws, ws + hw.slots))
        mask, dec = decode_range(EnableRange(req.dn, req.up), arr.row_count)
        hits, srch = cam_search(arr, mask, window, Port.A)
        st = self.bank_stats[req.bank]
        st[req.lane] += 1
        st[2] += srch.enabled_rows
        st[3] += srch.searched_bits
        st[4] += dec.l1_segments
        act = Activity(srch.enabled_rows, srch.searched_bits, dec.l1_segments, 0, 1, Port.A)
        last = -1
        for row in hits:
            (spid, n), rd = sram_read(self.bank_sram[req.bank], row, hw.phase2_sram_bits)
            st[5] += rd.sram_bits_read
            st[6] += 1
            act += rd
            end = ws + n - 1
            if end < len(data):
                events.append(MatchEvent(cycle, req.lane, spid, req.start, end))
                g[_G["phase2_events"]] += 1
                last = max(last, end)
        if self.cfg.clock_gating and last >= 0:
            resume = last + 1
            for d, cand in enumerate(lane.regs):
                if cand is not None and cand.start < resume:
                    lane.regs[d] = None
            lane.fifo = deque(r for r in lane.fifo if r.start >= resume)
            lane.gate_until = max(lane.gate_until, resume)
        return act

    def run(self) -> Tuple[List[MatchEvent], CycleStats]:
        while not self.done:
            self.step()
        for lane in self.lanes:
            lane.regs = [None] * len(lane.regs)
        return list(self.events), self.stats


def load(cfg: EngineConfig) -> Engine:
    return Engine(cfg)


def flatten_image(img: TableImage) -> dict:
    """Flat numpy view of an image for the compiled kernel."""
    hw = img.config
    R = max(hw.pe_rows, 1)

    def enc(nr: Optional[NextRange]):
        if nr is None:
            return (0, -1, 0, 0, -1)
        flags = {Kind.TO_PE: 1, Kind.TO_PHASE2: 2, Kind.TERMINAL: 0}[nr.kind]
        if nr.emit is not None:
            flags |= 4
        return (flags, nr.target, nr.dn, nr.up, -1 if nr.emit is None else nr.emit)

    stage1 = np.array([enc(e) for e in img.stage1], dtype=np.int32)
    pe_code = np.zeros((hw.n_pes, R), dtype=np.uint16)
    pe_e = np.zeros((hw.n_pes, R, 5), dtype=np.int32)
    for p, rows in enumerate(img.pe_images):
        for r, row in enumerate(rows):
            pe_code[p, r] = row.stored
            pe_e[p, r] = enc(row.sram)
    bank_code = np.zeros((hw.n_banks, max(hw.bank_rows, 1), hw.slots), dtype=np.uint16)
    bank_meta = np.zeros((hw.n_banks, max(hw.bank_rows, 1), 2), dtype=np.int32)
    for b, rows in enumerate(img.phase2_banks):
        for r, row in enumerate(rows):
            bank_code[b, r] = row.stored
            bank_meta[b, r] = (row.sub_pattern_id, row.suffix_len)
    return dict(stage1=stage1, pe_code=pe_code, pe_e=pe_e, bank_code=bank_code,
                bank_meta=bank_meta, book=np.array(img.codebook, dtype=np.uint16))


def _run_kernel(cfg: EngineConfig, stream_a: bytes, stream_b: bytes | None):
    img = cfg.image
    flat = getattr(img, "_flat", None)
    if flat is None:
        flat = flatten_image(img)
        object.__setattr__(img, "_flat", flat)
    hw = img.config
    a = np.frombuffer(bytes(stream_a), dtype=np.uint8)
    b = np.frombuffer(bytes(stream_b or b""), dtype=np.uint8)
    raw, glob, pes, banks, issues = _kernel.run(
        flat["stage1"], flat["pe_code"], flat["pe_e"], flat["bank_code"], flat["bank_meta"],
        flat["book"], a, b, cfg.lanes, hw.depth, hw.slots, int(cfg.clock_gating),
        int(cfg.congestion_policy is Policy.STALL), cfg.queue_depth, cfg.phase2_latency,
        hw.range_bits, hw.phase2_sram_bits)
    events = [MatchEvent(*e) for e in raw]
    return events, CycleStats.from_arrays(glob, pes, banks, cfg), issues


def run_stream(cfg_or_engine, stream_a: bytes, stream_b: bytes | None = None,
               backend: str = "auto") -> Tuple[List[MatchEvent], CycleStats]:
    """Run whole streams to completion and drain the pipeline.

    ``backend`` is ``"auto"`` (compiled kernel when available), ``"kernel"``
    or ``"python"``.
    """
    events, stats, _ = run_stream_logged(cfg_or_engine, stream_a, stream_b, backend)
    return events, stats


def run_stream_logged(cfg_or_engine, stream_a, stream_b=None, backend="auto"):
    """Like :func:`run_stream` but also returns the Phase-2 issue log."""
    if isinstance(cfg_or_engine, Engine):
        cfg = cfg_or_engine.cfg
    else:
        cfg = cfg_or_engine
    if stream_b is not None and not cfg.dual_port:
        raise EngineError("lane B input requires dual_port")
    if backend == "kernel" and _kernel is None:
        raise EngineError("compiled kernel is not available")
    if backend in ("auto", "kernel") and _kernel is not None:
        return _run_kernel(cfg, stream_a, stream_b)
    eng = cfg_or_engine if isinstance(cfg_or_engine, Engine) else Engine(cfg)
    eng.attach(stream_a, stream_b)
    events, stats = eng.run()
    return events, stats, list(eng.issue_log)


def pipeline_latency(depth: int, phase2_latency: int = 2, pattern_len: Optional[int] = None) -> int:
    """Cycles from the first byte of a match entering to its report.

    Default is a pattern that reaches Phase-2 (``D + phase2_latency``); a
    pattern of ``pattern_len <= D`` bytes is reported by Phase-1 after
    ``pattern_len`` cycles.
    """
    if pattern_len is not None and pattern_len <= depth:
        return pattern_len
    return depth + phase2_latency


def latency_cycles(cfg: EngineConfig, pattern_len: Optional[int] = None) -> int:
    return pipeline_latency(cfg.image.config.depth, cfg.phase2_latency, pattern_len)


def events_csv(events: Sequence[MatchEvent]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cycle", "lane", "sub_pattern_id", "start", "end"])
    for e in events:
        w.writerow([e.cycle, e.lane, e.sub_pattern_id, e.start, e.end])
    return buf.getvalue()


def stats_json(stats: CycleStats) -> str:
    return json.dumps(stats.to_dict(), indent=1) + "\n"
