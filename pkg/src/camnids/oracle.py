"""Brute-force reference matchers.

Nothing here looks at compiled tables: occurrences come from direct
wildcard-aware comparison, so the engine and Phase-3 can be checked
against an independent implementation.
"""

from __future__ import annotations

import bisect
import csv
import io
from collections import deque
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .rules import RuleSet


@dataclass(frozen=True, order=True)
class Occurrence:
    pattern_id: int
    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start + 1


def _as_array(stream) -> np.ndarray:
    return np.frombuffer(bytes(stream), dtype=np.uint8)


def _scan(seq, data: np.ndarray) -> np.ndarray:
    """Start offsets where ``seq`` (ints / None wildcards) occurs in ``data``."""
    L = len(seq)
    if L > len(data):
        return np.empty(0, dtype=np.int64)
    cand = np.arange(len(data) - L + 1, dtype=np.int64)
    for j, b in enumerate(seq):
        if b is None:
            continue
        cand = cand[data[cand + j] == b]
        if not cand.size:
            break
    return cand


def oracle_match(patterns: Iterable, stream) -> List[Occurrence]:
    """Every occurrence of every pattern, sorted by ``(end, pattern_id, start)``.

    ``patterns`` may hold :class:`~camnids.rules.Pattern` or
    :class:`~camnids.compiler.SubPattern` objects (anything with ``id`` and
    ``bytes``).
    """
    data = _as_array(stream)
    out = []
    for p in patterns:
        L = len(p.bytes)
        out.extend(Occurrence(p.id, int(s), int(s) + L - 1) for s in _scan(p.bytes, data))
    out.sort(key=lambda o: (o.end, o.pattern_id, o.start))
    return out


# ------------------------------------------------------------ gating replay


class _LaneInfo:
    def __init__(self, term_at, req_at, full_at, n):
        self.n = n
        self.term_at: Dict[int, List[Occurrence]] = term_at   # end -> short occurrences
        self.req_at: Dict[int, int] = req_at                   # D-prefix end -> its start
        self.full_at: Dict[int, List[Occurrence]] = full_at   # start -> long occurrences
        self.marks = sorted(set(term_at) | set(req_at))
        self.pos = 0
        self.gate = 0
        self.fifo: deque[int] = deque()


def _split(p, depth: int, slots: int):
    seq = tuple(p.bytes)
    if len(seq) > depth + slots:
        raise ValueError(f"pattern {p.id}: {len(seq)} bytes exceed D+W = {depth + slots}")
    head = seq[:depth]
    if any(b is None for b in head):
        raise ValueError(f"pattern {p.id}: wildcard inside the first {depth} bytes")
    return head, seq[depth:]


def _lane_info(patterns, stream, depth: int, slots: int) -> _LaneInfo:
    terms, longs, heads = [], [], {}
    for p in patterns:
        head, tail = _split(p, depth, slots)
        if tail:
            longs.append(p)
            heads[head] = p.id
        else:
            terms.append(p)
    data = _as_array(stream)
    term_at: Dict[int, List[Occurrence]] = {}
    for o in oracle_match(terms, stream):
        term_at.setdefault(o.end, []).append(o)
    req_at: Dict[int, int] = {}
    for head in heads:
        for s in _scan(head, data):
            req_at[int(s) + depth - 1] = int(s)
    full: Dict[int, List[Occurrence]] = {}
    for o in oracle_match(longs, stream):
        full.setdefault(o.start, []).append(o)
    return _LaneInfo(term_at, req_at, full, len(data))


def oracle_skip_lanes(patterns: Sequence, streams: Sequence[bytes], D: int, W: int,
                      phase2_latency: int = 2, queue_depth: int = 4) -> List[List[Occurrence]]:
    """Expected events per lane with clock gating on (stall policy).

    Gating makes the reported set depend on when each Phase-2 search
    completes, so this replays the timing of one input byte per lane per
    cycle, a FIFO of ``queue_depth`` pending wide searches per lane, a
    single wide-search unit shared by the lanes (lane A first) that is busy
    for ``phase2_latency`` cycles, and the skip rule:

    * a wide search started at offset ``s`` that matches ends at ``e``;
      the lane then skips its input up to ``max(e) + 1`` and drops every
      candidate (pipeline or queued) that started before that point;
    * a candidate is reported (or queued) only if its start is at or past
      every skip point published before that cycle's input.

    Which candidates exist is read straight off the brute-force scan.
    """
    lanes = [_lane_info(patterns, s, D, W) for s in streams]
    out: List[List[Occurrence]] = [[] for _ in lanes]
    cycle = 0
    busy: Optional[Tuple[int, int, int]] = None   # (lane, start, last cycle)
    while True:
        if busy is None and all(ln.pos >= ln.n and not ln.fifo for ln in lanes):
            break
        if busy is None and not any(ln.fifo for ln in lanes):
            # nothing in flight: jump to the next offset where something can happen
            k = None
            for ln in lanes:
                if ln.pos >= ln.n:
                    continue
                i = bisect.bisect_left(ln.marks, ln.pos)
                nxt = ln.marks[i] if i < len(ln.marks) else ln.n
                k = nxt - ln.pos if k is None else min(k, nxt - ln.pos)
            if k:
                for ln in lanes:
                    ln.pos = min(ln.pos + k, ln.n)
                cycle += k
                continue

        if busy is None:
            for i, ln in enumerate(lanes):
                if ln.fifo:
                    busy = (i, ln.fifo.popleft(), cycle + phase2_latency - 1)
                    break

        for i, ln in enumerate(lanes):
            if ln.pos >= ln.n or len(ln.fifo) >= queue_depth:
                continue
            t = ln.pos
            ln.pos += 1
            if t < ln.gate:
                continue
            for o in ln.term_at.get(t, ()):
                if o.start >= ln.gate:
                    out[i].append(o)
            s = ln.req_at.get(t)
            if s is not None and s >= ln.gate:
                ln.fifo.append(s)

        if busy is not None and busy[2] == cycle:
            i, s, _ = busy
            ln = lanes[i]
            hits = ln.full_at.get(s, [])
            out[i].extend(hits)
            if hits:
                resume = max(o.end for o in hits) + 1
                ln.fifo = deque(x for x in ln.fifo if x >= resume)
                ln.gate = max(ln.gate, resume)
            busy = None
        cycle += 1

    for evs in out:
        evs.sort(key=lambda o: (o.end, o.pattern_id, o.start))
    return out


def oracle_skip(patterns: Sequence, stream, D: int, W: int, phase2_latency: int = 2,
                queue_depth: int = 4) -> List[Occurrence]:
    """Single-lane form of :func:`oracle_skip_lanes`."""
    return oracle_skip_lanes(patterns, [stream], D, W, phase2_latency, queue_depth)[0]


# ------------------------------------------------------------ rules


def oracle_rules(rs: RuleSet, stream) -> List[Tuple[int, int]]:
    """All ``(rule_id, end)`` completions, each reported once, sorted.

    Consecutive steps need ``min <= start(next) - end(prev) - 1 <= max``.
    """
    occ = oracle_match(rs.pattern_list(), stream)
    by_pat: Dict[int, List[Occurrence]] = {}
    for o in occ:
        by_pat.setdefault(o.pattern_id, []).append(o)
    hits = set()
    for r in rs.rules:
        ends = sorted({o.end for o in by_pat.get(r.steps[0].pattern_id, ())})
        for step in r.steps[1:]:
            lo_gap, hi_gap = step.gap.min_gap, step.gap.max_gap
            nxt = set()
            for o in by_pat.get(step.pattern_id, ()):
                # need a previous end e with lo <= o.start - e - 1 <= hi
                hi_e = o.start - 1 - lo_gap
                lo_e = -1 if hi_gap is None else o.start - 1 - hi_gap
                i = bisect.bisect_left(ends, lo_e)
                if i < len(ends) and ends[i] <= hi_e:
                    nxt.add(o.end)
            ends = sorted(nxt)
        hits.update((r.id, e) for e in ends)
    return sorted(hits, key=lambda h: (h[1], h[0]))


# ------------------------------------------------------------ CSV


def occurrences_csv(occ: Iterable[Occurrence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pattern_id", "start", "end"])
    for o in occ:
        w.writerow([o.pattern_id, o.start, o.end])
    return buf.getvalue()


def read_occurrences_csv(text: str) -> List[Occurrence]:
    rows = csv.DictReader(io.StringIO(text))
    return [Occurrence(int(r["pattern_id"]), int(r["start"]), int(r["end"])) for r in rows]
