"""Software rule completion: Rule Table plus Partial Hit Table.

Each rule is flattened into sub-pattern steps.  A pattern split into a
chain contributes one step per chain element; the first element carries
the rule's gap, the rest must follow back to back (gap ``[0,0]``).

A :class:`PartialHit` remembers that steps ``0..next_step-1`` of a rule
matched and which start offsets the next step may have.  Events must
arrive in nondecreasing end order; :func:`process_events` sorts a run's
events by ``(end, sub_pattern_id)`` and keeps one table per lane.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from .compiler import ChainPlan, SubPattern
from .engine import MatchEvent
from .rules import Gap, RuleSet

CHAIN_GAP = Gap(0, 0)


class Phase3Error(ValueError):
    pass


class OutOfOrderEvent(Phase3Error):
    pass


@dataclass(frozen=True)
class RuleTable:
    steps: Mapping[int, Tuple[Tuple[int, Gap], ...]]          # rule -> ((spid, gap), ...)
    by_subpattern: Mapping[int, Tuple[Tuple[int, int], ...]]  # spid -> ((rule, step), ...)
    lengths: Mapping[int, int]                                # spid -> bytes

    def is_single(self, rule_id: int) -> bool:
        return len(self.steps[rule_id]) == 1


def build_rule_table(rs: RuleSet, chain_plan: ChainPlan,
                     subpatterns: Sequence[SubPattern]) -> RuleTable:
    lengths = {sp.id: sp.total_len for sp in subpatterns}
    steps: Dict[int, Tuple[Tuple[int, Gap], ...]] = {}
    users: Dict[int, List[Tuple[int, int]]] = {}
    for r in rs.rules:
        flat: List[Tuple[int, Gap]] = []
        for st in r.steps:
            if st.pattern_id not in chain_plan:
                raise Phase3Error(f"rule {r.id}: pattern {st.pattern_id} has no chain plan")
            for k, spid in enumerate(chain_plan[st.pattern_id]):
                if spid not in lengths:
                    raise Phase3Error(f"rule {r.id}: unknown sub-pattern {spid}")
                flat.append((spid, st.gap if k == 0 else CHAIN_GAP))
        steps[r.id] = tuple(flat)
        for i, (spid, _) in enumerate(flat):
            users.setdefault(spid, []).append((r.id, i))
    by_sp = {k: tuple(v) for k, v in sorted(users.items())}
    return RuleTable(steps, by_sp, lengths)


@dataclass(frozen=True)
class PartialHit:
    rule_id: int
    next_step: int
    min_start: int
    max_start: Optional[int]      # None = unbounded
    created_at: int
    events: Tuple[MatchEvent, ...] = ()

    def admits(self, start: int) -> bool:
        return self.min_start <= start and (self.max_start is None or start <= self.max_start)


@dataclass(frozen=True)
class RuleHit:
    rule_id: int
    end: int
    events: Tuple[MatchEvent, ...] = ()
    lane: int = 0


@dataclass
class PartialHitTable:
    slots: Dict[Tuple[int, int], List[PartialHit]] = field(default_factory=dict)
    last_end: int = -1
    reported: Set[Tuple[int, int]] = field(default_factory=set)

    def __len__(self) -> int:
        return sum(len(v) for v in self.slots.values())

    def _prune(self, table: RuleTable, now: int):
        for key in list(self.slots):
            rule, step = key
            # a later event for this step ends at >= now, so starts at >= now - L + 1
            earliest = now - table.lengths[table.steps[rule][step][0]] + 1
            keep = [ph for ph in self.slots[key] if ph.max_start is None or ph.max_start >= earliest]
            if keep:
                self.slots[key] = keep
            else:
                del self.slots[key]

    def _add(self, ph: PartialHit):
        lst = self.slots.setdefault((ph.rule_id, ph.next_step), [])
        for old in lst:
            # an older unbounded window admits everything a newer one would
            if old.max_start is None and old.min_start <= ph.min_start:
                return
            if (old.min_start, old.max_start) == (ph.min_start, ph.max_start):
                return
        lst.append(ph)


def reset_flow(pht: PartialHitTable) -> None:
    pht.slots.clear()
    pht.reported.clear()
    pht.last_end = -1


def _window(gap: Gap, end: int) -> Tuple[int, Optional[int]]:
    return end + 1 + gap.min_gap, None if gap.max_gap is None else end + 1 + gap.max_gap


def on_match(table: RuleTable, pht: PartialHitTable, ev: MatchEvent) -> List[RuleHit]:
    if ev.end < pht.last_end:
        raise OutOfOrderEvent(f"event ending at {ev.end} after one ending at {pht.last_end}")
    if ev.end > pht.last_end:
        pht._prune(table, ev.end)
        pht.last_end = ev.end
    out: List[RuleHit] = []
    created: List[PartialHit] = []

    def advance(rule: int, step: int, history: Tuple[MatchEvent, ...]):
        steps = table.steps[rule]
        if step + 1 == len(steps):
            if (rule, ev.end) not in pht.reported:
                pht.reported.add((rule, ev.end))
                out.append(RuleHit(rule, ev.end, history, ev.lane))
            return
        lo, hi = _window(steps[step + 1][1], ev.end)
        created.append(PartialHit(rule, step + 1, lo, hi, ev.end, history))

    for rule, step in table.by_subpattern.get(ev.sub_pattern_id, ()):
        if step == 0:
            advance(rule, 0, (ev,))
            continue
        for ph in pht.slots.get((rule, step), ()):
            if ph.admits(ev.start):
                advance(rule, step, ph.events + (ev,))
    for ph in created:
        pht._add(ph)
    return out


def process_events(table: RuleTable, events: Iterable[MatchEvent]) -> List[RuleHit]:
    """Run a whole event log through Phase-3, one table per lane."""
    by_lane: Dict[int, List[MatchEvent]] = {}
    for e in events:
        by_lane.setdefault(e.lane, []).append(e)
    hits: List[RuleHit] = []
    for lane in sorted(by_lane):
        pht = PartialHitTable()
        for e in sorted(by_lane[lane], key=lambda e: (e.end, e.sub_pattern_id, e.start)):
            hits.extend(on_match(table, pht, e))
    hits.sort(key=lambda h: (h.lane, h.end, h.rule_id))
    return hits


def rule_hits_csv(hits: Iterable[RuleHit]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rule_id", "end_offset"])
    for h in hits:
        w.writerow([h.rule_id, h.end])
    return buf.getvalue()
