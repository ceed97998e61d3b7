"""Ruleset compiler: prefix/suffix split, pipelined trie, table packing.

A pattern is cut into sub-patterns of at most ``D + W`` bytes.  The first
``D`` bytes of each sub-pattern (the prefix) go into a forward-only trie
that is laid out one depth per pipeline stage; the remaining bytes (the
suffix) become one wide Phase-2 row.  Longer patterns become chains of
sub-patterns that must occur back to back; the chain is re-assembled by
the rule-completion stage.

Every trie state's children are packed into contiguous rows of a single
PE so the parent only needs a ``(PE, DN, UP)`` range to enable them.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .fixed1s import CODE_BITS, Codebook, WideRow, build_codebook, encode_suffix
from .rules import Pattern, RuleSet, WildByte


class CompileError(ValueError):
    pass


class WildcardPrefixError(CompileError):
    def __init__(self, pattern_id: int, position: int, depth: int):
        super().__init__(
            f"pattern {pattern_id}: wildcard at byte {position} lies in a prefix "
            f"region (prefixes are the first {depth} bytes of each chunk and must be literal)"
        )
        self.pattern_id = pattern_id
        self.position = position


class CapacityError(CompileError):
    pass


def _bits(n: int) -> int:
    return max(1, math.ceil(math.log2(n))) if n > 1 else 1


@dataclass(frozen=True)
class HwConfig:
    depth: int = 4          # D: Phase-1 pipeline stages, stage 1 is the SRAM table
    n_pes: int = 8
    pe_rows: int = 64
    n_banks: int = 4
    bank_rows: int = 64
    slots: int = 20         # W: characters per Phase-2 row
    stages: Optional[Tuple[Tuple[int, Tuple[int, ...]], ...]] = None
    spid_bits: int = 10

    def __post_init__(self):
        if self.depth < 2:
            raise CompileError("depth must be at least 2")
        if min(self.n_pes, self.pe_rows, self.n_banks, self.bank_rows, self.slots) < 1:
            raise CompileError("array dimensions must be positive")
        if self.stages is not None:
            self._check_stages()

    def _check_stages(self):
        seen: set[int] = set()
        for stage, pes in self.stages:
            if not 2 <= stage <= self.depth:
                raise CompileError(f"stage {stage} outside 2..{self.depth}")
            for p in pes:
                if not 0 <= p < self.n_pes:
                    raise CompileError(f"stage {stage}: PE {p} does not exist")
                if p in seen:
                    raise CompileError(f"PE {p} assigned to more than one stage")
                seen.add(p)
        missing = set(range(2, self.depth + 1)) - {s for s, pes in self.stages if pes}
        if missing:
            raise CompileError(f"stages {sorted(missing)} have no PE")

    def pes_for_stage(self, stage: int) -> Tuple[int, ...]:
        for s, pes in self.stages or ():
            if s == stage:
                return pes
        return ()

    def stage_of_pe(self, pe: int) -> Optional[int]:
        for s, pes in self.stages or ():
            if pe in pes:
                return s
        return None

    @property
    def range_bits(self) -> int:
        """SRAM width of a next-range entry (stage 1 and PE rows)."""
        target = _bits(max(self.n_pes, self.n_banks))
        row = _bits(max(self.pe_rows, self.bank_rows))
        return 2 + target + 2 * row + self.spid_bits

    @property
    def phase2_sram_bits(self) -> int:
        return self.spid_bits + _bits(self.slots + 1)

    @property
    def row_bits(self) -> int:
        return self.slots * CODE_BITS


def parse_stages(spec: str) -> Tuple[Tuple[int, Tuple[int, ...]], ...]:
    """Parse ``"2:0-2,3:3-5,4:6-7"`` into a stage assignment."""
    out = []
    for part in filter(None, (p.strip() for p in spec.split(","))):
        stage, _, pes = part.partition(":")
        ids: List[int] = []
        for chunk in pes.split("+"):
            lo, _, hi = chunk.partition("-")
            ids.extend(range(int(lo), int(hi or lo) + 1))
        out.append((int(stage), tuple(ids)))
    return tuple(sorted(out))


@dataclass(frozen=True)
class SubPattern:
    id: int
    pattern_id: int
    chain_index: int
    prefix: Tuple[int, ...]
    suffix: Tuple[WildByte, ...]

    @property
    def total_len(self) -> int:
        return len(self.prefix) + len(self.suffix)

    @property
    def bytes(self) -> Tuple[WildByte, ...]:
        return self.prefix + self.suffix


# pattern id -> sub-pattern ids, in chain order; consecutive elements are adjacent
ChainPlan = Dict[int, Tuple[int, ...]]


def split_patterns(rs: RuleSet, cfg: HwConfig) -> Tuple[List[SubPattern], ChainPlan]:
    D, W = cfg.depth, cfg.slots
    chunk = D + W
    subs: List[SubPattern] = []
    by_bytes: Dict[Tuple[WildByte, ...], int] = {}
    plan: ChainPlan = {}
    for p in rs.pattern_list():
        ids = []
        for ci, off in enumerate(range(0, len(p.bytes), chunk)):
            part = p.bytes[off:off + chunk]
            head = part[:D]
            if all(b is None for b in head):
                raise CompileError(f"pattern {p.id}: chain element {ci} has an all-wildcard prefix")
            for j, b in enumerate(head):
                if b is None:
                    raise WildcardPrefixError(p.id, off + j, D)
            if part not in by_bytes:
                by_bytes[part] = len(subs)
                subs.append(SubPattern(len(subs), p.id, ci, tuple(head), tuple(part[D:])))
            ids.append(by_bytes[part])
        plan[p.id] = tuple(ids)
    return subs, plan


@dataclass(frozen=True)
class TrieState:
    id: int
    depth: int
    parent: int
    char: int


@dataclass
class Trie:
    states: List[TrieState]                    # index 0 is the root
    transitions: Dict[Tuple[int, int], int]
    terminal: Dict[int, int] = field(default_factory=dict)       # state -> sub-pattern id
    suffixes: Dict[int, List[int]] = field(default_factory=dict)  # depth-D state -> sub-pattern ids
    depth: int = 0

    def children(self, state: int) -> List[int]:
        return self._kids.get(state, [])

    def __post_init__(self):
        self._kids: Dict[int, List[int]] = {}
        for (parent, _c), child in sorted(self.transitions.items()):
            self._kids.setdefault(parent, []).append(child)


@dataclass(frozen=True)
class AcStats:
    """Transition statistics.

    ``n_backward`` counts distinct DFA edges that are neither trie edges nor
    edges back to the root (those are the implicit default).  For the
    pipelined trie it is zero by construction.
    """

    n_states: int
    n_forward: int
    n_backward: int
    per_depth: Tuple[int, ...]  # per_depth[d] = states at depth d (index 0 = root, always 1)
    skipped_wildcard: int = 0

    @property
    def n_transitions(self) -> int:
        return self.n_forward + self.n_backward


def build_trie(subs: Sequence[SubPattern], depth: int) -> Tuple[Trie, AcStats]:
    states = [TrieState(0, 0, -1, -1)]
    trans: Dict[Tuple[int, int], int] = {}
    terminal: Dict[int, int] = {}
    suffixes: Dict[int, List[int]] = {}
    for sp in subs:
        if len(sp.prefix) > depth:
            raise CompileError(f"sub-pattern {sp.id}: prefix longer than depth {depth}")
        node = 0
        for c in sp.prefix:
            nxt = trans.get((node, c))
            if nxt is None:
                nxt = len(states)
                states.append(TrieState(nxt, states[node].depth + 1, node, c))
                trans[(node, c)] = nxt
            node = nxt
        if sp.suffix:
            suffixes.setdefault(node, []).append(sp.id)
        else:
            terminal[node] = sp.id
    per_depth = [0] * (depth + 1)
    for s in states:
        per_depth[s.depth] += 1
    trie = Trie(states, trans, terminal, suffixes, depth)
    return trie, AcStats(len(states) - 1, len(trans), 0, tuple(per_depth))


def build_conventional_ac(rs: RuleSet) -> AcStats:
    """Full Aho-Corasick automaton over the literal patterns of ``rs``.

    Wildcard patterns are skipped and counted in ``skipped_wildcard``.
    """
    goto: List[Dict[int, int]] = [{}]
    depth = [0]
    skipped = 0
    for p in rs.pattern_list():
        if p.has_wildcard:
            skipped += 1
            continue
        node = 0
        for c in p.bytes:
            nxt = goto[node].get(c)
            if nxt is None:
                nxt = len(goto)
                goto.append({})
                depth.append(depth[node] + 1)
                goto[node][c] = nxt
            node = nxt

    n = len(goto)
    fail = [0] * n
    # row[s]: DFA transitions of s that do not lead to the root
    row: List[Dict[int, int]] = [dict()] * n
    row[0] = dict(goto[0])
    queue = deque()
    for child in goto[0].values():
        queue.append(child)
    n_backward = 0
    while queue:
        s = queue.popleft()
        r = dict(row[fail[s]])
        r.update(goto[s])
        row[s] = r
        n_backward += len(r) - len(goto[s])
        for c, child in goto[s].items():
            f = fail[s]
            while f and c not in goto[f]:
                f = fail[f]
            fail[child] = goto[f][c] if s and c in goto[f] else 0
            queue.append(child)

    max_d = max(depth)
    per_depth = [0] * (max_d + 1)
    for d in depth:
        per_depth[d] += 1
    return AcStats(n - 1, n - 1, n_backward, tuple(per_depth), skipped)


class Kind(enum.Enum):
    TO_PE = "pe"
    TO_PHASE2 = "phase2"
    TERMINAL = "terminal"


@dataclass(frozen=True)
class NextRange:
    """SRAM payload: where the next search happens, plus an optional report.

    ``emit`` carries the sub-pattern id that ends at this state.  For
    ``TERMINAL`` entries it is the only action; for ``TO_PE`` and
    ``TO_PHASE2`` entries it is a secondary action (a pattern that is a
    prefix of another one).
    """

    kind: Kind
    target: int = -1
    dn: int = 0
    up: int = 0
    emit: Optional[int] = None

    def __post_init__(self):
        if self.kind is Kind.TERMINAL:
            if self.emit is None:
                raise CompileError("terminal entry without a sub-pattern id")
        elif self.target < 0 or not 0 <= self.dn <= self.up:
            raise CompileError(f"invalid range {self.kind.value}:{self.target} [{self.dn},{self.up}]")


@dataclass(frozen=True)
class PeRow:
    stored: int
    sram: NextRange


@dataclass(frozen=True)
class BankRow:
    stored: WideRow
    sub_pattern_id: int
    suffix_len: int


@dataclass(frozen=True)
class TableImage:
    config: HwConfig
    codebook: Codebook
    stage1: Tuple[Optional[NextRange], ...]
    pe_images: Tuple[Tuple[PeRow, ...], ...]
    phase2_banks: Tuple[Tuple[BankRow, ...], ...]
    subpatterns: Tuple[SubPattern, ...] = ()
    rules: Optional[RuleSet] = None

    @property
    def pe_rows_used(self) -> int:
        return sum(len(p) for p in self.pe_images)

    @property
    def bank_rows_used(self) -> int:
        return sum(len(b) for b in self.phase2_banks)

    def chain_plan(self) -> ChainPlan:
        if self.rules is None:
            raise CompileError("image carries no ruleset")
        return split_patterns(self.rules, self.config)[1]


def assign_stages(rows_per_depth: Mapping[int, int], cfg: HwConfig):
    """Default stage -> PE assignment.

    Every stage first gets the PEs it needs to hold its rows; the spare PEs
    are handed out in proportion to the row counts (largest remainder, ties
    to the shallower stage).  Stages get contiguous PE ids, shallow first.
    """
    stages = list(range(2, cfg.depth + 1))
    if cfg.n_pes < len(stages):
        raise CapacityError(f"{cfg.n_pes} PEs cannot cover {len(stages)} pipeline stages")
    need = {d: max(1, math.ceil(rows_per_depth.get(d, 0) / cfg.pe_rows)) for d in stages}
    spare = cfg.n_pes - sum(need.values())
    if spare < 0:
        raise CapacityError(
            f"Phase-1 needs {sum(need.values())} PEs of {cfg.pe_rows} rows, only {cfg.n_pes} exist"
        )
    total = sum(rows_per_depth.get(d, 0) for d in stages)
    count = dict(need)
    if total:
        quota = {d: spare * rows_per_depth.get(d, 0) / total for d in stages}
        for d in stages:
            count[d] += int(quota[d])
        left = cfg.n_pes - sum(count.values())
        order = sorted(stages, key=lambda d: (-(quota[d] - int(quota[d])), d))
        for d in order[:left]:
            count[d] += 1
    else:
        for i in range(spare):
            count[stages[i % len(stages)]] += 1
    out, nxt = [], 0
    for d in stages:
        out.append((d, tuple(range(nxt, nxt + count[d]))))
        nxt += count[d]
    return tuple(out)


def _first_fit_decreasing(groups: List[Tuple[int, List]], bins: Sequence[int], capacity: int,
                          what: str) -> Dict[int, Tuple[int, int]]:
    """Place each ``(key, items)`` group contiguously; returns key -> (bin, first row)."""
    fill = {b: 0 for b in bins}
    where = {}
    for key, items in sorted(groups, key=lambda g: (-len(g[1]), g[0])):
        size = len(items)
        if size > capacity:
            raise CapacityError(f"{what}: group of {size} rows exceeds {capacity}-row array")
        for b in bins:
            if fill[b] + size <= capacity:
                where[key] = (b, fill[b])
                fill[b] += size
                break
        else:
            raise CapacityError(f"{what}: no array has {size} free rows (arrays {list(bins)} full)")
    return where


def pack_tables(trie: Trie, subs: Sequence[SubPattern], cfg: HwConfig,
                book: Codebook | None = None) -> TableImage:
    D = cfg.depth
    book = book or build_codebook()
    if any(s.depth > D for s in trie.states):
        raise CompileError(f"trie deeper than {D}")
    if len(subs) > (1 << cfg.spid_bits):
        raise CapacityError(f"{len(subs)} sub-patterns exceed {cfg.spid_bits}-bit ids")
    for sp in subs:
        if len(sp.suffix) > cfg.slots:
            raise CapacityError(f"sub-pattern {sp.id}: suffix longer than {cfg.slots} slots")

    rows_per_depth: Dict[int, int] = {}
    for s in trie.states:
        rows_per_depth[s.depth] = rows_per_depth.get(s.depth, 0) + 1
    if cfg.stages is None:
        cfg = replace(cfg, stages=assign_stages(rows_per_depth, cfg))

    # Phase-1 placement: children of depth d-1 states live in stage d PEs.
    location: Dict[int, Tuple[int, int]] = {}   # state -> (pe, row)
    child_range: Dict[int, Tuple[int, int, int]] = {}  # parent -> (pe, dn, up)
    pe_rows: Dict[int, List[int]] = {p: [] for p in range(cfg.n_pes)}
    for d in range(2, D + 1):
        groups = []
        for s in trie.states:
            if s.depth == d - 1:
                kids = trie.children(s.id)
                if kids:
                    groups.append((s.id, sorted(kids, key=lambda k: trie.states[k].char)))
        bins = cfg.pes_for_stage(d)
        placed = _first_fit_decreasing(groups, bins, cfg.pe_rows, f"stage {d}")
        for parent, kids in sorted(groups, key=lambda g: placed[g[0]]):
            pe, first = placed[parent]
            assert len(pe_rows[pe]) == first
            for i, k in enumerate(kids):
                location[k] = (pe, first + i)
                pe_rows[pe].append(k)
            child_range[parent] = (pe, first, first + len(kids) - 1)

    # Phase-2 placement: one contiguous group per depth-D state.
    groups = [(s, sorted(ids)) for s, ids in trie.suffixes.items()]
    placed = _first_fit_decreasing(groups, range(cfg.n_banks), cfg.bank_rows, "Phase-2")
    bank_rows: Dict[int, List[BankRow]] = {b: [] for b in range(cfg.n_banks)}
    suffix_range: Dict[int, Tuple[int, int, int]] = {}
    for state, ids in sorted(groups, key=lambda g: placed[g[0]]):
        bank, first = placed[state]
        for sid in ids:
            sp = subs[sid]
            bank_rows[bank].append(BankRow(encode_suffix(sp.suffix, cfg.slots, book), sid, len(sp.suffix)))
        suffix_range[state] = (bank, first, first + len(ids) - 1)

    def entry(state: int) -> NextRange:
        emit = trie.terminal.get(state)
        if state in child_range:
            pe, dn, up = child_range[state]
            return NextRange(Kind.TO_PE, pe, dn, up, emit)
        if state in suffix_range:
            bank, dn, up = suffix_range[state]
            return NextRange(Kind.TO_PHASE2, bank, dn, up, emit)
        return NextRange(Kind.TERMINAL, emit=emit)

    stage1: List[Optional[NextRange]] = [None] * 256
    for c in range(256):
        s = trie.transitions.get((0, c))
        if s is not None:
            stage1[c] = entry(s)
    pes = tuple(
        tuple(PeRow(book[trie.states[k].char], entry(k)) for k in pe_rows[p]) for p in range(cfg.n_pes)
    )
    banks = tuple(tuple(bank_rows[b]) for b in range(cfg.n_banks))
    return TableImage(cfg, tuple(book), tuple(stage1), pes, banks, tuple(subs))


@dataclass(frozen=True)
class CompileResult:
    image: TableImage
    subpatterns: Tuple[SubPattern, ...]
    chain_plan: ChainPlan
    trie_stats: AcStats


def compile_ruleset(rs: RuleSet, cfg: HwConfig | None = None) -> CompileResult:
    cfg = cfg or HwConfig()
    subs, plan = split_patterns(rs, cfg)
    trie, stats = build_trie(subs, cfg.depth)
    img = pack_tables(trie, subs, cfg)
    img = replace(img, rules=rs)
    return CompileResult(img, tuple(subs), plan, stats)
