"""Rule model, rule-file grammar and canonical printing.

A rule file holds one rule per line::

    # comment
    rule 1 = "abc"
    rule 2 = "a\\x00\\?b"
    rule 3 = "ab" -> [2,10] "cd" -> [0,*] "ef"

Inside a pattern, ``\\xHH`` is a hex byte, ``\\?`` a wildcard byte and
``\\\\`` / ``\\"`` escape the backslash and quote.  Every other ASCII
character stands for itself.

Pattern bytes are represented as ``int`` (literal byte) or ``None``
(wildcard).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Tuple

ANY = None
WildByte = Optional[int]


class RuleError(ValueError):
    """Structural problem in a ruleset."""


class RuleSyntaxError(RuleError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {msg}")
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Pattern:
    id: int
    bytes: Tuple[WildByte, ...]

    def __post_init__(self):
        if not self.bytes:
            raise RuleError(f"pattern {self.id} is empty")
        for b in self.bytes:
            if b is not None and not 0 <= b <= 255:
                raise RuleError(f"pattern {self.id}: byte {b!r} out of range")

    def __len__(self) -> int:
        return len(self.bytes)

    @property
    def has_wildcard(self) -> bool:
        return any(b is None for b in self.bytes)


@dataclass(frozen=True)
class Gap:
    min_gap: int = 0
    max_gap: Optional[int] = None  # None = unbounded

    def __post_init__(self):
        if self.min_gap < 0 or (self.max_gap is not None and self.max_gap < self.min_gap):
            raise RuleError(f"invalid gap [{self.min_gap},{self.max_gap}]")

    def allows(self, gap: int) -> bool:
        return self.min_gap <= gap and (self.max_gap is None or gap <= self.max_gap)


FIRST_STEP = Gap(0, None)


@dataclass(frozen=True)
class Step:
    pattern_id: int
    gap: Gap = FIRST_STEP


@dataclass(frozen=True)
class Rule:
    id: int
    steps: Tuple[Step, ...]

    def __post_init__(self):
        if not self.steps:
            raise RuleError(f"rule {self.id} has no steps")


@dataclass(frozen=True)
class RuleSet:
    patterns: Mapping[int, Pattern] = field(default_factory=dict)
    rules: Tuple[Rule, ...] = ()

    def __post_init__(self):
        seen = {}
        for pid, p in self.patterns.items():
            if pid != p.id:
                raise RuleError(f"pattern table key {pid} != pattern id {p.id}")
            if p.bytes in seen:
                raise RuleError(f"patterns {seen[p.bytes]} and {pid} have identical bytes")
            seen[p.bytes] = pid
        ids = set()
        for r in self.rules:
            if r.id in ids:
                raise RuleError(f"duplicate rule id {r.id}")
            ids.add(r.id)
            for s in r.steps:
                if s.pattern_id not in self.patterns:
                    raise RuleError(f"rule {r.id} references unknown pattern {s.pattern_id}")

    def pattern_list(self) -> list[Pattern]:
        return [self.patterns[k] for k in sorted(self.patterns)]

    @property
    def pattern_bytes(self) -> int:
        """Total bytes over all (deduplicated) patterns."""
        return sum(len(p) for p in self.patterns.values())


@dataclass(frozen=True)
class TrafficSpec:
    length: int
    hit_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.hit_rate <= 1.0:
            raise RuleError(f"hit_rate {self.hit_rate} outside [0,1]")
        if self.length < 0:
            raise RuleError("traffic length must be non-negative")


# ---------------------------------------------------------------- parsing


class _Scanner:
    def __init__(self, line: str, lineno: int):
        self.s = line
        self.i = 0
        self.lineno = lineno

    def error(self, msg: str, at: Optional[int] = None):
        raise RuleSyntaxError(msg, self.lineno, (self.i if at is None else at) + 1)

    def skip_ws(self):
        while self.i < len(self.s) and self.s[self.i] in " \t\r":
            self.i += 1
        if self.i < len(self.s) and self.s[self.i] == "#":
            self.i = len(self.s)

    def at_end(self) -> bool:
        self.skip_ws()
        return self.i >= len(self.s)

    def expect(self, tok: str):
        self.skip_ws()
        if not self.s.startswith(tok, self.i):
            found = self.s[self.i:self.i + len(tok)] or "end of line"
            self.error(f"expected {tok!r}, found {found!r}")
        self.i += len(tok)

    def peek(self, tok: str) -> bool:
        self.skip_ws()
        return self.s.startswith(tok, self.i)

    def number(self) -> int:
        self.skip_ws()
        j = self.i
        while j < len(self.s) and self.s[j].isdigit():
            j += 1
        if j == self.i:
            self.error("expected a decimal number")
        v = int(self.s[self.i:j])
        self.i = j
        return v

    def pattern(self) -> Tuple[WildByte, ...]:
        self.skip_ws()
        start = self.i
        if not self.peek('"'):
            self.error("expected a double-quoted pattern")
        self.i += 1
        out: list[WildByte] = []
        while True:
            if self.i >= len(self.s):
                self.error("unterminated string", at=start)
            c = self.s[self.i]
            if c == '"':
                self.i += 1
                break
            if c == "\\":
                nxt = self.s[self.i + 1:self.i + 2]
                if nxt == "x":
                    hx = self.s[self.i + 2:self.i + 4]
                    if len(hx) != 2 or any(h not in "0123456789abcdefABCDEF" for h in hx):
                        self.error("\\x needs two hex digits")
                    out.append(int(hx, 16))
                    self.i += 4
                elif nxt == "?":
                    out.append(ANY)
                    self.i += 2
                elif nxt in ('\\', '"'):
                    out.append(ord(nxt))
                    self.i += 2
                elif nxt == "":
                    self.error("unterminated string", at=start)
                else:
                    self.error(f"unknown escape \\{nxt}")
                continue
            if ord(c) > 127:
                self.error(f"non-ASCII character {c!r} (use \\xHH)")
            out.append(ord(c))
            self.i += 1
        if not out:
            self.error("empty pattern", at=start)
        return tuple(out)


def parse_rules(text: str) -> RuleSet:
    """Parse rule-file text into a normalized :class:`RuleSet`."""
    patterns: dict[Tuple[WildByte, ...], int] = {}
    rules: list[Rule] = []
    rule_ids: set[int] = set()

    def intern(seq):
        if seq not in patterns:
            patterns[seq] = len(patterns)
        return patterns[seq]

    for lineno, line in enumerate(text.splitlines(), 1):
        sc = _Scanner(line, lineno)
        if sc.at_end():
            continue
        sc.expect("rule")
        col = sc.i
        rid = sc.number()
        if rid in rule_ids:
            raise RuleSyntaxError(f"duplicate rule id {rid}", lineno, col + 2)
        rule_ids.add(rid)
        sc.expect("=")
        steps = [Step(intern(sc.pattern()))]
        while not sc.at_end():
            sc.expect("->")
            sc.expect("[")
            lo = sc.number()
            sc.expect(",")
            if sc.peek("*"):
                sc.expect("*")
                hi = None
            else:
                hi = sc.number()
            sc.expect("]")
            if hi is not None and hi < lo:
                sc.error(f"gap max {hi} < min {lo}")
            steps.append(Step(intern(sc.pattern()), Gap(lo, hi)))
        rules.append(Rule(rid, tuple(steps)))

    table = {pid: Pattern(pid, seq) for seq, pid in patterns.items()}
    return RuleSet(table, tuple(rules))


def _quote(seq: Sequence[WildByte]) -> str:
    parts = []
    for b in seq:
        if b is None:
            parts.append("\\?")
        elif b in (0x22, 0x5C):
            parts.append("\\" + chr(b))
        elif 0x20 <= b <= 0x7E:
            parts.append(chr(b))
        else:
            parts.append(f"\\x{b:02x}")
    return '"' + "".join(parts) + '"'


def format_rules(rs: RuleSet) -> str:
    """Print a ruleset in the canonical grammar (parse-able by :func:`parse_rules`)."""
    lines = []
    for r in rs.rules:
        out = [f"rule {r.id} = {_quote(rs.patterns[r.steps[0].pattern_id].bytes)}"]
        for s in r.steps[1:]:
            hi = "*" if s.gap.max_gap is None else str(s.gap.max_gap)
            out.append(f"-> [{s.gap.min_gap},{hi}] {_quote(rs.patterns[s.pattern_id].bytes)}")
        lines.append(" ".join(out))
    return "\n".join(lines) + ("\n" if lines else "")


def normalize_ruleset(rs: RuleSet) -> RuleSet:
    """Canonical form: identical byte sequences share one pattern, ids follow
    first appearance in the rules, unreferenced patterns are dropped.

    This is the form :func:`parse_rules` produces, so printing and
    re-parsing a normalized ruleset gives it back unchanged.
    """
    return make_ruleset(rs.patterns.values(), rs.rules)


def make_ruleset(patterns: Iterable[Pattern], rules: Iterable[Rule]) -> RuleSet:
    """Build a normalized RuleSet from possibly duplicated patterns."""
    by_id: dict[int, Tuple[WildByte, ...]] = {}
    for p in patterns:
        if p.id in by_id:
            raise RuleError(f"duplicate pattern id {p.id}")
        by_id[p.id] = p.bytes
    new_id: dict[Tuple[WildByte, ...], int] = {}
    new_rules = []
    for r in rules:
        steps = []
        for i, s in enumerate(r.steps):
            if s.pattern_id not in by_id:
                raise RuleError(f"rule {r.id} references unknown pattern {s.pattern_id}")
            seq = by_id[s.pattern_id]
            steps.append(Step(new_id.setdefault(seq, len(new_id)), s.gap if i else FIRST_STEP))
        new_rules.append(Rule(r.id, tuple(steps)))
    table = {pid: Pattern(pid, seq) for seq, pid in new_id.items()}
    return RuleSet(table, tuple(new_rules))
