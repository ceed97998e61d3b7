"""Synthetic rulesets and traffic with a controlled hit rate.

Real signature sets share prefixes heavily (many rules start with the same
protocol keyword), which is what keeps the Phase-1 tries small.  Prefixes
are therefore drawn from a Chinese-restaurant-process tree: at every node
a new branch opens with probability ``alpha / (visits + alpha)``, otherwise
an existing branch is followed in proportion to its use.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .compiler import CompileError, HwConfig, compile_ruleset
from .oracle import Occurrence, oracle_match
from .rules import Gap, Pattern, Rule, RuleError, RuleSet, Step, TrafficSpec, make_ruleset

ALPHA_ROOT = 4.0
ALPHA_INNER = 1.2
RETRY_SCALE = 0.8
DESK_SEED = 7
DESK_SIZE = 240
DESK_LEN = (8, 24)


class GenerationError(RuleError):
    pass


def _byte(rnd: random.Random) -> int:
    # mostly printable, like rule contents, with some binary
    return rnd.randrange(0x20, 0x7F) if rnd.random() < 0.8 else rnd.randrange(256)


@dataclass
class _Node:
    visits: int = 0
    kids: Dict[int, "_Node"] = field(default_factory=dict)
    counts: Dict[int, int] = field(default_factory=dict)


class PrefixSampler:
    def __init__(self, rnd: random.Random, alpha_root: float, alpha_inner: float):
        self.rnd = rnd
        self.root = _Node()
        self.alpha_root = alpha_root
        self.alpha_inner = alpha_inner

    def draw(self, length: int) -> Tuple[int, ...]:
        node, out = self.root, []
        for d in range(length):
            alpha = self.alpha_root if d == 0 else self.alpha_inner
            if not node.kids or self.rnd.random() < alpha / (node.visits + alpha):
                c = _byte(self.rnd)
            else:
                keys = sorted(node.kids)
                c = self.rnd.choices(keys, weights=[node.counts[k] for k in keys])[0]
            node.visits += 1
            node.counts[c] = node.counts.get(c, 0) + 1
            node = node.kids.setdefault(c, _Node())
            out.append(c)
        return tuple(out)


def max_pattern_len(cfg: HwConfig, chain_limit: int = 2) -> int:
    return cfg.depth + cfg.slots * chain_limit


def _one_attempt(rnd: random.Random, n: int, len_range, wildcard_frac, multi_rule_frac,
                 cfg: HwConfig, scale: float) -> RuleSet:
    D, chunk = cfg.depth, cfg.depth + cfg.slots
    sampler = PrefixSampler(rnd, ALPHA_ROOT * scale, ALPHA_INNER * scale)
    seen = set()
    pats: List[Pattern] = []
    tries = 0
    while len(pats) < n:
        tries += 1
        if tries > 200 * n:
            raise GenerationError(f"could not draw {n} distinct patterns")
        L = rnd.randint(*len_range)
        seq: List[Optional[int]] = []
        prefix_pos = set()
        for off in range(0, L, chunk):
            k = min(D, L - off)
            seq.extend(sampler.draw(k))
            prefix_pos.update(range(off, off + k))
            seq.extend(_byte(rnd) for _ in range(min(chunk, L - off) - k))
        free = [i for i in range(L) if i not in prefix_pos]
        if free and rnd.random() < wildcard_frac:
            for i in rnd.sample(free, min(len(free), rnd.randint(1, 3))):
                seq[i] = None
        t = tuple(seq)
        if t in seen:
            continue
        seen.add(t)
        pats.append(Pattern(len(pats), t))

    rules: List[Rule] = []
    i = 0
    while i < n:
        k = rnd.randint(2, 3) if rnd.random() < multi_rule_frac else 1
        k = min(k, n - i)
        steps = [Step(pats[i].id)]
        for p in pats[i + 1:i + k]:
            lo = rnd.randrange(8)
            hi = None if rnd.random() < 0.25 else lo + rnd.randrange(32)
            steps.append(Step(p.id, Gap(lo, hi)))
        rules.append(Rule(len(rules) + 1, tuple(steps)))
        i += k
    return make_ruleset(pats, rules)


def gen_ruleset(seed: int, n_patterns: int, len_range: Tuple[int, int] = (4, 24),
                wildcard_frac: float = 0.1, multi_rule_frac: float = 0.2,
                capacity: Optional[HwConfig] = None, chain_limit: int = 2,
                max_attempts: int = 8, allow_trim: bool = False) -> RuleSet:
    """Random ruleset that compiles under ``capacity``.

    ``wildcard_frac`` is the share of patterns holding wildcard bytes (one
    to three, never inside a chunk prefix).  Consecutive patterns are
    grouped into 2-3 step rules with probability ``multi_rule_frac``.
    Failed compiles are retried with more prefix sharing; with
    ``allow_trim`` the last attempt is cut down rule by rule instead of
    failing.
    """
    cfg = capacity or HwConfig()
    lo, hi = len_range
    if n_patterns < 1 or not 1 <= lo <= hi:
        raise GenerationError(f"bad parameters n={n_patterns} len_range={len_range}")
    if hi > max_pattern_len(cfg, chain_limit):
        raise GenerationError(
            f"max length {hi} exceeds D+W*chain_limit = {max_pattern_len(cfg, chain_limit)}")
    if not (0 <= wildcard_frac <= 1 and 0 <= multi_rule_frac <= 1):
        raise GenerationError("fractions must lie in [0, 1]")
    rnd = random.Random(seed)
    last_err: Exception | None = None
    rs = None
    for attempt in range(max_attempts):
        rs = _one_attempt(rnd, n_patterns, len_range, wildcard_frac, multi_rule_frac, cfg,
                          RETRY_SCALE ** attempt)
        try:
            compile_ruleset(rs, cfg)
            return rs
        except CompileError as e:
            last_err = e
    if allow_trim and rs is not None:
        rules = list(rs.rules)
        while len(rules) > 1:
            rules.pop()
            cand = make_ruleset(rs.patterns.values(), rules)
            try:
                compile_ruleset(cand, cfg)
                return cand
            except CompileError:
                pass
    raise GenerationError(f"ruleset does not fit after {max_attempts} attempts: {last_err}")


def desk_ruleset(cfg: Optional[HwConfig] = None) -> RuleSet:
    """The 240-pattern stand-in used for the memory and energy studies."""
    return gen_ruleset(DESK_SEED, DESK_SIZE, DESK_LEN, 0.1, 0.2, cfg)


# ------------------------------------------------------------ traffic


def _instance(rnd: random.Random, rs: RuleSet, rule: Rule):
    """Bytes of one rule instance: list of (pattern_id, bytes, wildcard offsets) and gaps."""
    parts = []
    for i, st in enumerate(rule.steps):
        gap = 0
        if i:
            g = st.gap
            span = 4 if g.max_gap is None else min(4, g.max_gap - g.min_gap)
            gap = g.min_gap + rnd.randint(0, span)
        seq = rs.patterns[st.pattern_id].bytes
        body = bytes(rnd.randrange(256) if b is None else b for b in seq)
        wild = [j for j, b in enumerate(seq) if b is None]
        parts.append((gap, st.pattern_id, body, wild))
    return parts


def covered_fraction(occ: Sequence[Occurrence], length: int) -> float:
    if length == 0:
        return 0.0
    mask = np.zeros(length, dtype=bool)
    for o in occ:
        mask[o.start:o.end + 1] = True
    return float(mask.mean())


def gen_traffic(spec: TrafficSpec, rs: RuleSet,
                max_repairs: int = 1000) -> Tuple[bytes, List[Occurrence]]:
    """Random stream with rule instances covering ``hit_rate`` of its bytes.

    Filler bytes are uniform.  A repair loop then rescans the stream and
    rewrites one filler (or wildcard-fill) byte of every occurrence that
    was not inserted.  An occurrence made only of inserted literal bytes
    cannot be repaired and is added to the truth list instead, so the truth
    list always equals the full brute-force scan.
    """
    rnd = random.Random(spec.seed)
    nprng = np.random.default_rng(spec.seed)
    n = spec.length
    target = round(spec.hit_rate * n)
    tol = 0.02 * n
    if target and not rs.rules:
        raise GenerationError("hit_rate > 0 needs a non-empty ruleset")

    instances = []
    covered = footprint = 0
    rules = list(rs.rules)
    shortest = min((rs.patterns[r.steps[0].pattern_id] for r in rules), key=len, default=None)
    misses = 0
    while target and covered < target and misses < 200:
        rule = rnd.choice(rules)
        inst = _instance(rnd, rs, rule)
        if covered + sum(len(p[2]) for p in inst) > target + tol / 2 or \
                footprint + sum(g + len(b) for g, _, b, _ in inst) > n:
            single = [r for r in rules if len(r.steps) == 1]
            inst = _instance(rnd, rs, rnd.choice(single)) if single and misses % 2 else None
            if inst is None or covered + len(inst[0][2]) > target + tol / 2 or \
                    footprint + len(inst[0][2]) > n:
                misses += 1
                continue
        instances.append(inst)
        covered += sum(len(p[2]) for p in inst)
        footprint += sum(g + len(b) for g, _, b, _ in inst)
    if target and abs(covered - target) > tol:
        short = len(shortest) if shortest else 0
        raise GenerationError(
            f"hit rate {spec.hit_rate} unreachable in {n} bytes (shortest pattern {short})")

    filler = nprng.multinomial(n - footprint, [1 / (len(instances) + 1)] * (len(instances) + 1))
    buf = bytearray(nprng.integers(0, 256, size=n, dtype=np.uint8).tobytes())
    mutable = np.ones(n, dtype=bool)
    truth: List[Occurrence] = []
    pos = int(filler[0])
    for k, inst in enumerate(instances):
        for gap, pid, body, wild in inst:
            pos += gap
            buf[pos:pos + len(body)] = body
            mutable[pos:pos + len(body)] = False
            for j in wild:
                mutable[pos + j] = True
            truth.append(Occurrence(pid, pos, pos + len(body) - 1))
            pos += len(body)
        pos += int(filler[k + 1])

    truth_set = set(truth)
    literal = {p.id: [j for j, b in enumerate(p.bytes) if b is not None] for p in rs.patterns.values()}
    pats = rs.pattern_list()
    for _ in range(max_repairs):
        extra = [o for o in oracle_match(pats, buf) if o not in truth_set]
        fixed = False
        for o in extra:
            spots = [o.start + j for j in literal[o.pattern_id] if mutable[o.start + j]]
            if not spots:
                truth_set.add(o)
                continue
            i = rnd.choice(spots)
            buf[i] = (buf[i] + rnd.randrange(1, 256)) % 256
            fixed = True
        if not fixed:
            break
    else:
        raise GenerationError(f"accidental occurrences remain after {max_repairs} repair passes")
    truth = sorted(truth_set, key=lambda o: (o.end, o.pattern_id, o.start))
    return bytes(buf), truth
