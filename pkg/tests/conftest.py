import os
import random

import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from camnids.compiler import HwConfig, compile_ruleset
from camnids.generate import desk_ruleset
from camnids.rules import Gap, Pattern, Rule, Step, make_ruleset

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

SMALL_HW = HwConfig(depth=3, n_pes=6, pe_rows=32, n_banks=4, bank_rows=32, slots=5)


@pytest.fixture(scope="session")
def desk():
    rs = desk_ruleset()
    return rs, compile_ruleset(rs)


def random_ruleset(rnd: random.Random, cfg: HwConfig, n_max=8, alphabet=b"abc", max_len=None,
                   wild=0.3, multi=0.3):
    """Small ruleset over a tiny alphabet, so occurrences overlap a lot."""
    D, chunk = cfg.depth, cfg.depth + cfg.slots
    max_len = max_len or chunk * 2
    seqs = set()
    n = rnd.randint(1, n_max)
    while len(seqs) < n:
        L = rnd.randint(1, max_len)
        seq = [rnd.choice(alphabet) for _ in range(L)]
        free = [i for i in range(L) if i % chunk >= D]
        if free and rnd.random() < wild:
            seq[rnd.choice(free)] = None
        seqs.add(tuple(seq))
    pats = [Pattern(i, s) for i, s in enumerate(sorted(seqs, key=lambda s: [(-1 if b is None else b) for b in s]))]
    rules, i = [], 0
    while i < len(pats):
        k = min(rnd.randint(2, 3) if rnd.random() < multi else 1, len(pats) - i)
        steps = [Step(pats[i].id)]
        for p in pats[i + 1:i + k]:
            lo = rnd.randrange(4)
            steps.append(Step(p.id, Gap(lo, None if rnd.random() < 0.3 else lo + rnd.randrange(6))))
        rules.append(Rule(len(rules) + 1, tuple(steps)))
        i += k
    return make_ruleset(pats, rules)


@st.composite
def small_cases(draw, cfg=SMALL_HW, max_stream=80):
    """(ruleset, stream) drawn through a seed so shrinking stays cheap."""
    seed = draw(st.integers(0, 2**32 - 1))
    rnd = random.Random(seed)
    rs = random_ruleset(rnd, cfg)
    n = draw(st.integers(0, max_stream))
    stream = bytes(rnd.choice(b"abc") for _ in range(n))
    return rs, stream


# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
