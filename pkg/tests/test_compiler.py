from collections import deque

import pytest
from hypothesis import given

from camnids.compiler import (CapacityError, CompileError, HwConfig, Kind, WildcardPrefixError,
                              assign_stages, build_conventional_ac, build_trie, compile_ruleset,
                              parse_stages, split_patterns)
from camnids.fixed1s import build_codebook, encode_suffix
from camnids.rules import parse_rules

from conftest import SMALL_HW, small_cases

BOOK = build_codebook()


def rules_of(*pats):
    return parse_rules("".join(f'rule {i + 1} = "{p}"\n' for i, p in enumerate(pats)))


def test_split_abcd():
    subs, plan = split_patterns(rules_of("abcd"), HwConfig(depth=2))
    assert len(subs) == 1
    assert subs[0].prefix == tuple(b"ab") and subs[0].suffix == tuple(b"cd")
    assert plan == {0: (0,)}


def test_split_short_is_terminal():
    subs, _ = split_patterns(rules_of("ab"), HwConfig(depth=4))
    assert subs[0].prefix == tuple(b"ab") and subs[0].suffix == ()


def test_split_chain_of_50():
    text = "".join(chr(0x41 + i % 26) for i in range(50))
    subs, plan = split_patterns(rules_of(text), HwConfig())
    assert [s.total_len for s in subs] == [24, 24, 2]
    assert plan[0] == (0, 1, 2)
    assert b"".join(bytes(s.bytes) for s in subs) == text.encode()


def test_wildcard_in_prefix_diagnostic():
    with pytest.raises(WildcardPrefixError, match=r"pattern 0: wildcard at byte 0"):
        split_patterns(rules_of("\\?abc"), HwConfig())
    # second chain element's prefix starts at byte 24
    with pytest.raises(WildcardPrefixError, match="byte 25"):
        split_patterns(rules_of("a" * 25 + "\\?" + "b" * 5), HwConfig())


def test_trie_he_sh_hi():
    subs, _ = split_patterns(rules_of("he", "sh", "hi"), HwConfig(depth=2))
    trie, stats = build_trie(subs, 2)
    assert stats.per_depth == (1, 2, 3)
    assert stats.n_forward == 5 and stats.n_backward == 0


def test_trie_shares_prefixes():
    subs, _ = split_patterns(rules_of("abx", "aby", "a"), HwConfig(depth=2))
    trie, stats = build_trie(subs, 2)
    assert stats.n_forward == 2


def _brute_backward(patterns):
    """Count DFA edges that are neither trie edges nor to the root, by string search."""
    nodes = {p[:i] for p in patterns for i in range(len(p) + 1)}
    alphabet = {c for p in patterns for c in p}
    n = 0
    for s in nodes:
        for c in alphabet:
            t = s + c
            while t not in nodes:
                t = t[1:]
            if t and t != s + c:
                n += 1
    return n


@pytest.mark.parametrize("pats,fwd,bwd", [
    (["he", "she", "his", "hers"], 9, 17),
    (["aa"], 2, 1),
    (["abc"], 3, 3),
])
def test_conventional_ac_reference(pats, fwd, bwd):
    st = build_conventional_ac(rules_of(*pats))
    assert st.n_forward == fwd
    assert st.n_backward == bwd == _brute_backward(pats)


def test_conventional_skips_wildcards():
    st = build_conventional_ac(rules_of("ab\\?", "cd"))
    assert st.skipped_wildcard == 1 and st.n_forward == 2


def test_pack_abcd():
    img = compile_ruleset(rules_of("abcd"), HwConfig(depth=2)).image
    e = img.stage1[ord("a")]
    assert e.kind is Kind.TO_PE and (e.dn, e.up) == (0, 0)
    assert img.config.stage_of_pe(e.target) == 2
    row = img.pe_images[e.target][0]
    assert row.stored == BOOK[ord("b")]
    assert row.sram.kind is Kind.TO_PHASE2 and (row.sram.target, row.sram.dn, row.sram.up) == (0, 0, 0)
    brow = img.phase2_banks[0][0]
    assert brow.stored == encode_suffix(b"cd", 20)
    assert (brow.sub_pattern_id, brow.suffix_len) == (0, 2)


def test_sibling_group_contiguous():
    img = compile_ruleset(rules_of("ab", "ac", "ad"), HwConfig(depth=2)).image
    e = img.stage1[ord("a")]
    assert (e.dn, e.up) == (0, 2)
    assert [r.stored for r in img.pe_images[e.target]] == [BOOK[c] for c in b"bcd"]
    assert all(r.sram.kind is Kind.TERMINAL for r in img.pe_images[e.target])


def test_prefix_of_other_pattern_emits():
    img = compile_ruleset(rules_of("ab", "abc"), HwConfig(depth=3)).image
    row = img.pe_images[img.stage1[ord("a")].target][0]
    assert row.sram.kind is Kind.TO_PE and row.sram.emit == 0


def test_capacity_error_65_children():
    pats = ["a" + chr(c) for c in range(0x21, 0x21 + 65)]
    text = "".join(f'rule {i + 1} = "{p.replace(chr(92), chr(92) * 2).replace(chr(34), chr(92) + chr(34))}"\n'
                   for i, p in enumerate(pats))
    with pytest.raises(CapacityError, match="65 rows exceeds 64"):
        compile_ruleset(parse_rules(text), HwConfig(depth=2))


def test_explicit_stages_honored():
    stages = parse_stages("2:0-2,3:3-5,4:6-7")
    assert stages == ((2, (0, 1, 2)), (3, (3, 4, 5)), (4, (6, 7)))
    img = compile_ruleset(rules_of("abcdef"), HwConfig(stages=stages)).image
    assert img.config.stages == stages


def test_bad_stages():
    with pytest.raises(CompileError):
        HwConfig(stages=((2, (0, 1)), (3, (1,)), (4, (2,))))
    with pytest.raises(CompileError):
        HwConfig(stages=((2, (0,)), (3, (1,))))


def test_assign_stages_proportional():
    cfg = HwConfig()
    st = assign_stages({2: 10, 3: 30, 4: 60}, cfg)
    counts = [len(p) for _, p in st]
    assert sum(counts) == 8 and counts == sorted(counts)
    assert [p[0] for _, p in st] == [0, counts[0], counts[0] + counts[1]]


def test_compile_deterministic(desk):
    rs, res = desk
    assert compile_ruleset(rs) == res


def _reachable_rows(img):
    """Walk every next-range from stage 1; return visited (pe,row) and bank rows."""
    seen_pe, seen_bank = set(), set()
    q = deque(e for e in img.stage1 if e is not None)
    while q:
        e = q.popleft()
        if e.kind is Kind.TO_PE:
            for r in range(e.dn, e.up + 1):
                if (e.target, r) not in seen_pe:
                    seen_pe.add((e.target, r))
                    q.append(img.pe_images[e.target][r].sram)
        elif e.kind is Kind.TO_PHASE2:
            seen_bank.update((e.target, r) for r in range(e.dn, e.up + 1))
    return seen_pe, seen_bank


@given(small_cases())
def test_every_row_reachable_exactly(case):
    rs, _ = case
    img = compile_ruleset(rs, SMALL_HW).image
    pe, bank = _reachable_rows(img)
    assert len(pe) == img.pe_rows_used
    assert len(bank) == img.bank_rows_used


def test_desk_backward_elimination(desk):
    rs, res = desk
    assert res.trie_stats.n_backward == 0
    conv = build_conventional_ac(rs)
    assert conv.n_backward > conv.n_forward
