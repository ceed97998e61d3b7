import itertools

import pytest

from camnids.fixed1s import (CODE_BITS, PAD, WILDCARD, EncodingError, build_codebook, check_codebook,
                             dump_codebook, encode_suffix, encode_window, format_code, is_char_code,
                             match_port_a, match_port_b, match_wide, parse_code)

BOOK = build_codebook()


def test_first_codes():
    assert BOOK[0] == 0b00000011111 == 31
    assert (BOOK[1], BOOK[2]) == (47, 55)


def test_codebook_is_ascending_popcount5():
    # reference enumeration, independent of the implementation
    ref = [v for v in range(1 << CODE_BITS) if bin(v).count("1") == 5][:256]
    assert list(BOOK) == ref
    assert len(set(BOOK)) == 256
    check_codebook(BOOK)


def test_exhaustive_port_semantics():
    for a, b in itertools.product(range(256), repeat=2):
        eq = a == b
        assert match_port_a(BOOK[a], BOOK[b]) is eq
        assert match_port_b(BOOK[a], BOOK[b]) is eq


def test_wildcard_ports():
    assert all(match_port_a(WILDCARD, c) for c in BOOK)
    assert not any(match_port_b(WILDCARD, c) for c in BOOK)


def test_encode_suffix_padding():
    row = encode_suffix(b"cd", 20)
    assert row == (BOOK[0x63], BOOK[0x64]) + (0,) * 18
    assert encode_suffix([None], 20) == (0,) * 20
    assert encode_suffix([], 20) == (0,) * 20
    with pytest.raises(EncodingError):
        encode_suffix(b"x" * 21, 20)


def test_match_wide():
    row = encode_suffix(b"cd", 20)
    assert match_wide(row, encode_window(b"cdxyzzzzzzzzzzzzzzzzzz", 0, 20))
    assert not match_wide(row, encode_window(b"ce" + b"z" * 20, 0, 20))
    ended = (BOOK[0x63], BOOK[0x64]) + (PAD,) * 18
    assert encode_window(b"cd", 0, 20) == ended
    assert match_wide(row, ended)
    assert not match_wide(encode_suffix(b"cde", 20), ended)


def test_code_text_round_trip():
    for c in BOOK:
        assert parse_code(format_code(c)) == c
    assert format_code(31) == "0x01F"
    with pytest.raises(EncodingError):
        parse_code("0x800")
    assert is_char_code(31) and not is_char_code(0)


def test_dump_codebook():
    lines = dump_codebook().splitlines()
    assert lines[0] == "byte,code_hex"
    assert lines[1] == "0,0x01F" and len(lines) == 257
