import pytest
from hypothesis import given
from hypothesis import strategies as st

from camnids.camcore import (ArrayError, CamArray, EnableRange, Port, cam_search, decode_range,
                             l1_segments, sram_read)
from camnids.fixed1s import build_codebook, encode_suffix, encode_window

BOOK = build_codebook()


@pytest.mark.parametrize("dn,up,rows,segs", [(3, 10, 8, 2), (5, 5, 1, 1), (0, 63, 64, 8), (8, 15, 8, 1)])
def test_decode_range(dn, up, rows, segs):
    mask, act = decode_range(EnableRange(dn, up), 64)
    assert bin(mask).count("1") == rows == act.enabled_rows
    assert mask >> dn & 1 and mask >> up & 1
    assert act.l1_segments == segs


def test_decode_range_invalid():
    with pytest.raises(ArrayError):
        decode_range(EnableRange(4, 3), 64)
    with pytest.raises(ArrayError):
        decode_range(EnableRange(0, 64), 64)


@given(st.integers(0, 63), st.integers(0, 63))
def test_segments_match_bruteforce(a, b):
    dn, up = min(a, b), max(a, b)
    assert l1_segments(dn, up) == len({r // 8 for r in range(dn, up + 1)})


def test_cam_search_ports_and_mask():
    arr = CamArray((BOOK[ord("b")], BOOK[ord("c")]), 64)
    hits, act = cam_search(arr, 0b11, BOOK[ord("b")], Port.A)
    assert hits == [0] and act.searched_bits == 22
    assert cam_search(arr, 0b11, BOOK[ord("b")], Port.B)[0] == [0]
    hits, act = cam_search(arr, 0b10, BOOK[ord("b")])
    assert hits == [] and act.enabled_rows == 1 and act.searched_bits == 11


def test_wide_search_single_port():
    arr = CamArray((encode_suffix(b"cd", 4),), 64, 4)
    hits, act = cam_search(arr, 1, encode_window(b"cdzz", 0, 4))
    assert hits == [0] and act.searched_bits == 44
    with pytest.raises(ArrayError):
        cam_search(arr, 1, encode_window(b"cdzz", 0, 4), Port.B)


def test_sram_read():
    val, act = sram_read([("x", 2)], 0, 15)
    assert val == ("x", 2) and act.sram_bits_read == 15
    with pytest.raises(ArrayError):
        sram_read([("x", 2)], 1, 15)


def test_capacity():
    with pytest.raises(ArrayError):
        CamArray((BOOK[0],) * 3, 2)
