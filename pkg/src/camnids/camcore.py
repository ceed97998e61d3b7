"""Functional CAM/SRAM arrays with activity accounting.

Row enables are plain ``int`` bitmasks (bit ``i`` = row ``i``).  Searches
return an :class:`Activity` record instead of touching shared counters.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, List, Sequence, Tuple

from .fixed1s import CODE_BITS, is_stored_code, match_port_a, match_port_b, match_wide

SEGMENT_ROWS = 8


class Port(enum.IntEnum):
    A = 0
    B = 1


class ArrayError(ValueError):
    pass


@dataclass(frozen=True)
class EnableRange:
    dn: int
    up: int


@dataclass(frozen=True)
class Activity:
    enabled_rows: int = 0
    searched_bits: int = 0
    l1_segments: int = 0
    sram_bits_read: int = 0
    searches: int = 0
    port: Port = Port.A

    def __add__(self, other: "Activity") -> "Activity":
        return Activity(
            self.enabled_rows + other.enabled_rows,
            self.searched_bits + other.searched_bits,
            self.l1_segments + other.l1_segments,
            self.sram_bits_read + other.sram_bits_read,
            self.searches + other.searches,
            self.port,
        )


@dataclass(frozen=True)
class CamArray:
    rows: Tuple[Any, ...]     # int code words, or W-tuples for wide arrays
    capacity: int
    slot_count: int = 1

    def __post_init__(self):
        if len(self.rows) > self.capacity:
            raise ArrayError(f"{len(self.rows)} rows exceed capacity {self.capacity}")
        for r in self.rows:
            words = (r,) if self.slot_count == 1 else r
            if len(words) != self.slot_count or not all(is_stored_code(w) for w in words):
                raise ArrayError(f"invalid stored word {r!r}")

    @property
    def row_count(self) -> int:
        return len(self.rows)


def l1_segments(dn: int, up: int) -> int:
    """Level-1 decoder segments (groups of eight rows) touched by ``[dn, up]``."""
    return -(-(up + 1) // SEGMENT_ROWS) - dn // SEGMENT_ROWS


def decode_range(r: EnableRange, row_count: int) -> Tuple[int, Activity]:
    if not 0 <= r.dn <= r.up < row_count:
        raise ArrayError(f"range [{r.dn},{r.up}] invalid for {row_count} rows")
    mask = ((1 << (r.up - r.dn + 1)) - 1) << r.dn
    return mask, Activity(enabled_rows=r.up - r.dn + 1, l1_segments=l1_segments(r.dn, r.up))


def _rows_of(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def cam_search(arr: CamArray, mask: int, search, port: Port = Port.A) -> Tuple[List[int], Activity]:
    """Search the enabled rows; rows outside ``mask`` are gated and cost nothing."""
    if port is Port.B and arr.slot_count != 1:
        raise ArrayError("wide (Phase-2) arrays are single-port")
    if mask >> arr.row_count:
        raise ArrayError("mask enables rows beyond the array")
    if arr.slot_count == 1:
        fn = match_port_a if port is Port.A else match_port_b
        hits = [i for i in _rows_of(mask) if fn(arr.rows[i], search)]
    else:
        hits = [i for i in _rows_of(mask) if match_wide(arr.rows[i], search)]
    enabled = bin(mask).count("1")
    act = Activity(enabled_rows=enabled, searched_bits=enabled * arr.slot_count * CODE_BITS,
                   searches=1, port=port)
    return hits, act


def sram_read(payloads: Sequence[Any], row: int, width: int) -> Tuple[Any, Activity]:
    if not 0 <= row < len(payloads) or payloads[row] is None:
        raise ArrayError(f"SRAM row {row} is not programmed")
    return payloads[row], Activity(sram_bits_read=width)
