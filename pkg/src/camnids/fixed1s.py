"""Fixed-1s character code and CAM cell match semantics.

Every byte maps to an 11-bit word with exactly five ones.  Because all
character codes have the same weight, two distinct codes always differ in
a position where the stored word holds a 1 and the search word a 0, so a
single search line per cell is enough to detect any mismatch.  A stored
all-zero word never discharges the match line on port A and therefore acts
as a wildcard.

Bit 0 (least significant) is cell 0.
"""

from __future__ import annotations

import csv
import io
from functools import lru_cache
from itertools import combinations
from typing import Iterable, Sequence, Tuple

CODE_BITS = 11
CODE_WEIGHT = 5
CODE_MASK = (1 << CODE_BITS) - 1
WILDCARD = 0
PAD = 0  # search word driven for window slots past the end of the stream

Codebook = Tuple[int, ...]
WideRow = Tuple[int, ...]


class EncodingError(ValueError):
    pass


@lru_cache(maxsize=None)
def build_codebook() -> Codebook:
    """Byte ``b`` maps to the b-th popcount-5 value in ascending order."""
    words = sorted(
        sum(1 << i for i in bits) for bits in combinations(range(CODE_BITS), CODE_WEIGHT)
    )
    return tuple(words[:256])


def is_char_code(word: int) -> bool:
    return 0 <= word <= CODE_MASK and bin(word).count("1") == CODE_WEIGHT


def is_stored_code(word: int) -> bool:
    return word == WILDCARD or is_char_code(word)


def check_codebook(book: Sequence[int]) -> None:
    if len(book) != 256:
        raise EncodingError(f"codebook has {len(book)} entries, expected 256")
    if len(set(book)) != 256:
        raise EncodingError("codebook is not injective")
    bad = [i for i, w in enumerate(book) if not is_char_code(w)]
    if bad:
        raise EncodingError(f"codebook entry for byte {bad[0]} is not a popcount-5 word")


def match_port_a(stored: int, search: int) -> bool:
    # mismatch = some cell stores 1 while its search line is 0
    return (stored & ~search & CODE_MASK) == 0


def match_port_b(stored: int, search: int) -> bool:
    # port B sees the complemented search word on the complement side
    return (search & ~stored & CODE_MASK) == 0


def encode_suffix(seq: Sequence[int | None], slots: int = 20,
                  book: Codebook | None = None) -> WideRow:
    if len(seq) > slots:
        raise EncodingError(f"suffix of {len(seq)} bytes does not fit {slots} slots")
    book = book or build_codebook()
    row = [WILDCARD if b is None else book[b] for b in seq]
    return tuple(row + [WILDCARD] * (slots - len(row)))


def encode_window(data: bytes | Sequence[int], start: int, slots: int = 20,
                  book: Codebook | None = None) -> WideRow:
    """Search words for ``data[start:start+slots]``, padded with :data:`PAD`."""
    book = book or build_codebook()
    end = min(len(data), start + slots)
    row = [book[data[i]] for i in range(start, end)]
    return tuple(row + [PAD] * (slots - len(row)))


def match_wide(row: Sequence[int], window: Sequence[int]) -> bool:
    if len(row) != len(window):
        raise EncodingError("row and window slot counts differ")
    return all((s & ~w & CODE_MASK) == 0 for s, w in zip(row, window))


def format_code(word: int) -> str:
    return f"0x{word:03X}"


def parse_code(text: str) -> int:
    try:
        word = int(text, 16)
    except (TypeError, ValueError):
        raise EncodingError(f"bad code word {text!r}") from None
    if not 0 <= word <= CODE_MASK:
        raise EncodingError(f"code word {text!r} exceeds {CODE_BITS} bits")
    return word


def dump_codebook(book: Iterable[int] | None = None) -> str:
    """CSV ``byte,code_hex``, one row per byte in ascending order."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["byte", "code_hex"])
    for b, code in enumerate(book or build_codebook()):
        w.writerow([b, format_code(code)])
    return buf.getvalue()
