"""JSON serialization of :class:`~camnids.compiler.TableImage`.

Layout (``"v": 1``)::

    {"v": 1,
     "config":   {"depth": 4, "n_pes": 8, ..., "stages": {"2": [0, 1], ...}},
     "codebook": ["0x01F", ...],                       # 256 words
     "stage1":   [null | NEXT, ...],                   # 256 entries, indexed by byte
     "pes":      [{"id": 0, "stage": 2, "rows": [{"cam": "0x02F", "sram": NEXT}, ...]}, ...],
     "phase2":   [{"bank": 0, "rows": [{"cam": ["0x..", ...], "sub_pattern_id": 3,
                                        "suffix_len": 2}, ...]}, ...],
     "host":     {"rules": "<rule file text>"}}         # optional

    NEXT = {"kind": "pe" | "phase2" | "terminal",
            "target": int, "dn": int, "up": int, "emit": int | null}

Code words are 11-bit hex strings.  Loading re-checks every structural
invariant, so a hand-edited file that would crash the simulator is
rejected here instead.
"""

from __future__ import annotations

import json
import os
from dataclasses import fields
from typing import Any

from .compiler import (BankRow, CompileError, HwConfig, Kind, NextRange, PeRow, TableImage,
                       split_patterns)
from .fixed1s import (EncodingError, check_codebook, format_code, is_char_code, is_stored_code,
                      parse_code)
from .rules import RuleError, format_rules, parse_rules

VERSION = 1


class ImageError(ValueError):
    pass


def _next_to_json(nr: NextRange | None):
    if nr is None:
        return None
    return {"kind": nr.kind.value, "target": nr.target, "dn": nr.dn, "up": nr.up, "emit": nr.emit}


def image_to_json(img: TableImage) -> dict:
    cfg = img.config
    conf = {f.name: getattr(cfg, f.name) for f in fields(cfg) if f.name != "stages"}
    conf["stages"] = {str(s): list(p) for s, p in cfg.stages or ()}
    doc: dict[str, Any] = {
        "v": VERSION,
        "config": conf,
        "codebook": [format_code(c) for c in img.codebook],
        "stage1": [_next_to_json(e) for e in img.stage1],
        "pes": [
            {"id": i, "stage": cfg.stage_of_pe(i),
             "rows": [{"cam": format_code(r.stored), "sram": _next_to_json(r.sram)} for r in rows]}
            for i, rows in enumerate(img.pe_images)
        ],
        "phase2": [
            {"bank": i,
             "rows": [{"cam": [format_code(w) for w in r.stored], "sub_pattern_id": r.sub_pattern_id,
                       "suffix_len": r.suffix_len} for r in rows]}
            for i, rows in enumerate(img.phase2_banks)
        ],
    }
    if img.rules is not None:
        doc["host"] = {"rules": format_rules(img.rules)}
    return doc


def dumps_image(img: TableImage) -> str:
    return json.dumps(image_to_json(img), indent=1, sort_keys=False) + "\n"


def write_image(img: TableImage, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_image(img))


def _req(d: dict, key: str, typ, where: str):
    if not isinstance(d, dict) or key not in d:
        raise ImageError(f"{where}: missing key {key!r}")
    v = d[key]
    if typ is int and (isinstance(v, bool) or not isinstance(v, int)):
        raise ImageError(f"{where}.{key}: expected integer")
    if typ is not int and not isinstance(v, typ):
        raise ImageError(f"{where}.{key}: expected {typ.__name__}")
    return v


def _next_from_json(d, where: str) -> NextRange | None:
    if d is None:
        return None
    try:
        kind = Kind(_req(d, "kind", str, where))
    except ValueError:
        raise ImageError(f"{where}: unknown kind {d.get('kind')!r}") from None
    emit = d.get("emit")
    if emit is not None and (isinstance(emit, bool) or not isinstance(emit, int)):
        raise ImageError(f"{where}.emit: expected integer or null")
    try:
        return NextRange(kind, _req(d, "target", int, where), _req(d, "dn", int, where),
                         _req(d, "up", int, where), emit)
    except CompileError as e:
        raise ImageError(f"{where}: {e}") from None


def image_from_json(doc: dict) -> TableImage:
    if not isinstance(doc, dict):
        raise ImageError("image document must be an object")
    if doc.get("v") != VERSION:
        raise ImageError(f"unsupported image version {doc.get('v')!r}")
    conf = dict(_req(doc, "config", dict, "image"))
    try:
        stages = tuple(sorted((int(k), tuple(v)) for k, v in conf.pop("stages", {}).items()))
        cfg = HwConfig(**conf, stages=stages or None)
    except (TypeError, ValueError) as e:
        raise ImageError(f"config: {e}") from None
    if cfg.stages is None:
        raise ImageError("config: stage assignment missing")

    try:
        book = tuple(parse_code(c) for c in _req(doc, "codebook", list, "image"))
        check_codebook(book)
    except (EncodingError, TypeError) as e:
        raise ImageError(f"codebook: {e}") from None

    stage1 = _req(doc, "stage1", list, "image")
    if len(stage1) != 256:
        raise ImageError(f"stage1 has {len(stage1)} entries, expected 256")
    stage1 = tuple(_next_from_json(e, f"stage1[{i}]") for i, e in enumerate(stage1))

    pes_doc = _req(doc, "pes", list, "image")
    if len(pes_doc) != cfg.n_pes:
        raise ImageError(f"{len(pes_doc)} PEs in file, config says {cfg.n_pes}")
    pes = []
    for i, pe in enumerate(pes_doc):
        rows = _req(pe, "rows", list, f"pes[{i}]")
        if len(rows) > cfg.pe_rows:
            raise ImageError(f"pes[{i}]: {len(rows)} rows exceed capacity {cfg.pe_rows}")
        out = []
        for j, r in enumerate(rows):
            where = f"pes[{i}].rows[{j}]"
            try:
                word = parse_code(_req(r, "cam", str, where))
            except EncodingError as e:
                raise ImageError(f"{where}: {e}") from None
            if not is_char_code(word):
                raise ImageError(f"{where}: {format_code(word)} is not a character code")
            sram = _next_from_json(_req(r, "sram", dict, where), where + ".sram")
            out.append(PeRow(word, sram))
        pes.append(tuple(out))

    banks_doc = _req(doc, "phase2", list, "image")
    if len(banks_doc) != cfg.n_banks:
        raise ImageError(f"{len(banks_doc)} banks in file, config says {cfg.n_banks}")
    banks = []
    for i, bank in enumerate(banks_doc):
        rows = _req(bank, "rows", list, f"phase2[{i}]")
        if len(rows) > cfg.bank_rows:
            raise ImageError(f"phase2[{i}]: {len(rows)} rows exceed capacity {cfg.bank_rows}")
        out = []
        for j, r in enumerate(rows):
            where = f"phase2[{i}].rows[{j}]"
            cam = _req(r, "cam", list, where)
            if len(cam) != cfg.slots:
                raise ImageError(f"{where}: {len(cam)} slots, expected {cfg.slots}")
            try:
                words = tuple(parse_code(w) for w in cam)
            except (EncodingError, TypeError) as e:
                raise ImageError(f"{where}: {e}") from None
            if not all(is_stored_code(w) for w in words):
                raise ImageError(f"{where}: slot is neither a character code nor a wildcard")
            n = _req(r, "suffix_len", int, where)
            if not 1 <= n <= cfg.slots:
                raise ImageError(f"{where}: suffix_len {n} outside 1..{cfg.slots}")
            out.append(BankRow(words, _req(r, "sub_pattern_id", int, where), n))
        banks.append(tuple(out))

    rules = None
    host = doc.get("host")
    if host is not None:
        try:
            rules = parse_rules(_req(host, "rules", str, "host"))
        except RuleError as e:
            raise ImageError(f"host.rules: {e}") from None
    subs = ()
    if rules is not None:
        try:
            subs = tuple(split_patterns(rules, cfg)[0])
        except CompileError as e:
            raise ImageError(f"host.rules: {e}") from None

    img = TableImage(cfg, book, stage1, tuple(pes), tuple(banks), subs, rules)
    validate_image(img)
    return img


def validate_image(img: TableImage) -> None:
    """Check that every range points at existing rows of a legal array."""
    cfg = img.config

    def check(nr: NextRange | None, where: str, stage: int):
        if nr is None:
            return
        if nr.kind is Kind.TO_PE:
            if not 0 <= nr.target < cfg.n_pes:
                raise ImageError(f"{where}: PE {nr.target} does not exist")
            if cfg.stage_of_pe(nr.target) != stage + 1:
                raise ImageError(f"{where}: PE {nr.target} is not assigned to stage {stage + 1}")
            if nr.up >= len(img.pe_images[nr.target]):
                raise ImageError(f"{where}: range [{nr.dn},{nr.up}] beyond used rows of PE {nr.target}")
        elif nr.kind is Kind.TO_PHASE2:
            if stage != cfg.depth:
                raise ImageError(f"{where}: Phase-2 range from stage {stage} (expected {cfg.depth})")
            if not 0 <= nr.target < cfg.n_banks:
                raise ImageError(f"{where}: bank {nr.target} does not exist")
            if nr.up >= len(img.phase2_banks[nr.target]):
                raise ImageError(f"{where}: range [{nr.dn},{nr.up}] beyond used rows of bank {nr.target}")
        if nr.dn > nr.up:
            raise ImageError(f"{where}: DN {nr.dn} > UP {nr.up}")

    for c, e in enumerate(img.stage1):
        check(e, f"stage1[{c}]", 1)
    for p, rows in enumerate(img.pe_images):
        stage = cfg.stage_of_pe(p)
        if rows and stage is None:
            raise ImageError(f"PE {p} holds rows but belongs to no stage")
        for j, r in enumerate(rows):
            check(r.sram, f"pes[{p}].rows[{j}]", stage)


def read_image(path: str | os.PathLike) -> TableImage:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise ImageError(f"{path}: not a valid image file ({e})") from None
    return image_from_json(doc)
