"""Impact inverted index: build, term-at-a-time search, and an exhaustive oracle.

Quantization is max-scaled linear with half-up rounding.  Search counts
multiply-accumulate operations (ops_count), the engine's deterministic
latency proxy.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .core import SparseVector


@dataclass(frozen=True)
class Quantization:
    """`exact` stores float impacts; otherwise impacts are integers in [1, 2^bits - 1]."""

    mode: str = "exact"  # exact | bits
    bits: int = 8

    def __post_init__(self):
        if self.mode not in ("exact", "bits"):
            raise ValueError(f"unknown quantization mode {self.mode!r}")
        if self.mode == "bits" and not 1 <= self.bits <= 16:
            raise ValueError("bits must be in 1..16")


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


@dataclass
class ImpactIndex:
    postings: dict[int, list[tuple[int, float]]]  # term id -> [(doc ordinal, impact)]
    doc_table: list[str]  # ordinal -> doc_id
    quantization: Quantization
    scale: float  # corpus max weight; 0 for an empty index
    total_postings: int = 0
    bytes_estimate: int = 0

    def impact_to_weight(self, impact: float) -> float:
        if self.quantization.mode == "exact":
            return impact
        return impact * self.scale / (2**self.quantization.bits - 1)


def build_index(
    vectors: Iterable[tuple[str, SparseVector]], quantization: Quantization = Quantization()
) -> ImpactIndex:
    """Transcribe (doc, term, weight) nonzeros into impact-ordered posting lists.

    Quantized impact = round_half_up(w * (2^bits - 1) / max_w); impacts that
    quantize to 0 are dropped.
    """
    doc_table: list[str] = []
    seen: set[str] = set()
    raw: list[tuple[str, SparseVector]] = []
    max_w = 0.0
    for doc_id, vec in vectors:
        if doc_id in seen:
            raise ValueError(f"duplicate doc_id {doc_id!r}")
        seen.add(doc_id)
        for w in vec.entries.values():
            if w <= 0:
                raise ValueError(f"non-positive weight in document {doc_id!r}")
            max_w = max(max_w, w)
        raw.append((doc_id, vec))

    postings: dict[int, list[tuple[int, float]]] = {}
    total = 0
    for ordinal, (doc_id, vec) in enumerate(raw):
        doc_table.append(doc_id)
        for t in sorted(vec.entries):
            w = vec.entries[t]
            if quantization.mode == "bits":
                impact = float(_round_half_up(w * (2**quantization.bits - 1) / max_w))
                if impact == 0.0:
                    continue
            else:
                impact = w
            postings.setdefault(t, []).append((ordinal, impact))
            total += 1

    index = ImpactIndex(
        postings=postings,
        doc_table=doc_table,
        quantization=quantization,
        scale=max_w,
        total_postings=total,
    )
    index.bytes_estimate = _estimate_bytes(index)
    return index


def _estimate_bytes(index: ImpactIndex) -> int:
    per_impact = 8 if index.quantization.mode == "exact" else max(1, index.quantization.bits // 8 + 1)
    return sum(len(pl) * (4 + per_impact) for pl in index.postings.values())


def _ranked(scored: dict[str, float], k: int) -> list[tuple[str, float]]:
    """Top-k by score descending, ties broken by doc_id lexicographic ascending."""
    order = sorted(scored.items(), key=lambda it: (-it[1], it[0]))
    return order[:k]


def exhaustive_search(
    q: SparseVector, vectors: list[tuple[str, SparseVector]], k: int
) -> list[tuple[str, float]]:
    """Oracle: exact dot product against every document; zero scores excluded."""
    scored = {}
    for doc_id, vec in vectors:
        s = q.dot(vec)
        if s != 0.0:
            scored[doc_id] = s
    return _ranked(scored, k)


def index_search(
    index: ImpactIndex, q: SparseVector, k: int
) -> tuple[list[tuple[str, float]], int]:
    """Term-at-a-time accumulation over posting lists.

    ops_count is the number of multiply-accumulate operations, i.e. the sum of
    posting-list lengths across query terms present in the index.
    """
    acc: dict[int, float] = {}
    ops = 0
    for t in sorted(q.entries):
        wq = q.entries[t]
        for ordinal, impact in index.postings.get(t, ()):
            acc[ordinal] = acc.get(ordinal, 0.0) + wq * index.impact_to_weight(impact)
            ops += 1
    scored = {index.doc_table[o]: s for o, s in acc.items() if s != 0.0}
    return _ranked(scored, k), ops


# ---------------------------------------------------------------------------
# On-disk layout: header.json + postings.bin (delta-encoded varint ordinals)
# ---------------------------------------------------------------------------


def _write_varint(out: bytearray, value: int) -> None:
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    value = 0
    shift = 0
    while True:
        byte = buf[pos]
        pos += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, pos
        shift += 7


def save_index(index: ImpactIndex, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = {
        "format": "lsrkit-impact-index-v1",
        "quantization": {"mode": index.quantization.mode, "bits": index.quantization.bits},
        "scale": index.scale,
        "doc_table": index.doc_table,
        "num_terms": len(index.postings),
        "total_postings": index.total_postings,
    }
    with open(directory / "header.json", "w", encoding="utf-8") as f:
        json.dump(header, f)
    blob = bytearray()
    exact = index.quantization.mode == "exact"
    for t in sorted(index.postings):
        pl = index.postings[t]
        _write_varint(blob, t)
        _write_varint(blob, len(pl))
        prev = 0
        for ordinal, impact in pl:
            _write_varint(blob, ordinal - prev)
            prev = ordinal
            if exact:
                blob.extend(struct.pack("<d", impact))
            else:
                _write_varint(blob, int(impact))
    with open(directory / "postings.bin", "wb") as f:
        f.write(bytes(blob))


def load_index(directory: str | Path) -> ImpactIndex:
    directory = Path(directory)
    with open(directory / "header.json", encoding="utf-8") as f:
        header = json.load(f)
    if header.get("format") != "lsrkit-impact-index-v1":
        raise ValueError(f"unrecognized index format in {directory}")
    quant = Quantization(**header["quantization"])
    blob = Path(directory / "postings.bin").read_bytes()
    postings: dict[int, list[tuple[int, float]]] = {}
    pos = 0
    exact = quant.mode == "exact"
    while pos < len(blob):
        t, pos = _read_varint(blob, pos)
        length, pos = _read_varint(blob, pos)
        pl = []
        ordinal = 0
        for i in range(length):
            delta, pos = _read_varint(blob, pos)
            ordinal += delta
            if exact:
                (impact,) = struct.unpack_from("<d", blob, pos)
                pos += 8
            else:
                iv, pos = _read_varint(blob, pos)
                impact = float(iv)
            pl.append((ordinal, impact))
        postings[t] = pl
    index = ImpactIndex(
        postings=postings,
        doc_table=list(header["doc_table"]),
        quantization=quant,
        scale=float(header["scale"]),
        total_postings=int(header["total_postings"]),
    )
    index.bytes_estimate = _estimate_bytes(index)
    return index
