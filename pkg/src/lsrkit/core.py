"""Shared vocabulary, tokenized-text, sparse-vector and corpus-statistics types."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping


@dataclass(frozen=True)
class Vocabulary:
    """Dense term-id assignment: every id in [0, size) maps to exactly one term."""

    terms: tuple[str, ...]
    term_to_id: Mapping[str, int] = field(repr=False)

    def __post_init__(self):
        if len(self.terms) != len(self.term_to_id):
            raise ValueError("duplicate terms in vocabulary")
        for i, term in enumerate(self.terms):
            if self.term_to_id[term] != i:
                raise ValueError(f"non-dense id assignment for term {term!r}")

    @property
    def size(self) -> int:
        return len(self.terms)

    def __len__(self) -> int:
        return len(self.terms)


def build_vocabulary(tokens: Iterable[str]) -> Vocabulary:
    """Assign ids to distinct tokens in first-seen order."""
    term_to_id: dict[str, int] = {}
    for tok in tokens:
        if tok not in term_to_id:
            term_to_id[tok] = len(term_to_id)
    return Vocabulary(terms=tuple(term_to_id), term_to_id=term_to_id)


@dataclass(frozen=True)
class TokenizedText:
    """A pre-tokenized query or document: a doc id plus a sequence of term ids."""

    doc_id: str
    token_ids: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "token_ids", tuple(self.token_ids))

    def __len__(self) -> int:
        return len(self.token_ids)


class SparseVector:
    """Vocabulary-dimension vector stored as {term id: weight}; exact zeros are never stored.

    Encoder outputs are guaranteed non-negative, but the container itself
    admits signed values so that gradients can be carried in the same type.
    """

    __slots__ = ("entries",)

    def __init__(self, entries: Mapping[int, float] | None = None):
        self.entries: dict[int, float] = {
            int(t): float(w) for t, w in (entries or {}).items() if w != 0.0
        }

    def __eq__(self, other) -> bool:
        return isinstance(other, SparseVector) and self.entries == other.entries

    def __repr__(self) -> str:
        return f"SparseVector({self.entries!r})"

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def nnz(self) -> int:
        return len(self.entries)

    def get(self, term_id: int) -> float:
        return self.entries.get(term_id, 0.0)

    def dot(self, other: "SparseVector") -> float:
        """Dot product over the shared support, accumulated in ascending term-id order."""
        a, b = self.entries, other.entries
        if len(b) < len(a):
            a, b = b, a
        total = 0.0
        for t in sorted(a):
            if t in b:
                total += a[t] * b[t]
        return total

    def scale(self, c: float) -> "SparseVector":
        return SparseVector({t: c * w for t, w in self.entries.items()})

    def add(self, other: "SparseVector") -> "SparseVector":
        out = dict(self.entries)
        for t, w in other.entries.items():
            out[t] = out.get(t, 0.0) + w
        return SparseVector(out)

    def to_dense(self, size: int) -> list[float]:
        dense = [0.0] * size
        for t, w in self.entries.items():
            dense[t] = w
        return dense

    @classmethod
    def from_dense(cls, values) -> "SparseVector":
        return cls({i: float(v) for i, v in enumerate(values) if v != 0.0})


@dataclass(frozen=True)
class CorpusStats:
    """Document frequencies and length statistics over a tokenized corpus."""

    num_docs: int
    doc_freq: Mapping[int, int]
    avg_doc_len: float
    degenerate: bool  # num_docs == 0 or avg_doc_len == 0: BM25 doc weights undefined


def compute_corpus_stats(docs: list[TokenizedText]) -> CorpusStats:
    """Presence-based document frequencies and the mean document length."""
    doc_freq: dict[int, int] = {}
    total_len = 0
    for doc in docs:
        total_len += len(doc)
        for t in set(doc.token_ids):
            doc_freq[t] = doc_freq.get(t, 0) + 1
    n = len(docs)
    avgdl = total_len / n if n else 0.0
    return CorpusStats(
        num_docs=n,
        doc_freq=doc_freq,
        avg_doc_len=avgdl,
        degenerate=(n == 0 or avgdl == 0.0),
    )


def read_vocabulary(path: str | Path) -> Vocabulary:
    """Vocabulary file: one term per line, line number = id."""
    with open(path, encoding="utf-8") as f:
        terms = [line.rstrip("\n") for line in f if line != "\n"]
    return Vocabulary(terms=tuple(terms), term_to_id={t: i for i, t in enumerate(terms)})


def write_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for term in vocab.terms:
            f.write(term + "\n")


def read_collection(path: str | Path, vocab: Vocabulary) -> Iterator[TokenizedText]:
    """Collection file: `doc_id<TAB>token token token` per line, UTF-8."""
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{lineno}: missing tab separator")
            doc_id, _, body = line.partition("\t")
            try:
                ids = tuple(vocab.term_to_id[tok] for tok in body.split())
            except KeyError as e:
                raise ValueError(f"{path}:{lineno}: unknown token {e.args[0]!r}") from e
            yield TokenizedText(doc_id=doc_id, token_ids=ids)


def write_collection(docs: Iterable[TokenizedText], vocab: Vocabulary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for doc in docs:
            body = " ".join(vocab.terms[t] for t in doc.token_ids)
            f.write(f"{doc.doc_id}\t{body}\n")
