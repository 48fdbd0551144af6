"""TREC-style evaluation: MRR@K, NDCG@K, Recall@K over run files and qrels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping


@dataclass(frozen=True)
class Qrels:
    """Relevance judgments: (query_id, doc_id) -> integer grade >= 0."""

    judgments: Mapping[tuple[str, str], int]

    def __post_init__(self):
        for (qid, did), grade in self.judgments.items():
            if grade < 0:
                raise ValueError(f"negative grade for ({qid}, {did})")

    def relevant_docs(self, qid: str) -> dict[str, int]:
        return {
            did: g for (q, did), g in self.judgments.items() if q == qid and g >= 1
        }


@dataclass
class RunFile:
    """Per query: ranked (doc_id, score) list, scores non-increasing."""

    rankings: dict[str, list[tuple[str, float]]] = field(default_factory=dict)

    def __post_init__(self):
        for qid, ranking in self.rankings.items():
            scores = [s for _, s in ranking]
            if any(a < b for a, b in zip(scores, scores[1:])):
                raise ValueError(f"query {qid!r}: scores increase down the ranking")
            docs = [d for d, _ in ranking]
            if len(set(docs)) != len(docs):
                raise ValueError(f"query {qid!r}: duplicate doc_id in ranking")


def _scoreable_queries(run: RunFile, qrels: Qrels) -> list[str]:
    qids = [qid for qid in run.rankings if qrels.relevant_docs(qid)]
    if not qids:
        raise ValueError("no queries with judged-relevant documents")
    return qids


def mrr_at_k(run: RunFile, qrels: Qrels, k: int) -> float:
    """Mean reciprocal rank of the first relevant doc within the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    total = 0.0
    qids = _scoreable_queries(run, qrels)
    for qid in qids:
        relevant = qrels.relevant_docs(qid)
        for rank, (did, _) in enumerate(run.rankings[qid][:k], start=1):
            if did in relevant:
                total += 1.0 / rank
                break
    return total / len(qids)


def ndcg_at_k(run: RunFile, qrels: Qrels, k: int) -> float:
    """NDCG with gain 2^grade - 1 and log2(rank + 1) discount (trec_eval convention)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    total = 0.0
    count = 0
    for qid in run.rankings:
        relevant = qrels.relevant_docs(qid)
        ideal_grades = sorted(relevant.values(), reverse=True)[:k]
        ideal = sum((2**g - 1) / math.log2(r + 1) for r, g in enumerate(ideal_grades, start=1))
        if ideal == 0.0:
            continue
        dcg = sum(
            (2 ** relevant.get(did, 0) - 1) / math.log2(rank + 1)
            for rank, (did, _) in enumerate(run.rankings[qid][:k], start=1)
        )
        total += dcg / ideal
        count += 1
    if count == 0:
        raise ValueError("no queries with judged-relevant documents")
    return total / count


def recall_at_k(run: RunFile, qrels: Qrels, k: int) -> float:
    """Mean fraction of judged-relevant docs retrieved within the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    total = 0.0
    qids = _scoreable_queries(run, qrels)
    for qid in qids:
        relevant = qrels.relevant_docs(qid)
        retrieved = {did for did, _ in run.rankings[qid][:k]}
        total += len(relevant.keys() & retrieved) / len(relevant)
    return total / len(qids)


# ---------------------------------------------------------------------------
# TREC text formats
# ---------------------------------------------------------------------------


def write_run(run: RunFile, path: str | Path, tag: str = "lsrkit") -> None:
    """Run line format: `qid Q0 docid rank score tag`, space-separated."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for qid in run.rankings:
            for rank, (did, score) in enumerate(run.rankings[qid], start=1):
                f.write(f"{qid} Q0 {did} {rank} {score:.6g} {tag}\n")


def read_run(path: str | Path) -> RunFile:
    rankings: dict[str, list[tuple[str, float]]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            qid, _, did, rank_s, score_s, _tag = parts
            try:
                rank, score = int(rank_s), float(score_s)
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: bad rank or score") from e
            ranking = rankings.setdefault(qid, [])
            if rank != len(ranking) + 1:
                raise ValueError(
                    f"{path}:{lineno}: rank {rank} is not contiguous for query {qid!r}"
                )
            ranking.append((did, score))
    return RunFile(rankings=rankings)


def write_qrels(qrels: Qrels, path: str | Path) -> None:
    """Qrels line format: `qid 0 docid grade`."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for (qid, did), grade in qrels.judgments.items():
            f.write(f"{qid} 0 {did} {grade}\n")


def read_qrels(path: str | Path) -> Qrels:
    judgments: dict[tuple[str, str], int] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            qid, _, did, grade_s = parts
            try:
                judgments[(qid, did)] = int(grade_s)
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: bad grade") from e
    return Qrels(judgments=judgments)
