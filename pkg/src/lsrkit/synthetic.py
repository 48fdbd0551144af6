"""Deterministic synthetic retrieval task used by the bundled configs and tests.

Documents are drawn from term "topics" so that queries (sampled from their
relevant document) are answerable by lexical matching, while topic structure
leaves room for useful expansion.
"""

from __future__ import annotations

import argparse
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    CorpusStats,
    TokenizedText,
    Vocabulary,
    build_vocabulary,
    compute_corpus_stats,
    write_collection,
    write_vocabulary,
)
from .encoders import Bm25Params, encode_bm25_doc, encode_bm25_query, score
from .evaluation import Qrels, write_qrels


@dataclass
class SyntheticTask:
    vocab: Vocabulary
    docs: list[TokenizedText]
    queries: list[TokenizedText]
    qrels: Qrels
    triples: list[dict]  # JSON-ready records
    expansions: dict[str, list[int]]
    stats: CorpusStats


def make_synthetic_task(
    num_docs: int = 400,
    num_queries: int = 60,
    vocab_size: int = 300,
    num_topics: int = 20,
    doc_len: tuple[int, int] = (8, 16),
    negatives_per_query: int = 4,
    seed: int = 7,
) -> SyntheticTask:
    rng = np.random.default_rng(seed)
    vocab = build_vocabulary(f"t{i:04d}" for i in range(vocab_size))

    topic_terms = [
        sorted(rng.choice(vocab_size, size=max(6, vocab_size // num_topics), replace=False).tolist())
        for _ in range(num_topics)
    ]
    docs: list[TokenizedText] = []
    doc_topic: list[int] = []
    for i in range(num_docs):
        topic = int(rng.integers(num_topics))
        length = int(rng.integers(doc_len[0], doc_len[1] + 1))
        n_topic = max(1, int(round(length * 0.7)))
        tokens = list(rng.choice(topic_terms[topic], size=n_topic, replace=True))
        tokens += list(rng.integers(0, vocab_size, size=length - n_topic))
        rng.shuffle(tokens)
        docs.append(TokenizedText(doc_id=f"d{i:04d}", token_ids=tuple(int(t) for t in tokens)))
        doc_topic.append(topic)

    queries: list[TokenizedText] = []
    judgments: dict[tuple[str, str], int] = {}
    triples: list[dict] = []
    stats = compute_corpus_stats(docs)
    params = Bm25Params()
    for qi in range(num_queries):
        target = docs[qi % num_docs]
        distinct = sorted(set(target.token_ids))
        n_q = min(len(distinct), int(rng.integers(2, 5)))
        q_tokens = tuple(int(t) for t in rng.choice(distinct, size=n_q, replace=False))
        query = TokenizedText(doc_id=f"q{qi:04d}", token_ids=q_tokens)
        queries.append(query)
        judgments[(query.doc_id, target.doc_id)] = 1

        neg_pool = [d for d in docs if d.doc_id != target.doc_id]
        negs = [neg_pool[int(j)] for j in rng.choice(len(neg_pool), size=negatives_per_query, replace=False)]
        qv = encode_bm25_query(query, stats)
        teacher_pos = score(qv, encode_bm25_doc(target, stats, params))
        teacher_negs = [score(qv, encode_bm25_doc(n, stats, params)) for n in negs]
        triples.append(
            {
                "q": query.doc_id,
                "pos": target.doc_id,
                "negs": [n.doc_id for n in negs],
                "teacher": {"pos": teacher_pos, "negs": teacher_negs},
            }
        )

    expansions: dict[str, list[int]] = {}
    for doc, topic in zip(docs, doc_topic):
        present = set(doc.token_ids)
        extra = [t for t in topic_terms[topic] if t not in present][:4]
        expansions[doc.doc_id] = extra

    return SyntheticTask(
        vocab=vocab,
        docs=docs,
        queries=queries,
        qrels=Qrels(judgments=judgments),
        triples=triples,
        expansions=expansions,
        stats=stats,
    )


def write_task(task: SyntheticTask, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_vocabulary(task.vocab, directory / "vocab.txt")
    write_collection(task.docs, task.vocab, directory / "collection.tsv")
    write_collection(task.queries, task.vocab, directory / "queries.tsv")
    write_qrels(task.qrels, directory / "qrels.txt")
    with open(directory / "triples.jsonl", "w", encoding="utf-8") as f:
        for rec in task.triples:
            f.write(json.dumps(rec) + "\n")
    with open(directory / "expansions.tsv", "w", encoding="utf-8") as f:
        for doc_id, terms in task.expansions.items():
            body = " ".join(task.vocab.terms[t] for t in terms)
            f.write(f"{doc_id}\t{body}\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Generate the bundled synthetic retrieval task.")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--docs", type=int, default=400)
    parser.add_argument("--queries", type=int, default=60)
    parser.add_argument("--vocab-size", type=int, default=300)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args(argv)
    task = make_synthetic_task(
        num_docs=args.docs,
        num_queries=args.queries,
        vocab_size=args.vocab_size,
        seed=args.seed,
    )
    write_task(task, args.out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
