"""Encode / index / search / eval / train / ablate pipelines behind the CLI."""

from __future__ import annotations

import json
import os
import statistics
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .config import MethodConfig, ValidationError, apply_toggle
from .core import (
    SparseVector,
    TokenizedText,
    Vocabulary,
    compute_corpus_stats,
    read_collection,
    read_vocabulary,
)
from .encoders import (
    DIFFERENTIABLE,
    NON_EXPANDING,
    EncoderKind,
    HeadParameters,
    encode_binary,
    encode_bm25_doc,
    encode_bm25_query,
    encode_cls_mlm,
    encode_mlm,
    encode_mlp,
    expand_text,
    init_head_parameters,
    read_expansion_file,
    read_head_parameters,
    toy_backbone,
    write_head_parameters,
)
from .evaluation import RunFile, mrr_at_k, ndcg_at_k, read_qrels, read_run, recall_at_k, write_run
from .index import Quantization, build_index, index_search, load_index, save_index
from .regularization import RegularizerKind, topk_prune
from .supervision import TrainResult, TrainSetup, compute_term_recall, read_triples, train_heads


def worker_threads() -> int:
    """Worker-parallelism cap from LSR_THREADS (default: available cores)."""
    value = os.environ.get("LSR_THREADS")
    if value:
        return max(1, int(value))
    return os.cpu_count() or 1


@dataclass
class Resources:
    """Loaded data shared by pipeline stages."""

    vocab: Vocabulary
    docs: list[TokenizedText]
    queries: list[TokenizedText]
    stats: "object"
    expansions: dict[str, list[int]]


def load_resources(config: MethodConfig) -> Resources:
    vocab = read_vocabulary(config.paths.vocab)
    docs = list(read_collection(config.paths.collection, vocab))
    queries = list(read_collection(config.paths.queries, vocab))
    expansions = (
        read_expansion_file(config.paths.expansions, vocab.term_to_id)
        if config.paths.expansions
        else {}
    )
    return Resources(
        vocab=vocab,
        docs=docs,
        queries=queries,
        stats=compute_corpus_stats(docs),
        expansions=expansions,
    )


def side_heads(config: MethodConfig, side: str, seed: int, vocab_size: int) -> HeadParameters:
    """Heads from the configured file when present, otherwise seeded initialization."""
    cfg = config.query if side == "query" else config.doc
    path = config.paths.query_heads if side == "query" else config.paths.doc_heads
    if path is not None and Path(path).exists():
        return read_head_parameters(path)
    if config.shared_heads:
        side_offset = 0
    else:
        side_offset = 0 if side == "query" else 1
    return init_head_parameters(
        vocab_size,
        config.backbone_dim,
        seed + side_offset,
        activation=cfg.activation,
        mlp_log_normalize=cfg.log_normalize,
        use_quality_heads=cfg.quality_heads,
    )


def encode_side(
    config: MethodConfig,
    side: str,
    texts: list[TokenizedText],
    res: Resources,
    seed: int,
    heads: HeadParameters | None = None,
) -> list[tuple[str, SparseVector]]:
    """Encode a batch of texts with the configured encoder for one side.

    Applies inference-time top-k pruning when the side's regularizer is topk,
    and audits the support constraint for non-expanding encoders.
    """
    cfg = config.query if side == "query" else config.doc
    kind = cfg.encoder
    if heads is None and kind not in (EncoderKind.BINARY, EncoderKind.BM25_QUERY, EncoderKind.BM25_DOC):
        heads = side_heads(config, side, seed, res.vocab.size)

    out: list[tuple[str, SparseVector]] = []
    for text in texts:
        expanded = text
        if kind is EncoderKind.EXP_MLP:
            expanded = expand_text(text, res.expansions)
        if kind is EncoderKind.BINARY:
            vec = encode_binary(text)
        elif kind is EncoderKind.BM25_QUERY:
            vec = encode_bm25_query(text, res.stats)
        elif kind is EncoderKind.BM25_DOC:
            vec = encode_bm25_doc(text, res.stats, config.bm25)
        else:
            emb = toy_backbone(expanded, res.vocab.size, config.backbone_dim, seed)
            if kind in (EncoderKind.MLP, EncoderKind.EXP_MLP):
                vec = encode_mlp(expanded, emb, heads)
            elif kind is EncoderKind.MLM:
                vec = encode_mlm(expanded, emb, heads)
            elif kind is EncoderKind.CLS_MLM:
                vec = encode_cls_mlm(expanded, emb, heads)
            else:
                raise ValidationError(f"unsupported encoder kind {kind.value!r}")
        if cfg.regularizer.kind is RegularizerKind.TOPK:
            vec = topk_prune(vec, cfg.regularizer.k)
        if kind in NON_EXPANDING and not set(vec.entries) <= set(expanded.token_ids):
            raise ValidationError(
                f"{config.name}: {kind.value} emitted a term outside the input for {text.doc_id!r}"
            )
        out.append((text.doc_id, vec))
    return out


def _atomic_write(path: Path, payload: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=path.name)
    with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
        f.write(payload)
    os.replace(tmp, path)


def write_vectors(
    vectors: list[tuple[str, SparseVector]], vocab: Vocabulary, path: str | Path
) -> None:
    """Encoded-vector file: one JSON object per line, {"id": ..., "vector": {term: weight}}."""
    lines = []
    for vid, vec in vectors:
        terms = {vocab.terms[t]: vec.entries[t] for t in sorted(vec.entries)}
        lines.append(json.dumps({"id": vid, "vector": terms}))
    _atomic_write(Path(path), "".join(line + "\n" for line in lines))


def read_vectors(path: str | Path, vocab: Vocabulary) -> list[tuple[str, SparseVector]]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                vec = SparseVector(
                    {vocab.term_to_id[t]: float(w) for t, w in rec["vector"].items()}
                )
                out.append((rec["id"], vec))
            except (KeyError, ValueError) as e:
                raise ValidationError(f"{path}:{lineno}: bad vector record ({e})") from e
    return out


def run_encode(config: MethodConfig, side: str, input_path: Path, output_path: Path, seed: int) -> dict:
    res = load_resources(config)
    texts = list(read_collection(input_path, res.vocab))
    vectors = encode_side(config, side, texts, res, seed)
    write_vectors(vectors, res.vocab, output_path)
    nnz = [v.nnz for _, v in vectors]
    return {"count": len(vectors), "mean_nnz": statistics.fmean(nnz) if nnz else 0.0}


def run_index(config: MethodConfig, vectors_path: Path, out_dir: Path) -> dict:
    vocab = read_vocabulary(config.paths.vocab)
    vectors = read_vectors(vectors_path, vocab)
    index = build_index(vectors, config.quantization)
    save_index(index, out_dir)
    meta = {"vocab": str(config.paths.vocab), "num_docs": len(index.doc_table)}
    _atomic_write(Path(out_dir) / "meta.json", json.dumps(meta))
    return {
        "num_docs": len(index.doc_table),
        "total_postings": index.total_postings,
        "bytes_estimate": index.bytes_estimate,
    }


def run_search(config: MethodConfig, index_dir: Path, query_vectors_path: Path, run_path: Path) -> dict:
    vocab = read_vocabulary(config.paths.vocab)
    meta_path = Path(index_dir) / "meta.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if meta.get("vocab") != str(config.paths.vocab):
            raise ValidationError(
                f"index was built with vocab {meta.get('vocab')!r}, config uses {str(config.paths.vocab)!r}"
            )
    index = load_index(index_dir)
    queries = read_vectors(query_vectors_path, vocab)
    rankings: dict[str, list[tuple[str, float]]] = {}
    total_ops = 0
    nnz = []
    for qid, qvec in queries:
        ranked, ops = index_search(index, qvec, config.top_k)
        total_ops += ops
        nnz.append(qvec.nnz)
        if ranked:
            rankings[qid] = ranked
    run = RunFile(rankings=rankings)
    write_run(run, run_path, tag=config.name)
    return {
        "queries": len(queries),
        "ops_count": total_ops,
        "mean_query_nnz": statistics.fmean(nnz) if nnz else 0.0,
        "max_query_nnz": max(nnz, default=0),
    }


def run_eval(run_path: Path, qrels_path: Path, ks: dict[str, int] | None = None) -> dict:
    ks = ks or {"mrr": 10, "ndcg": 10, "recall": 1000}
    run = read_run(run_path)
    qrels = read_qrels(qrels_path)
    return {
        f"mrr@{ks['mrr']}": mrr_at_k(run, qrels, ks["mrr"]),
        f"ndcg@{ks['ndcg']}": ndcg_at_k(run, qrels, ks["ndcg"]),
        f"recall@{ks['recall']}": recall_at_k(run, qrels, ks["recall"]),
    }


def run_train(
    config: MethodConfig,
    seed: int,
    query_heads_out: Path | None = None,
    doc_heads_out: Path | None = None,
    train_query: bool = True,
    train_doc: bool = True,
    query_heads_init: HeadParameters | None = None,
    doc_heads_init: HeadParameters | None = None,
) -> TrainResult:
    """Train the configured heads on the configured triples file."""
    if config.paths.triples is None:
        raise ValidationError(f"{config.name}: training requires paths.triples")
    res = load_resources(config)
    queries = {q.doc_id: q for q in res.queries}
    doc_map = {}
    for d in res.docs:
        expanded = expand_text(d, res.expansions) if config.doc.encoder is EncoderKind.EXP_MLP else d
        doc_map[d.doc_id] = expanded
    triples = read_triples(config.paths.triples, queries, doc_map)

    term_labels = None
    if config.supervision.loss == "term_mse":
        relevant: dict[str, list[TokenizedText]] = {}
        for t in triples:
            relevant.setdefault(t.positive.doc_id, []).append(t.query)
        term_labels = compute_term_recall(relevant)

    train_query = train_query and config.query.encoder in DIFFERENTIABLE
    train_doc = train_doc and config.doc.encoder in DIFFERENTIABLE
    setup = TrainSetup(
        query_encoder=config.query.encoder,
        doc_encoder=config.doc.encoder,
        shared_heads=config.shared_heads,
        loss_kind=config.supervision.loss,
        query_reg=config.query.regularizer,
        doc_reg=config.doc.regularizer,
        steps=config.supervision.steps,
        lr=config.supervision.lr,
        seed=seed,
        query_heads=query_heads_init or side_heads(config, "query", seed, res.vocab.size),
        doc_heads=doc_heads_init or side_heads(config, "doc", seed, res.vocab.size),
        train_query=train_query,
        train_doc=train_doc,
        activation=config.doc.activation,
        mlp_log_normalize=config.doc.log_normalize,
    )
    result = train_heads(
        setup,
        triples,
        embed=lambda text: toy_backbone(text, res.vocab.size, config.backbone_dim, seed),
        vocab_size=res.vocab.size,
        dim=config.backbone_dim,
        term_labels=term_labels,
    )
    if query_heads_out:
        write_head_parameters(result.query_heads, query_heads_out)
    if doc_heads_out:
        write_head_parameters(result.doc_heads, doc_heads_out)
    return result


@dataclass
class PipelineReport:
    name: str
    metrics: dict[str, float]
    mean_query_nnz: float
    mean_doc_nnz: float
    ops_count: int


def run_pipeline(
    config: MethodConfig,
    workdir: Path,
    seed: int,
    train: bool = False,
    query_heads: HeadParameters | None = None,
    doc_heads: HeadParameters | None = None,
    recall_k: int = 1000,
) -> PipelineReport:
    """encode -> index -> search -> eval on the configured data, in one call."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    res = load_resources(config)

    if train and query_heads is None and doc_heads is None:
        result = run_train(config, seed)
        query_heads, doc_heads = result.query_heads, result.doc_heads

    doc_vectors = encode_side(config, "doc", res.docs, res, seed, heads=doc_heads)
    query_vectors = encode_side(config, "query", res.queries, res, seed, heads=query_heads)
    write_vectors(doc_vectors, res.vocab, workdir / "docs.jsonl")
    write_vectors(query_vectors, res.vocab, workdir / "queries.jsonl")

    index = build_index(doc_vectors, config.quantization)
    rankings: dict[str, list[tuple[str, float]]] = {}
    total_ops = 0
    for qid, qvec in query_vectors:
        ranked, ops = index_search(index, qvec, config.top_k)
        total_ops += ops
        if ranked:
            rankings[qid] = ranked
    run = RunFile(rankings=rankings)
    run_path = workdir / "run.trec"
    write_run(run, run_path, tag=config.name)

    metrics: dict[str, float] = {}
    if config.paths.qrels:
        qrels = read_qrels(config.paths.qrels)
        metrics = {
            "mrr@10": mrr_at_k(run, qrels, 10),
            "ndcg@10": ndcg_at_k(run, qrels, 10),
            f"recall@{recall_k}": recall_at_k(run, qrels, recall_k),
        }
    d_nnz = [v.nnz for _, v in doc_vectors]
    q_nnz = [v.nnz for _, v in query_vectors]
    return PipelineReport(
        name=config.name,
        metrics=metrics,
        mean_query_nnz=statistics.fmean(q_nnz) if q_nnz else 0.0,
        mean_doc_nnz=statistics.fmean(d_nnz) if d_nnz else 0.0,
        ops_count=total_ops,
    )


def _changed_side(config: MethodConfig, variant: MethodConfig) -> str | None:
    if config.query.encoder != variant.query.encoder:
        return "query"
    if config.doc.encoder != variant.doc.encoder:
        return "doc"
    return None


def run_ablation(
    config: MethodConfig,
    toggles: list[str],
    workdir: Path,
    seed: int,
    train: bool = False,
    recall_k: int = 1000,
) -> list[PipelineReport]:
    """Controlled single-change comparison: base row plus one row per toggle.

    With training enabled, an encoder-kind toggle retrains only the changed
    side and keeps the other side's trained heads fixed, so metric deltas are
    attributable to that single change.
    """
    workdir = Path(workdir)
    base_q = base_d = None
    if train:
        base_result = run_train(config, seed)
        base_q, base_d = base_result.query_heads, base_result.doc_heads
    reports = [
        run_pipeline(
            config, workdir / "base", seed,
            query_heads=base_q, doc_heads=base_d, recall_k=recall_k,
        )
    ]
    for i, toggle in enumerate(toggles):
        variant = apply_toggle(config, toggle)
        vq, vd = None, None
        if train:
            side = _changed_side(config, variant)
            if side == "query":
                if variant.query.encoder in DIFFERENTIABLE:
                    result = run_train(variant, seed, train_doc=False, doc_heads_init=base_d)
                    vq = result.query_heads
                vd = base_d
            elif side == "doc":
                if variant.doc.encoder in DIFFERENTIABLE:
                    result = run_train(variant, seed, train_query=False, query_heads_init=base_q)
                    vd = result.doc_heads
                vq = base_q
            else:
                result = run_train(variant, seed)
                vq, vd = result.query_heads, result.doc_heads
        reports.append(
            run_pipeline(
                variant, workdir / f"variant_{i}", seed,
                query_heads=vq, doc_heads=vd, recall_k=recall_k,
            )
        )
    return reports


def format_report(reports: list[PipelineReport]) -> str:
    """Aligned plain-text table: metrics, nnz, and ops_count per config."""
    metric_keys: list[str] = []
    for r in reports:
        for key in r.metrics:
            if key not in metric_keys:
                metric_keys.append(key)
    header = ["config"] + metric_keys + ["q_nnz", "d_nnz", "ops_count"]
    rows = [header]
    for r in reports:
        rows.append(
            [r.name]
            + [f"{r.metrics.get(k, float('nan')):.4f}" for k in metric_keys]
            + [f"{r.mean_query_nnz:.1f}", f"{r.mean_doc_nnz:.1f}", str(r.ops_count)]
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    return "\n".join(
        "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows
    )


def report_json(reports: list[PipelineReport]) -> str:
    return json.dumps(
        [
            {
                "name": r.name,
                "metrics": r.metrics,
                "mean_query_nnz": r.mean_query_nnz,
                "mean_doc_nnz": r.mean_doc_nnz,
                "ops_count": r.ops_count,
            }
            for r in reports
        ],
        indent=2,
    )
