"""Sparse encoders: binary, MLP, expansion-MLP, MLM, CLS-MLM, and the BM25 pair.

Every encoder is a pure function TokenizedText -> SparseVector.  Query-document
similarity is the dot product of the two encoded vectors.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .core import CorpusStats, SparseVector, TokenizedText


class EncoderKind(str, enum.Enum):
    BINARY = "binary"
    MLP = "mlp"
    EXP_MLP = "exp_mlp"
    MLM = "mlm"
    CLS_MLM = "cls_mlm"
    BM25_QUERY = "bm25_query"
    BM25_DOC = "bm25_doc"


#: Encoders whose output support is confined to the (expanded) input terms.
NON_EXPANDING = frozenset({EncoderKind.BINARY, EncoderKind.MLP, EncoderKind.EXP_MLP})
#: Encoders with trainable head parameters.
DIFFERENTIABLE = frozenset({EncoderKind.MLP, EncoderKind.EXP_MLP, EncoderKind.MLM, EncoderKind.CLS_MLM})


@dataclass(frozen=True)
class EmbeddingBundle:
    """Frozen backbone outputs consumed by the neural heads.

    ctx_embeddings: L x d contextualized token embeddings.
    cls_embedding:  d-vector for the sequence-level slot.
    input_embeddings: |V| x d vocabulary input embeddings.
    """

    ctx_embeddings: np.ndarray
    cls_embedding: np.ndarray
    input_embeddings: np.ndarray
    embedding_dim: int

    def __post_init__(self):
        d = self.embedding_dim
        if self.ctx_embeddings.ndim != 2 or self.ctx_embeddings.shape[1] != d:
            raise ValueError("ctx_embeddings must be L x d")
        if self.cls_embedding.shape != (d,):
            raise ValueError("cls_embedding must be a d-vector")
        if self.input_embeddings.ndim != 2 or self.input_embeddings.shape[1] != d:
            raise ValueError("input_embeddings must be |V| x d")


@dataclass
class HeadParameters:
    """Parameters of the linear scoring heads on top of frozen embeddings."""

    mlp_weight: np.ndarray  # (d,)
    mlp_bias: float
    mlm_bias: np.ndarray  # (|V|,)
    quality_weight: np.ndarray  # (d,), sequence-quality head input
    quality_bias: float
    importance_weight: np.ndarray  # (d,), per-token importance head input
    importance_bias: float
    activation: str = "relu"  # relu | softplus
    mlp_log_normalize: bool = True
    use_quality_heads: bool = False

    def __post_init__(self):
        if self.activation not in ("relu", "softplus"):
            raise ValueError(f"unknown activation {self.activation!r}")

    def copy(self) -> "HeadParameters":
        return replace(
            self,
            mlp_weight=self.mlp_weight.copy(),
            mlm_bias=self.mlm_bias.copy(),
            quality_weight=self.quality_weight.copy(),
            importance_weight=self.importance_weight.copy(),
        )


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 0.9
    b: float = 0.4

    def __post_init__(self):
        if self.k1 < 0 or not 0.0 <= self.b <= 1.0:
            raise ValueError("require k1 >= 0 and 0 <= b <= 1")


def softplus(x):
    """log(1 + exp(x)) with the numerically stable branch for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def activate(x, kind: str):
    if kind == "relu":
        return np.maximum(np.asarray(x, dtype=np.float64), 0.0)
    return softplus(x)


def activate_grad(x, kind: str):
    """Derivative of the activation; ReLU uses 0 at the kink."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        return (x > 0).astype(np.float64)
    return 1.0 / (1.0 + np.exp(-x))  # sigmoid


def _check_ctx(text: TokenizedText, emb: EmbeddingBundle) -> None:
    if emb.ctx_embeddings.shape[0] != len(text):
        raise ValueError(
            f"embedding rows ({emb.ctx_embeddings.shape[0]}) do not match text length ({len(text)})"
        )


def encode_binary(text: TokenizedText) -> SparseVector:
    """Presence indicator: weight 1 for each distinct input term."""
    return SparseVector({t: 1.0 for t in text.token_ids})


def _quality_scores(emb: EmbeddingBundle, head: HeadParameters):
    """Sequence quality q and per-token importance g, both softplus of a linear map."""
    q = float(softplus(emb.cls_embedding @ head.quality_weight + head.quality_bias))
    g = softplus(emb.ctx_embeddings @ head.importance_weight + head.importance_bias)
    return q, g


def encode_mlp(text: TokenizedText, emb: EmbeddingBundle, head: HeadParameters) -> SparseVector:
    """Per-token linear head; contributions summed over repeated occurrences.

    With log normalization each occurrence contributes log(act(h_j.W + b) + 1);
    without it (the uniCOIL-style variant) the activated logit is used directly.
    """
    _check_ctx(text, emb)
    if len(text) == 0:
        return SparseVector()
    z = emb.ctx_embeddings @ head.mlp_weight + head.mlp_bias
    a = activate(z, head.activation)
    contrib = np.log1p(a) if head.mlp_log_normalize else a
    out: dict[int, float] = {}
    for t, c in zip(text.token_ids, contrib):
        out[t] = out.get(t, 0.0) + float(c)
    return SparseVector(out)


def expand_text(
    text: TokenizedText,
    expansions: Mapping[str, list[int]],
    warnings: list[str] | None = None,
) -> TokenizedText:
    """Append external expansion terms, deduplicated against the original text."""
    if text.doc_id not in expansions:
        if warnings is not None:
            warnings.append(f"no expansion terms for {text.doc_id!r}")
        return text
    seen = set(text.token_ids)
    extra = []
    for t in expansions[text.doc_id]:
        if t not in seen:
            seen.add(t)
            extra.append(t)
    return TokenizedText(doc_id=text.doc_id, token_ids=text.token_ids + tuple(extra))


def encode_mlm(text: TokenizedText, emb: EmbeddingBundle, head: HeadParameters) -> SparseVector:
    """MLM head: project every token onto the full vocabulary, max-aggregate over positions.

    w_i = q(t) * log(1 + max_j act(h_j . e_i + b_i) * g(t_j)); with quality heads
    off both q and g are 1.  Output support may extend beyond the input terms.
    """
    _check_ctx(text, emb)
    if len(text) == 0:
        return SparseVector()
    logits = emb.ctx_embeddings @ emb.input_embeddings.T + head.mlm_bias  # L x |V|
    a = activate(logits, head.activation)
    if head.use_quality_heads:
        q, g = _quality_scores(emb, head)
        a = a * g[:, None]
    else:
        q = 1.0
    m = a.max(axis=0)
    w = q * np.log1p(m)
    return SparseVector.from_dense(w)


def encode_cls_mlm(text: TokenizedText, emb: EmbeddingBundle, head: HeadParameters) -> SparseVector:
    """Sequence-slot MLM head: w_i = act(h_0 . e_i + b_i), no log, no max."""
    logits = emb.cls_embedding @ emb.input_embeddings.T + head.mlm_bias
    return SparseVector.from_dense(activate(logits, head.activation))


def idf(term_id: int, stats: CorpusStats) -> float:
    """Robertson-Sparck-Jones IDF with +1 inside the log (non-negative for all df)."""
    df = stats.doc_freq.get(term_id, 0)
    return math.log(1.0 + (stats.num_docs - df + 0.5) / (df + 0.5))


def encode_bm25_query(text: TokenizedText, stats: CorpusStats) -> SparseVector:
    return SparseVector({t: idf(t, stats) for t in set(text.token_ids)})


def encode_bm25_doc(
    text: TokenizedText, stats: CorpusStats, params: Bm25Params = Bm25Params()
) -> SparseVector:
    """Saturated term frequency with document-length normalization."""
    if len(text) == 0:
        return SparseVector()
    if stats.degenerate:
        raise ValueError("degenerate corpus stats: avg_doc_len undefined")
    tf: dict[int, int] = {}
    for t in text.token_ids:
        tf[t] = tf.get(t, 0) + 1
    norm = params.k1 * (1.0 - params.b + params.b * len(text) / stats.avg_doc_len)
    return SparseVector(
        {t: f * (params.k1 + 1.0) / (f + norm) for t, f in tf.items()}
    )


def score(q: SparseVector, d: SparseVector) -> float:
    """Dot product between encoded query and document."""
    return q.dot(d)


# ---------------------------------------------------------------------------
# Deterministic toy backbone (test-scale stand-in for a transformer encoder)
# ---------------------------------------------------------------------------


def _hash_rng(*parts) -> np.random.Generator:
    digest = hashlib.blake2b(repr(parts).encode(), digest_size=16).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))


def _toy_vector(dim: int, *parts) -> np.ndarray:
    return _hash_rng(*parts).standard_normal(dim) / math.sqrt(dim)


def toy_backbone(text: TokenizedText, vocab_size: int, dim: int, seed: int) -> EmbeddingBundle:
    """Deterministic, context-sensitive embeddings.

    h_j depends on (previous token, token, next token, position parity, seed),
    so the same token gets different embeddings in different contexts.  Half of
    h_j's variance comes from the token's own input embedding e_{t_j}, mimicking
    a real backbone where h_j . e_i is largest for the input term itself.
    e_i depends on (i, seed).  h_0 is the mean of the h_j (zero for empty text).
    """
    ids = text.token_ids
    input_emb = np.vstack(
        [_toy_vector(dim, "emb", seed, i) for i in range(vocab_size)]
    ) if vocab_size else np.zeros((0, dim))
    ctx = np.zeros((len(ids), dim))
    for j, t in enumerate(ids):
        prev_t = ids[j - 1] if j > 0 else -1
        next_t = ids[j + 1] if j + 1 < len(ids) else -1
        noise = _toy_vector(dim, "ctx", seed, prev_t, t, next_t, j % 2)
        ctx[j] = (input_emb[t] + noise) / math.sqrt(2.0)
    cls = ctx.mean(axis=0) if len(ids) else np.zeros(dim)
    return EmbeddingBundle(
        ctx_embeddings=ctx,
        cls_embedding=cls,
        input_embeddings=input_emb,
        embedding_dim=dim,
    )


def init_head_parameters(
    vocab_size: int,
    dim: int,
    seed: int,
    activation: str = "relu",
    mlp_log_normalize: bool = True,
    use_quality_heads: bool = False,
) -> HeadParameters:
    """Seeded head initialization; scales chosen so roughly half the logits activate."""
    rng = _hash_rng("heads", seed, vocab_size, dim)
    return HeadParameters(
        mlp_weight=rng.standard_normal(dim),
        mlp_bias=0.0,
        mlm_bias=np.zeros(vocab_size),
        quality_weight=rng.standard_normal(dim),
        quality_bias=0.0,
        importance_weight=rng.standard_normal(dim),
        importance_bias=0.0,
        activation=activation,
        mlp_log_normalize=mlp_log_normalize,
        use_quality_heads=use_quality_heads,
    )


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def write_head_parameters(head: HeadParameters, path: str | Path) -> None:
    """Head-parameter file: one JSON record of named tensors with declared shapes."""
    record = {
        "tensors": {
            "mlp_weight": {"shape": list(head.mlp_weight.shape), "data": head.mlp_weight.tolist()},
            "mlp_bias": {"shape": [], "data": head.mlp_bias},
            "mlm_bias": {"shape": list(head.mlm_bias.shape), "data": head.mlm_bias.tolist()},
            "quality_weight": {"shape": list(head.quality_weight.shape), "data": head.quality_weight.tolist()},
            "quality_bias": {"shape": [], "data": head.quality_bias},
            "importance_weight": {"shape": list(head.importance_weight.shape), "data": head.importance_weight.tolist()},
            "importance_bias": {"shape": [], "data": head.importance_bias},
        },
        "activation": head.activation,
        "mlp_log_normalize": head.mlp_log_normalize,
        "use_quality_heads": head.use_quality_heads,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(record, f)


def read_head_parameters(path: str | Path) -> HeadParameters:
    with open(path, encoding="utf-8") as f:
        record = json.load(f)
    tensors = record["tensors"]

    def arr(name):
        t = tensors[name]
        a = np.asarray(t["data"], dtype=np.float64)
        if list(a.shape) != t["shape"]:
            raise ValueError(f"tensor {name}: shape {list(a.shape)} != declared {t['shape']}")
        return a

    return HeadParameters(
        mlp_weight=arr("mlp_weight"),
        mlp_bias=float(tensors["mlp_bias"]["data"]),
        mlm_bias=arr("mlm_bias"),
        quality_weight=arr("quality_weight"),
        quality_bias=float(tensors["quality_bias"]["data"]),
        importance_weight=arr("importance_weight"),
        importance_bias=float(tensors["importance_bias"]["data"]),
        activation=record["activation"],
        mlp_log_normalize=record["mlp_log_normalize"],
        use_quality_heads=record["use_quality_heads"],
    )


def write_embedding_file(bundles: Iterable[tuple[str, EmbeddingBundle]], path: str | Path) -> None:
    """One record per document: doc_id, L, d, row-major h matrix, optional h_0."""
    with open(path, "w", encoding="utf-8") as f:
        for doc_id, emb in bundles:
            rec = {
                "doc_id": doc_id,
                "L": int(emb.ctx_embeddings.shape[0]),
                "d": emb.embedding_dim,
                "h": emb.ctx_embeddings.ravel().tolist(),
                "h0": emb.cls_embedding.tolist(),
            }
            f.write(json.dumps(rec) + "\n")


def read_embedding_file(
    path: str | Path, input_embeddings: np.ndarray
) -> Iterator[tuple[str, EmbeddingBundle]]:
    """Read externally dumped contextualized embeddings; h_0 defaults to the row mean."""
    with open(path, encoding="utf-8") as f:
        for line in f:
            rec = json.loads(line)
            L, d = rec["L"], rec["d"]
            ctx = np.asarray(rec["h"], dtype=np.float64).reshape(L, d)
            if "h0" in rec and rec["h0"] is not None:
                cls = np.asarray(rec["h0"], dtype=np.float64)
            else:
                cls = ctx.mean(axis=0) if L else np.zeros(d)
            yield rec["doc_id"], EmbeddingBundle(
                ctx_embeddings=ctx,
                cls_embedding=cls,
                input_embeddings=input_embeddings,
                embedding_dim=d,
            )


def read_expansion_file(path: str | Path, term_to_id: Mapping[str, int]) -> dict[str, list[int]]:
    """Expansion-terms file: `doc_id<TAB>term term term` per line."""
    out: dict[str, list[int]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            doc_id, _, body = line.partition("\t")
            try:
                out[doc_id] = [term_to_id[tok] for tok in body.split()]
            except KeyError as e:
                raise ValueError(f"{path}:{lineno}: unknown token {e.args[0]!r}") from e
    return out
