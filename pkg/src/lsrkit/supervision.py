"""Labels, losses, and a head-only trainer over frozen backbone embeddings.

Gradients are hand-derived per encoder head (chain rule through
log/softplus/ReLU/max; max routes its gradient to the arg-max position,
ties to the lowest index) so the whole training path is checkable against
finite differences without an autodiff dependency.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .core import SparseVector, TokenizedText
from .encoders import (
    DIFFERENTIABLE,
    EmbeddingBundle,
    EncoderKind,
    HeadParameters,
    activate,
    activate_grad,
    init_head_parameters,
)
from .regularization import RegularizerConfig, RegularizerKind, topk_schedule


@dataclass(frozen=True)
class TrainingTriple:
    query: TokenizedText
    positive: TokenizedText
    negatives: tuple[TokenizedText, ...]
    teacher_scores: tuple[float, tuple[float, ...]] | None = None

    def __post_init__(self):
        if self.teacher_scores is not None:
            _, negs = self.teacher_scores
            if len(negs) != len(self.negatives):
                raise ValueError("teacher negative scores do not match negatives")


#: per doc_id: {term id: fraction of the doc's relevant queries containing the term}
TermRecallLabels = dict[str, dict[int, float]]


def compute_term_recall(
    relevant_queries: Mapping[str, list[TokenizedText]],
    warnings: list[str] | None = None,
) -> TermRecallLabels:
    labels: TermRecallLabels = {}
    for doc_id, queries in relevant_queries.items():
        if not queries:
            if warnings is not None:
                warnings.append(f"doc {doc_id!r} has no relevant queries; skipped")
            continue
        counts: dict[int, int] = {}
        for q in queries:
            for t in set(q.token_ids):
                counts[t] = counts.get(t, 0) + 1
        labels[doc_id] = {t: c / len(queries) for t, c in counts.items()}
    return labels


def term_mse_loss(
    pred: SparseVector, labels: Mapping[int, float]
) -> tuple[float, SparseVector]:
    """Mean squared error over the labeled terms only."""
    if not labels:
        raise ValueError("term_mse_loss requires a nonempty label set")
    n = len(labels)
    loss = 0.0
    grad: dict[int, float] = {}
    for t, target in labels.items():
        diff = pred.get(t) - target
        loss += diff * diff / n
        grad[t] = 2.0 * diff / n
    return loss, SparseVector(grad)


def contrastive_nll(
    q_score_pos: float, q_score_negs: list[float]
) -> tuple[float, tuple[float, list[float]]]:
    """Softmax negative log-likelihood of the positive among the candidates.

    Computed with max-shift stabilization; returns gradients wrt the positive
    score and each negative score.
    """
    if not q_score_negs:
        raise ValueError("contrastive_nll requires at least one negative")
    scores = np.asarray([q_score_pos] + list(q_score_negs), dtype=np.float64)
    shifted = scores - scores.max()
    exp = np.exp(shifted)
    probs = exp / exp.sum()
    loss = -float(shifted[0] - math.log(exp.sum()))
    grad_pos = float(probs[0] - 1.0)
    grad_negs = [float(p) for p in probs[1:]]
    return loss, (grad_pos, grad_negs)


def margin_mse_loss(
    student_margins: list[float], teacher_margins: list[float]
) -> tuple[float, list[float]]:
    """Mean squared difference of student vs teacher (positive - negative) margins."""
    if len(student_margins) != len(teacher_margins):
        raise ValueError("margin lists must have equal length")
    if not student_margins:
        raise ValueError("margin lists must be nonempty")
    n = len(student_margins)
    diffs = [s - t for s, t in zip(student_margins, teacher_margins)]
    loss = sum(d * d for d in diffs) / n
    grads = [2.0 * d / n for d in diffs]
    return loss, grads


# ---------------------------------------------------------------------------
# Dense forward/backward per encoder head
# ---------------------------------------------------------------------------


def _forward_dense(
    kind: EncoderKind, text: TokenizedText, emb: EmbeddingBundle, head: HeadParameters
) -> tuple[np.ndarray, dict]:
    """Dense |V|-vector of weights plus the cache needed for the backward pass."""
    vsize = emb.input_embeddings.shape[0]
    if kind is EncoderKind.BINARY:
        w = np.zeros(vsize)
        for t in text.token_ids:
            w[t] = 1.0
        return w, {"kind": kind, "empty": True}  # no trainable parameters
    if kind in (EncoderKind.MLP, EncoderKind.EXP_MLP):
        w = np.zeros(vsize)
        if len(text) == 0:
            return w, {"kind": kind, "empty": True}
        z = emb.ctx_embeddings @ head.mlp_weight + head.mlp_bias
        a = activate(z, head.activation)
        contrib = np.log1p(a) if head.mlp_log_normalize else a
        for t, c in zip(text.token_ids, contrib):
            w[t] += c
        return w, {"kind": kind, "text": text, "emb": emb, "z": z, "a": a, "head": head}
    if kind == EncoderKind.MLM:
        if len(text) == 0:
            return np.zeros(vsize), {"kind": kind, "empty": True}
        logits = emb.ctx_embeddings @ emb.input_embeddings.T + head.mlm_bias
        a = activate(logits, head.activation)
        if head.use_quality_heads:
            from .encoders import _quality_scores

            q, g = _quality_scores(emb, head)
            a = a * g[:, None]
        else:
            q, g = 1.0, np.ones(len(text))
        jstar = a.argmax(axis=0)  # first max wins ties
        m = a[jstar, np.arange(vsize)]
        w = q * np.log1p(m)
        zstar = logits[jstar, np.arange(vsize)]
        return w, {"kind": kind, "m": m, "zstar": zstar, "jstar": jstar, "q": q, "g": g, "head": head}
    if kind == EncoderKind.CLS_MLM:
        z = emb.cls_embedding @ emb.input_embeddings.T + head.mlm_bias
        return activate(z, head.activation), {"kind": kind, "z": z, "head": head}
    raise ValueError(f"encoder kind {kind.value!r} is not differentiable")


@dataclass
class _ParamGrads:
    mlp_weight: np.ndarray
    mlp_bias: float
    mlm_bias: np.ndarray

    @classmethod
    def zeros(cls, vocab_size: int, dim: int) -> "_ParamGrads":
        return cls(np.zeros(dim), 0.0, np.zeros(vocab_size))


def _backward_dense(cache: dict, grad_w: np.ndarray, out: _ParamGrads) -> None:
    """Accumulate head-parameter gradients given dLoss/dWeights for one text."""
    if cache.get("empty"):
        return
    kind = cache["kind"]
    head: HeadParameters = cache["head"]
    if kind in (EncoderKind.MLP, EncoderKind.EXP_MLP):
        text, emb, z, a = cache["text"], cache["emb"], cache["z"], cache["a"]
        fprime = activate_grad(z, head.activation)
        if head.mlp_log_normalize:
            fprime = fprime / (1.0 + a)
        gz = np.array([grad_w[t] for t in text.token_ids]) * fprime
        out.mlp_weight += emb.ctx_embeddings.T @ gz
        out.mlp_bias += float(gz.sum())
    elif kind == EncoderKind.MLM:
        m, zstar, jstar, q, g = cache["m"], cache["zstar"], cache["jstar"], cache["q"], cache["g"]
        gstar = np.asarray(g)[jstar]
        out.mlm_bias += grad_w * q * gstar * activate_grad(zstar, head.activation) / (1.0 + m)
    elif kind == EncoderKind.CLS_MLM:
        out.mlm_bias += grad_w * activate_grad(cache["z"], head.activation)


# ---------------------------------------------------------------------------
# Head-only trainer
# ---------------------------------------------------------------------------


@dataclass
class TrainSetup:
    query_encoder: EncoderKind
    doc_encoder: EncoderKind
    shared_heads: bool = False
    loss_kind: str = "contrastive"  # contrastive | margin_mse | term_mse
    query_reg: RegularizerConfig = field(default_factory=RegularizerConfig)
    doc_reg: RegularizerConfig = field(default_factory=RegularizerConfig)
    steps: int = 100
    lr: float = 0.5
    seed: int = 0
    warmup_fraction: float = 1.0 / 3.0  # quadratic ramp of the reg coefficient
    query_heads: HeadParameters | None = None
    doc_heads: HeadParameters | None = None
    train_query: bool = True
    train_doc: bool = True
    activation: str = "relu"
    mlp_log_normalize: bool = True
    topk_start: int | None = None  # training-time top-k decay schedule


@dataclass
class TrainResult:
    query_heads: HeadParameters
    doc_heads: HeadParameters
    loss_history: list[float]


def _reg_lambda(cfg: RegularizerConfig, step: int, steps: int, warmup_fraction: float) -> float:
    if cfg.kind not in (RegularizerKind.FLOPS, RegularizerKind.L1, RegularizerKind.L2):
        return 0.0
    warm = max(1, int(steps * warmup_fraction))
    ramp = min(1.0, (step / warm) ** 2)
    return cfg.weight * ramp


def train_heads(
    setup: TrainSetup,
    triples: list[TrainingTriple],
    embed: Callable[[TokenizedText], EmbeddingBundle],
    vocab_size: int,
    dim: int,
    term_labels: TermRecallLabels | None = None,
) -> TrainResult:
    """Full-batch gradient descent on loss + lambda * regularizer; heads only.

    Backbone embeddings are frozen inputs supplied by `embed`.  Deterministic
    given the seed: initialization, iteration order, and summation order are
    all fixed.
    """
    for side, kind, trains in (
        ("query", setup.query_encoder, setup.train_query),
        ("doc", setup.doc_encoder, setup.train_doc),
    ):
        if trains and kind not in DIFFERENTIABLE:
            raise ValueError(f"{side} encoder {kind.value!r} has no trainable head")
        if not trains and kind not in DIFFERENTIABLE | {EncoderKind.BINARY}:
            raise ValueError(f"{side} encoder {kind.value!r} cannot appear in training")
    if setup.shared_heads and setup.query_encoder != setup.doc_encoder:
        raise ValueError("shared heads require identical encoder kinds")
    if not triples:
        raise ValueError("no training triples")
    if setup.loss_kind == "term_mse" and term_labels is None:
        raise ValueError("term_mse supervision requires term labels")

    def init(side_seed: int) -> HeadParameters:
        return init_head_parameters(
            vocab_size,
            dim,
            side_seed,
            activation=setup.activation,
            mlp_log_normalize=setup.mlp_log_normalize,
        )

    q_heads = (setup.query_heads or init(setup.seed)).copy()
    d_heads = q_heads if setup.shared_heads else (setup.doc_heads or init(setup.seed + 1)).copy()

    # Texts are encoded once per step per distinct id; embeddings cached upfront.
    q_texts = {("q", t.query.doc_id): t.query for t in triples}
    d_texts: dict[tuple[str, str], TokenizedText] = {}
    for t in triples:
        d_texts[("d", t.positive.doc_id)] = t.positive
        for neg in t.negatives:
            d_texts[("d", neg.doc_id)] = neg
    bundles = {key: embed(text) for key, text in {**q_texts, **d_texts}.items()}

    loss_history: list[float] = []
    for step in range(setup.steps):
        fwd: dict[tuple[str, str], tuple[np.ndarray, dict]] = {}
        topk_masks: dict[tuple[str, str], np.ndarray] = {}
        for key, text in q_texts.items():
            fwd[key] = _forward_dense(setup.query_encoder, text, bundles[key], q_heads)
        for key, text in d_texts.items():
            fwd[key] = _forward_dense(setup.doc_encoder, text, bundles[key], d_heads)

        # Training-time top-k pruning with a linear k-decay schedule.
        for side, cfg in (("q", setup.query_reg), ("d", setup.doc_reg)):
            if cfg.kind is not RegularizerKind.TOPK:
                continue
            start = setup.topk_start if setup.topk_start is not None else vocab_size
            k = topk_schedule(start, cfg.k, setup.steps, step)
            for key in fwd:
                if key[0] != side:
                    continue
                w = fwd[key][0]
                mask = np.zeros_like(w)
                if k > 0:
                    order = np.lexsort((np.arange(len(w)), -w))[:k]
                    mask[order[w[order] > 0]] = 1.0
                topk_masks[key] = mask
                fwd[key] = (w * mask, fwd[key][1])

        grads_w = {key: np.zeros(vocab_size) for key in fwd}
        total_loss = 0.0

        if setup.loss_kind == "term_mse":
            docs = [("d", t.positive.doc_id) for t in triples]
            for key in docs:
                labels = term_labels.get(key[1], {})
                if not labels:
                    continue
                w = fwd[key][0]
                n = len(labels)
                for t, target in labels.items():
                    diff = w[t] - target
                    total_loss += diff * diff / (n * len(docs))
                    grads_w[key][t] += 2.0 * diff / (n * len(docs))
        else:
            for triple in triples:
                qk = ("q", triple.query.doc_id)
                pk = ("d", triple.positive.doc_id)
                nks = [("d", n.doc_id) for n in triple.negatives]
                wq = fwd[qk][0]
                s_pos = float(wq @ fwd[pk][0])
                s_negs = [float(wq @ fwd[nk][0]) for nk in nks]
                if setup.loss_kind == "contrastive":
                    loss, (g_pos, g_negs) = contrastive_nll(s_pos, s_negs)
                elif setup.loss_kind == "margin_mse":
                    if triple.teacher_scores is None:
                        raise ValueError("margin_mse requires teacher scores")
                    t_pos, t_negs = triple.teacher_scores
                    margins = [s_pos - s for s in s_negs]
                    t_margins = [t_pos - s for s in t_negs]
                    loss, g_margins = margin_mse_loss(margins, t_margins)
                    g_pos = sum(g_margins)
                    g_negs = [-g for g in g_margins]
                else:
                    raise ValueError(f"unknown loss kind {setup.loss_kind!r}")
                scale = 1.0 / len(triples)
                total_loss += loss * scale
                grads_w[qk] += scale * (
                    g_pos * fwd[pk][0]
                    + sum((g * fwd[nk][0] for g, nk in zip(g_negs, nks)), np.zeros(vocab_size))
                )
                grads_w[pk] += scale * g_pos * wq
                for g, nk in zip(g_negs, nks):
                    grads_w[nk] += scale * g * wq

        # Batch regularizers (FLOPs / L1 / L2) with quadratic warm-up.
        for side, cfg in (("q", setup.query_reg), ("d", setup.doc_reg)):
            lam = _reg_lambda(cfg, step, setup.steps, setup.warmup_fraction)
            if lam == 0.0:
                continue
            keys = sorted(k for k in fwd if k[0] == side)
            batch = np.stack([fwd[k][0] for k in keys])
            n = len(keys)
            if cfg.kind is RegularizerKind.FLOPS:
                mean = batch.mean(axis=0)
                total_loss += lam * float(mean @ mean)
                shared_grad = lam * 2.0 * mean / n
                for k in keys:
                    grads_w[k] += shared_grad
            elif cfg.kind is RegularizerKind.L1:
                total_loss += lam * float(np.abs(batch).sum()) / n
                for k in keys:
                    grads_w[k] += lam * np.sign(fwd[k][0]) / n
            elif cfg.kind is RegularizerKind.L2:
                for k in keys:
                    norm = float(np.linalg.norm(fwd[k][0]))
                    total_loss += lam * norm / n
                    if norm > 0:
                        grads_w[k] += lam * fwd[k][0] / (norm * n)

        q_grads = _ParamGrads.zeros(vocab_size, dim)
        d_grads = q_grads if setup.shared_heads else _ParamGrads.zeros(vocab_size, dim)
        for key in sorted(fwd):
            gw = grads_w[key]
            if key in topk_masks:
                gw = gw * topk_masks[key]
            _backward_dense(fwd[key][1], gw, q_grads if key[0] == "q" else d_grads)

        def apply(heads: HeadParameters, grads: _ParamGrads, kind: EncoderKind) -> None:
            if kind in (EncoderKind.MLP, EncoderKind.EXP_MLP):
                heads.mlp_weight -= setup.lr * grads.mlp_weight
                heads.mlp_bias -= setup.lr * grads.mlp_bias
            else:
                heads.mlm_bias -= setup.lr * grads.mlm_bias

        if setup.train_query:
            apply(q_heads, q_grads, setup.query_encoder)
        if setup.train_doc and not (setup.shared_heads and setup.train_query):
            apply(d_heads, d_grads, setup.doc_encoder)
        loss_history.append(total_loss)

    return TrainResult(query_heads=q_heads, doc_heads=d_heads, loss_history=loss_history)


# ---------------------------------------------------------------------------
# Triples file
# ---------------------------------------------------------------------------


def read_triples(
    path: str | Path,
    queries: Mapping[str, TokenizedText],
    docs: Mapping[str, TokenizedText],
) -> list[TrainingTriple]:
    """Triples file: one JSON object per line with q/pos/negs ids and optional teacher scores."""
    out: list[TrainingTriple] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                teacher = None
                if rec.get("teacher") is not None:
                    teacher = (float(rec["teacher"]["pos"]), tuple(float(s) for s in rec["teacher"]["negs"]))
                out.append(
                    TrainingTriple(
                        query=queries[rec["q"]],
                        positive=docs[rec["pos"]],
                        negatives=tuple(docs[n] for n in rec["negs"]),
                        teacher_scores=teacher,
                    )
                )
            except (KeyError, ValueError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: bad triple record ({e})") from e
    return out
