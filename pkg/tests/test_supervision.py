"""Labels, losses (with gradient checks), and the head-only trainer."""

import math

import numpy as np
import pytest

from conftest import text

from lsrkit.core import SparseVector, TokenizedText
from lsrkit.encoders import EncoderKind, toy_backbone
from lsrkit.regularization import RegularizerConfig, RegularizerKind
from lsrkit.supervision import (
    TrainSetup,
    TrainingTriple,
    compute_term_recall,
    contrastive_nll,
    margin_mse_loss,
    read_triples,
    term_mse_loss,
    train_heads,
)
from lsrkit.synthetic import make_synthetic_task


class TestTermRecall:
    def test_ratio_over_relevant_queries(self):
        labels = compute_term_recall({"d": [text("q1", 0, 1), text("q2", 0, 2)]})
        assert labels["d"] == pytest.approx({0: 1.0, 1: 0.5, 2: 0.5})

    def test_single_query(self):
        labels = compute_term_recall({"d": [text("q1", 0)]})
        assert labels["d"] == {0: 1.0}

    def test_absent_term_has_no_entry(self):
        labels = compute_term_recall({"d": [text("q1", 0)]})
        assert 1 not in labels["d"]

    def test_doc_without_queries_excluded_with_warning(self):
        warnings = []
        labels = compute_term_recall({"d": []}, warnings=warnings)
        assert "d" not in labels
        assert warnings


class TestTermMseLoss:
    def test_exact_match_is_zero(self):
        loss, _ = term_mse_loss(SparseVector({0: 1.0}), {0: 1.0})
        assert loss == 0.0

    def test_unit_error(self):
        loss, _ = term_mse_loss(SparseVector(), {0: 1.0})
        assert loss == pytest.approx(1.0)

    def test_hand_evaluation(self):
        loss, _ = term_mse_loss(SparseVector({0: 0.5, 1: 0.5}), {0: 1.0, 1: 0.0})
        assert loss == pytest.approx(0.25)

    def test_empty_labels_rejected(self):
        with pytest.raises(ValueError):
            term_mse_loss(SparseVector(), {})


class TestContrastiveNll:
    def test_uniform_scores(self):
        loss, _ = contrastive_nll(1.0, [1.0, 1.0, 1.0])
        assert loss == pytest.approx(math.log(4.0))

    def test_dominant_positive(self):
        loss, _ = contrastive_nll(40.0, [0.0, 0.0])
        assert loss < 1e-6

    def test_closed_form(self):
        loss, _ = contrastive_nll(1.0, [0.0])
        assert loss == pytest.approx(math.log(1.0 + math.exp(-1.0)))

    def test_no_negatives_rejected(self):
        with pytest.raises(ValueError):
            contrastive_nll(1.0, [])

    def test_shift_invariance(self, rng):
        for _ in range(30):
            pos = float(rng.normal())
            negs = rng.normal(size=4).tolist()
            c = float(rng.normal()) * 10
            base, _ = contrastive_nll(pos, negs)
            shifted, _ = contrastive_nll(pos + c, [s + c for s in negs])
            assert shifted == pytest.approx(base, abs=1e-9)


class TestMarginMse:
    def test_matching_margins(self):
        assert margin_mse_loss([1.0, 2.0], [1.0, 2.0])[0] == 0.0

    def test_single_pair(self):
        assert margin_mse_loss([1.0], [3.0])[0] == pytest.approx(4.0)

    def test_hand_evaluation(self):
        assert margin_mse_loss([1.0, 2.0], [0.0, 0.0])[0] == pytest.approx(2.5)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            margin_mse_loss([1.0], [1.0, 2.0])

    def test_margin_form_invariant_to_score_shift(self, rng):
        # adding a constant to both scores of a pair leaves the margin unchanged
        for _ in range(20):
            s_pos, s_neg = rng.normal(size=2)
            t_margins = rng.normal(size=1).tolist()
            c = float(rng.normal()) * 5
            base = margin_mse_loss([s_pos - s_neg], t_margins)[0]
            shifted = margin_mse_loss([(s_pos + c) - (s_neg + c)], t_margins)[0]
            assert shifted == pytest.approx(base, abs=1e-9)


class TestLossGradients:
    """Central finite differences, 1e-5 step, 1e-4 relative tolerance."""

    def test_term_mse(self, rng):
        for _ in range(100):
            ids = rng.choice(10, size=4, replace=False)
            pred = SparseVector({int(t): float(rng.uniform(0.1, 2)) for t in ids[:3]})
            labels = {int(t): float(rng.uniform(0, 1)) for t in ids}
            _, grad = term_mse_loss(pred, labels)
            t = int(ids[rng.integers(len(ids))])
            h = 1e-5
            up = term_mse_loss(SparseVector({**pred.entries, t: pred.get(t) + h}), labels)[0]
            dn = term_mse_loss(SparseVector({**pred.entries, t: pred.get(t) - h}), labels)[0]
            assert grad.get(t) == pytest.approx((up - dn) / (2 * h), rel=1e-4, abs=1e-8)

    def test_contrastive(self, rng):
        for _ in range(100):
            pos = float(rng.normal())
            negs = rng.normal(size=int(rng.integers(1, 5))).tolist()
            _, (g_pos, g_negs) = contrastive_nll(pos, negs)
            h = 1e-5
            num_pos = (contrastive_nll(pos + h, negs)[0] - contrastive_nll(pos - h, negs)[0]) / (2 * h)
            assert g_pos == pytest.approx(num_pos, rel=1e-4, abs=1e-8)
            k = int(rng.integers(len(negs)))
            up = list(negs); up[k] += h
            dn = list(negs); dn[k] -= h
            num_neg = (contrastive_nll(pos, up)[0] - contrastive_nll(pos, dn)[0]) / (2 * h)
            assert g_negs[k] == pytest.approx(num_neg, rel=1e-4, abs=1e-8)

    def test_margin_mse(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 5))
            student = rng.normal(size=n).tolist()
            teacher = rng.normal(size=n).tolist()
            _, grads = margin_mse_loss(student, teacher)
            k = int(rng.integers(n))
            h = 1e-5
            up = list(student); up[k] += h
            dn = list(student); dn[k] -= h
            num = (margin_mse_loss(up, teacher)[0] - margin_mse_loss(dn, teacher)[0]) / (2 * h)
            assert grads[k] == pytest.approx(num, rel=1e-4, abs=1e-8)


def small_task(**kwargs):
    defaults = dict(num_docs=60, num_queries=20, vocab_size=60, seed=11)
    defaults.update(kwargs)
    task = make_synthetic_task(**defaults)
    docs = {d.doc_id: d for d in task.docs}
    queries = {q.doc_id: q for q in task.queries}
    triples = [
        TrainingTriple(
            query=queries[r["q"]],
            positive=docs[r["pos"]],
            negatives=tuple(docs[n] for n in r["negs"]),
            teacher_scores=(r["teacher"]["pos"], tuple(r["teacher"]["negs"])),
        )
        for r in task.triples
    ]
    return task, triples


class TestTrainHeads:
    DIM = 8

    def _embed(self, vocab_size):
        return lambda t: toy_backbone(t, vocab_size, self.DIM, seed=11)

    def test_lr_zero_returns_initialization(self):
        task, triples = small_task()
        v = task.vocab.size
        setup = TrainSetup(EncoderKind.MLM, EncoderKind.MLM, shared_heads=True, steps=5, lr=0.0, seed=2)
        result = train_heads(setup, triples, self._embed(v), v, self.DIM)
        from lsrkit.encoders import init_head_parameters

        init = init_head_parameters(v, self.DIM, 2)
        assert np.array_equal(result.query_heads.mlm_bias, init.mlm_bias)
        assert np.array_equal(result.query_heads.mlp_weight, init.mlp_weight)

    def test_deterministic_given_seed(self):
        task, triples = small_task()
        v = task.vocab.size
        setup = TrainSetup(EncoderKind.MLP, EncoderKind.MLM, steps=10, lr=0.3, seed=4)
        a = train_heads(setup, triples, self._embed(v), v, self.DIM)
        b = train_heads(setup, triples, self._embed(v), v, self.DIM)
        assert np.array_equal(a.query_heads.mlp_weight, b.query_heads.mlp_weight)
        assert np.array_equal(a.doc_heads.mlm_bias, b.doc_heads.mlm_bias)
        assert a.loss_history == b.loss_history

    def test_contrastive_loss_decreases_on_separable_task(self):
        task, triples = small_task()
        v = task.vocab.size
        setup = TrainSetup(EncoderKind.MLP, EncoderKind.MLP, steps=50, lr=0.3, seed=4)
        result = train_heads(setup, triples, self._embed(v), v, self.DIM)
        hist = result.loss_history[:50]
        assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))

    def test_non_differentiable_encoder_rejected(self):
        task, triples = small_task()
        v = task.vocab.size
        with pytest.raises(ValueError, match="no trainable head"):
            train_heads(
                TrainSetup(EncoderKind.BM25_QUERY, EncoderKind.MLM, steps=1),
                triples, self._embed(v), v, self.DIM,
            )
        with pytest.raises(ValueError, match="no trainable head"):
            train_heads(
                TrainSetup(EncoderKind.BINARY, EncoderKind.MLM, steps=1),
                triples, self._embed(v), v, self.DIM,
            )

    def test_frozen_binary_query_side_allowed(self):
        task, triples = small_task()
        v = task.vocab.size
        setup = TrainSetup(EncoderKind.BINARY, EncoderKind.MLM, steps=5, lr=0.3, train_query=False)
        result = train_heads(setup, triples, self._embed(v), v, self.DIM)
        assert len(result.loss_history) == 5

    def _mean_doc_nnz(self, task, heads):
        from lsrkit.supervision import _forward_dense

        embed = self._embed(task.vocab.size)
        counts = [
            int((_forward_dense(EncoderKind.MLM, d, embed(d), heads)[0] > 0).sum())
            for d in task.docs
        ]
        return float(np.mean(counts))

    def test_flops_weight_sweep_shrinks_doc_nnz(self):
        task, triples = small_task()
        v = task.vocab.size
        nnz = []
        for lam in (0.0, 0.01, 0.1, 1.0):
            reg = RegularizerConfig(kind=RegularizerKind.FLOPS, weight=lam)
            setup = TrainSetup(
                EncoderKind.MLM, EncoderKind.MLM, shared_heads=True,
                query_reg=reg, doc_reg=reg, steps=80, lr=0.5, seed=3,
            )
            result = train_heads(setup, triples, self._embed(v), v, self.DIM)
            nnz.append(self._mean_doc_nnz(task, result.doc_heads))
        assert all(a >= b for a, b in zip(nnz, nnz[1:])), nnz
        assert nnz[-1] < nnz[0]

    def test_margin_mse_training_runs(self):
        task, triples = small_task()
        v = task.vocab.size
        setup = TrainSetup(EncoderKind.MLM, EncoderKind.MLM, shared_heads=True,
                           loss_kind="margin_mse", steps=20, lr=0.05, seed=3)
        result = train_heads(setup, triples, self._embed(v), v, self.DIM)
        assert result.loss_history[-1] < result.loss_history[0]

    def test_term_mse_training_reduces_loss(self):
        task, triples = small_task()
        v = task.vocab.size
        relevant = {}
        for t in triples:
            relevant.setdefault(t.positive.doc_id, []).append(t.query)
        labels = compute_term_recall(relevant)
        setup = TrainSetup(EncoderKind.MLP, EncoderKind.MLP, loss_kind="term_mse",
                           steps=40, lr=0.3, seed=3, mlp_log_normalize=False)
        result = train_heads(setup, triples, self._embed(v), v, self.DIM, term_labels=labels)
        assert result.loss_history[-1] < result.loss_history[0]


class TestTrainerGradients:
    """End-to-end parameter gradients vs finite differences through one step."""

    def _numeric_check(self, setup, triples, embed, v, dim, getter, setter, index):
        # one GD step with lr recovers the gradient: grad = (init - updated) / lr
        lr = setup.lr
        result = train_heads(setup, triples, embed, v, dim)
        from lsrkit.encoders import init_head_parameters

        init_q = init_head_parameters(v, dim, setup.seed,
                                      mlp_log_normalize=setup.mlp_log_normalize)
        grad = (getter(init_q) - getter(result.query_heads))[index] / lr

        h = 1e-5

        def loss_with(delta):
            heads = init_q.copy()
            getter(heads)[index] += delta
            probe = TrainSetup(**{**setup.__dict__, "steps": 1, "lr": 0.0,
                                  "query_heads": heads, "doc_heads": heads})
            return train_heads(probe, triples, embed, v, dim).loss_history[0]

        numeric = (loss_with(h) - loss_with(-h)) / (2 * h)
        assert grad == pytest.approx(numeric, rel=1e-3, abs=1e-7)

    def test_mlm_bias_gradient(self, rng):
        task, triples = small_task(num_docs=20, num_queries=8, vocab_size=24)
        v, dim = task.vocab.size, 6
        embed = lambda t: toy_backbone(t, v, dim, seed=11)
        setup = TrainSetup(EncoderKind.MLM, EncoderKind.MLM, shared_heads=True,
                           steps=1, lr=0.25, seed=5)
        for index in rng.integers(0, v, size=5):
            self._numeric_check(setup, triples, embed, v, dim,
                                lambda h: h.mlm_bias, None, int(index))

    def test_mlp_weight_gradient(self, rng):
        task, triples = small_task(num_docs=20, num_queries=8, vocab_size=24)
        v, dim = task.vocab.size, 6
        embed = lambda t: toy_backbone(t, v, dim, seed=11)
        setup = TrainSetup(EncoderKind.MLP, EncoderKind.MLP, shared_heads=True,
                           steps=1, lr=0.25, seed=5)
        for index in range(dim):
            self._numeric_check(setup, triples, embed, v, dim,
                                lambda h: h.mlp_weight, None, index)


class TestTriplesFile:
    def test_round_trip(self, tmp_path):
        task, triples = small_task(num_docs=20, num_queries=5, vocab_size=30)
        path = tmp_path / "triples.jsonl"
        import json

        with open(path, "w") as f:
            for rec in task.triples:
                f.write(json.dumps(rec) + "\n")
        docs = {d.doc_id: d for d in task.docs}
        queries = {q.doc_id: q for q in task.queries}
        loaded = read_triples(path, queries, docs)
        assert len(loaded) == len(triples)
        assert loaded[0].query.doc_id == triples[0].query.doc_id
        assert loaded[0].teacher_scores == triples[0].teacher_scores

    def test_bad_record_reports_line(self, tmp_path):
        path = tmp_path / "triples.jsonl"
        path.write_text('{"q": "missing"}\n', encoding="utf-8")
        with pytest.raises(ValueError, match=":1:"):
            read_triples(path, {}, {})
