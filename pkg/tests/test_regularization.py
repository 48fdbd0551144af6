"""FLOPs / Lp penalties and top-k pruning, with finite-difference gradient checks."""

import numpy as np
import pytest

from lsrkit.core import SparseVector
from lsrkit.regularization import flops_penalty, lp_penalty, topk_prune, topk_schedule


def random_sparse(rng, vocab_size=16, max_nnz=8, positive=True):
    nnz = int(rng.integers(1, min(max_nnz, vocab_size) + 1))
    ids = rng.choice(vocab_size, size=nnz, replace=False)
    lo = 0.1 if positive else -3.0
    return SparseVector({int(t): float(rng.uniform(lo, 3.0)) for t in ids})


class TestFlopsPenalty:
    def test_hand_example(self):
        batch = [SparseVector({0: 1.0}), SparseVector({0: 1.0, 1: 2.0})]
        value, _ = flops_penalty(batch, vocab_size=4)
        assert value == pytest.approx(2.0)  # means (1, 1)

    def test_all_zero_batch(self):
        value, grads = flops_penalty([SparseVector(), SparseVector()], vocab_size=4)
        assert value == 0.0
        assert all(g.nnz == 0 for g in grads)

    def test_single_vector(self):
        value, _ = flops_penalty([SparseVector({0: 3.0})], vocab_size=4)
        assert value == pytest.approx(9.0)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            flops_penalty([], vocab_size=4)

    def test_matches_dense_matrix_oracle(self, rng):
        for _ in range(50):
            vocab_size = int(rng.integers(4, 64))
            batch = [random_sparse(rng, vocab_size) for _ in range(int(rng.integers(1, 8)))]
            value, _ = flops_penalty(batch, vocab_size)
            dense = np.array([v.to_dense(vocab_size) for v in batch])
            want = float((dense.mean(axis=0) ** 2).sum())
            assert value == pytest.approx(want, abs=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        for _ in range(100):
            vocab_size = 12
            batch = [random_sparse(rng, vocab_size) for _ in range(int(rng.integers(1, 5)))]
            _, grads = flops_penalty(batch, vocab_size)
            j = int(rng.integers(len(batch)))
            entries = sorted(batch[j].entries)
            t = entries[int(rng.integers(len(entries)))]
            h = 1e-5

            def value_at(w):
                perturbed = list(batch)
                perturbed[j] = SparseVector({**batch[j].entries, t: w})
                return flops_penalty(perturbed, vocab_size)[0]

            w0 = batch[j].entries[t]
            numeric = (value_at(w0 + h) - value_at(w0 - h)) / (2 * h)
            assert grads[j].get(t) == pytest.approx(numeric, rel=1e-4)

    def test_dense_gradient_flag_covers_batch_support(self, rng):
        batch = [SparseVector({0: 1.0}), SparseVector({1: 2.0})]
        _, grads = flops_penalty(batch, vocab_size=4, dense_gradient=True)
        assert set(grads[0].entries) == {0, 1}

    def test_zeroing_an_entry_never_increases_penalty(self, rng):
        for _ in range(50):
            batch = [random_sparse(rng) for _ in range(3)]
            value, _ = flops_penalty(batch, 16)
            j = int(rng.integers(3))
            t = sorted(batch[j].entries)[0]
            zeroed = list(batch)
            zeroed[j] = SparseVector({k: w for k, w in batch[j].entries.items() if k != t})
            assert flops_penalty(zeroed, 16)[0] <= value + 1e-12


class TestLpPenalty:
    def test_l2_345(self):
        value, _ = lp_penalty(SparseVector({0: 3.0, 1: 4.0}), p=2)
        assert value == pytest.approx(5.0)

    def test_l1(self):
        value, grad = lp_penalty(SparseVector({0: 3.0, 1: 4.0}), p=1)
        assert value == pytest.approx(7.0)
        assert grad.entries == {0: 1.0, 1: 1.0}

    def test_empty_vector(self):
        assert lp_penalty(SparseVector(), p=1)[0] == 0.0
        value, grad = lp_penalty(SparseVector(), p=2)
        assert value == 0.0
        assert grad.nnz == 0

    def test_bad_p_rejected(self):
        with pytest.raises(ValueError):
            lp_penalty(SparseVector({0: 1.0}), p=3)

    @pytest.mark.parametrize("p", [1, 2])
    def test_gradient_matches_finite_differences(self, rng, p):
        for _ in range(100):
            v = random_sparse(rng)
            _, grad = lp_penalty(v, p)
            t = sorted(v.entries)[int(rng.integers(v.nnz))]
            h = 1e-5
            up = lp_penalty(SparseVector({**v.entries, t: v.entries[t] + h}), p)[0]
            down = lp_penalty(SparseVector({**v.entries, t: v.entries[t] - h}), p)[0]
            assert grad.get(t) == pytest.approx((up - down) / (2 * h), rel=1e-4)


class TestTopkPrune:
    def test_keeps_largest(self):
        got = topk_prune(SparseVector({0: 3.0, 1: 1.0, 2: 2.0}), k=2)
        assert got.entries == {0: 3.0, 2: 2.0}

    def test_k_zero(self):
        assert topk_prune(SparseVector({0: 3.0}), k=0) == SparseVector()

    def test_tie_breaks_to_smaller_id(self):
        got = topk_prune(SparseVector({0: 1.0, 1: 1.0}), k=1)
        assert got.entries == {0: 1.0}

    def test_negative_k_rejected(self):
        with pytest.raises(ValueError):
            topk_prune(SparseVector(), k=-1)

    def test_idempotent(self, rng):
        for _ in range(50):
            v = random_sparse(rng)
            k = int(rng.integers(0, 10))
            once = topk_prune(v, k)
            assert topk_prune(once, k) == once

    def test_pruned_query_never_scores_higher(self, rng):
        for _ in range(50):
            q = random_sparse(rng)
            d = random_sparse(rng)
            k = int(rng.integers(0, q.nnz + 1))
            assert topk_prune(q, k).dot(d) <= q.dot(d) + 1e-12


class TestTopkSchedule:
    def test_linear_decay_endpoints(self):
        assert topk_schedule(100, 10, steps=10, step=0) == 100
        assert topk_schedule(100, 10, steps=10, step=9) == 10

    def test_monotone_non_increasing(self):
        ks = [topk_schedule(100, 10, 20, s) for s in range(20)]
        assert all(a >= b for a, b in zip(ks, ks[1:]))
