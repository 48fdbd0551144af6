"""Sparsity control: batch FLOPs penalty, Lp norms, and top-k pruning."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .core import SparseVector


class RegularizerKind(str, enum.Enum):
    FLOPS = "flops"
    L1 = "l1"
    L2 = "l2"
    TOPK = "topk"
    NONE = "none"


@dataclass(frozen=True)
class RegularizerConfig:
    kind: RegularizerKind = RegularizerKind.NONE
    weight: float = 0.0  # penalty coefficient, for flops/l1/l2
    k: int = 0  # retained-term count, for topk

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("penalty coefficient must be >= 0")
        if self.k < 0:
            raise ValueError("k must be >= 0")


def flops_penalty(
    batch: list[SparseVector], vocab_size: int, dense_gradient: bool = False
) -> tuple[float, list[SparseVector]]:
    """Squared mean activation per dimension, summed over the vocabulary.

    The analytic gradient wrt every weight is 2 * mean_i / N, which is dense in
    the batch mean; by default it is reported only at each vector's stored
    positions.  Pass dense_gradient=True to materialize it at every dimension
    with a nonzero batch mean (used by the trainer).
    """
    if not batch:
        raise ValueError("flops_penalty requires a nonempty batch")
    n = len(batch)
    mean: dict[int, float] = {}
    for v in batch:
        for t, w in v.entries.items():
            mean[t] = mean.get(t, 0.0) + w / n
    value = sum(m * m for m in mean.values())
    if dense_gradient:
        shared = SparseVector({t: 2.0 * m / n for t, m in mean.items()})
        grads = [shared for _ in batch]
    else:
        grads = [
            SparseVector({t: 2.0 * mean[t] / n for t in v.entries}) for v in batch
        ]
    return value, grads


def lp_penalty(v: SparseVector, p: int) -> tuple[float, SparseVector]:
    """L1 or L2 norm of the output vector, with its gradient.

    The L2 gradient at the zero vector is defined as the zero vector.
    """
    if p == 1:
        value = sum(abs(w) for w in v.entries.values())
        grad = SparseVector({t: math.copysign(1.0, w) for t, w in v.entries.items()})
        return value, grad
    if p == 2:
        value = math.sqrt(sum(w * w for w in v.entries.values()))
        if value == 0.0:
            return 0.0, SparseVector()
        return value, SparseVector({t: w / value for t, w in v.entries.items()})
    raise ValueError("p must be 1 or 2")


def topk_prune(v: SparseVector, k: int) -> SparseVector:
    """Keep the k largest weights, ties broken by smaller term id."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if k >= v.nnz:
        return SparseVector(v.entries)
    kept = sorted(v.entries.items(), key=lambda it: (-it[1], it[0]))[:k]
    return SparseVector(dict(kept))


def topk_schedule(start_k: int, end_k: int, steps: int, step: int) -> int:
    """Linear k decay across training steps; constant when steps <= 1."""
    if steps <= 1:
        return end_k
    frac = min(max(step, 0), steps - 1) / (steps - 1)
    return round(start_k + (end_k - start_k) * frac)
