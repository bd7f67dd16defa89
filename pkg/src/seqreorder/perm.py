"""Permutation recovery: Sinkhorn normalization, rounding, and the loss.

A strictly positive score matrix is pushed toward the doubly-stochastic
polytope by alternating row and column normalization (column last, so
column sums are exact); the recovered permutation is the assignment that
maximizes the matched score total. The backward pass differentiates
through the unrolled normalization steps exactly — for one row step,

    d out[p,j] / d in[p,q]  =  [[j == q]] / Z_p  -  in[p,j] / Z_p**2,

with Z_p the row sum, and the column step is its transpose. Chaining these
through all m steps gives the exact gradient of any scalar loss on the
normalized matrix with respect to the raw scores.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import fsum

import numpy as np
from scipy.optimize import linear_sum_assignment

from .augment import ShuffleMatrix
from .errors import NumericError, ValidationError

DEFAULT_LOG_EPS = 1e-9
TRAIN_SINKHORN_M = 10
EVAL_SINKHORN_M = 50


@dataclass(frozen=True)
class SinkhornConfig:
    """Iteration count and the clamp floor used inside the log loss."""

    m: int = TRAIN_SINKHORN_M
    eps: float = DEFAULT_LOG_EPS

    def __post_init__(self) -> None:
        if self.m < 0:
            raise ValidationError(f"m must be >= 0, got {self.m}")
        if self.eps <= 0:
            raise ValidationError(f"eps must be > 0, got {self.eps}")


@dataclass
class ScoreMatrix:
    """Raw n x n block-to-position scores; strictly positive and finite."""

    entries: np.ndarray


@dataclass
class DoublyStochasticMatrix:
    entries: np.ndarray
    iterations_used: int


def _as_matrix(q) -> np.ndarray:
    entries = getattr(q, "entries", q)
    arr = np.asarray(entries, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {arr.shape}")
    return arr


def _check_positive(arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise NumericError("score matrix contains non-finite entries")
    if (arr <= 0).any():
        raise NumericError("score matrix entries must be strictly positive")


def row_normalize(q) -> np.ndarray:
    x = _as_matrix(q)
    if not np.isfinite(x).all():
        raise NumericError("matrix contains non-finite entries")
    sums = x.sum(axis=1, keepdims=True)
    if (sums <= 0).any():
        bad = int(np.argmax(sums.ravel() <= 0))
        raise NumericError(f"row {bad} has non-positive sum {sums.ravel()[bad]!r}")
    return x / sums


def col_normalize(q) -> np.ndarray:
    x = _as_matrix(q)
    if not np.isfinite(x).all():
        raise NumericError("matrix contains non-finite entries")
    sums = x.sum(axis=0, keepdims=True)
    if (sums <= 0).any():
        bad = int(np.argmax(sums.ravel() <= 0))
        raise NumericError(f"column {bad} has non-positive sum {sums.ravel()[bad]!r}")
    return x / sums


def _forward_steps(x: np.ndarray, m: int):
    """Run m row+column steps, keeping the input of every normalization."""
    row_inputs = []
    col_inputs = []
    for _ in range(m):
        row_inputs.append(x)
        x = row_normalize(x)
        col_inputs.append(x)
        x = col_normalize(x)
    return x, row_inputs, col_inputs


def sinkhorn(q, config: SinkhornConfig = SinkhornConfig()) -> DoublyStochasticMatrix:
    """Alternate row and column normalization m times (column last).

    m = 0 returns the input unchanged. For m >= 1 every column sums to 1
    exactly (up to rounding) and row sums converge to 1 as m grows.
    """
    x = _as_matrix(q)
    _check_positive(x)
    if config.m == 0:
        return DoublyStochasticMatrix(entries=x.copy(), iterations_used=0)
    out, _, _ = _forward_steps(x, config.m)
    return DoublyStochasticMatrix(entries=out, iterations_used=config.m)


def row_normalize_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Gradient through one row normalization, given its input x."""
    z = x.sum(axis=1, keepdims=True)
    return upstream / z - ((upstream * x).sum(axis=1, keepdims=True)) / (z * z)


def col_normalize_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    z = x.sum(axis=0, keepdims=True)
    return upstream / z - ((upstream * x).sum(axis=0, keepdims=True)) / (z * z)


def sinkhorn_backward(q, config: SinkhornConfig, upstream: np.ndarray) -> np.ndarray:
    """Exact gradient of a scalar loss through m normalization steps.

    ``upstream`` is the loss gradient with respect to the normalized
    output; the return value is the loss gradient with respect to the raw
    input. m = 0 passes the gradient through unchanged.
    """
    x = _as_matrix(q)
    _check_positive(x)
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != x.shape:
        raise ValidationError(
            f"upstream gradient shape {g.shape} does not match matrix shape {x.shape}"
        )
    if config.m == 0:
        return g.copy()
    _, row_inputs, col_inputs = _forward_steps(x, config.m)
    for t in range(config.m - 1, -1, -1):
        g = col_normalize_backward(col_inputs[t], g)
        g = row_normalize_backward(row_inputs[t], g)
    return g


def _assignment_entries(entries: np.ndarray, rows, cols) -> list[float]:
    return [float(entries[r, c]) for r, c in zip(rows, cols)]


def _lexicographic_refine(entries: np.ndarray) -> np.ndarray:
    """Among maximum-total assignments, pick the lexicographically smallest.

    Greedy over slots: fix sigma(i) to the smallest column whose best
    completion ties the best achievable total. Totals are compared with
    fsum, which is grouping-independent, so ties are decided exactly.
    """
    n = entries.shape[0]
    used = np.zeros(n, dtype=bool)
    prefix: list[float] = []
    sigma = np.empty(n, dtype=np.int64)
    for i in range(n):
        best_j = -1
        best_total = -np.inf
        for j in range(n):
            if used[j]:
                continue
            free_cols = np.flatnonzero(~used)
            free_cols = free_cols[free_cols != j]
            completion: list[float] = []
            if i + 1 < n:
                sub = entries[np.ix_(np.arange(i + 1, n), free_cols)]
                r, c = linear_sum_assignment(sub, maximize=True)
                completion = [float(sub[a, b]) for a, b in zip(r, c)]
            total = fsum(prefix + [float(entries[i, j])] + completion)
            if total > best_total:
                best_total = total
                best_j = j
        sigma[i] = best_j
        used[best_j] = True
        prefix.append(float(entries[i, best_j]))
    return sigma


def round_to_permutation(q) -> ShuffleMatrix:
    """The assignment maximizing the matched total; ties break toward the
    lexicographically smallest permutation."""
    entries = _as_matrix(q)
    if not np.isfinite(entries).all():
        raise NumericError("matrix contains non-finite entries")
    rows, cols = linear_sum_assignment(entries, maximize=True)
    perm = np.asarray(cols, dtype=np.int64)
    if np.unique(entries).size < entries.size:
        # Duplicate entries can produce ties; re-derive lexicographically.
        perm = _lexicographic_refine(entries)
    return ShuffleMatrix(perm)


def reorder_loss(p: ShuffleMatrix, q, eps: float = DEFAULT_LOG_EPS) -> float:
    """Mean negative log of the matched entries: -(1/n) sum_i log Q[i][p(i)].

    Entries are clamped to [eps, 1] before the log, so the loss is finite
    and non-negative, and zero exactly when every matched entry is 1.
    """
    entries = _as_matrix(q)
    if p.n != entries.shape[0]:
        raise ValidationError(
            f"permutation over {p.n} slots does not match matrix of size {entries.shape[0]}"
        )
    matched = entries[np.arange(p.n), p.perm]
    clamped = np.clip(matched, eps, 1.0)
    return float(-np.mean(np.log(clamped)))


def reorder_loss_grad(
    p: ShuffleMatrix, q, eps: float = DEFAULT_LOG_EPS
) -> tuple[float, np.ndarray]:
    """Loss plus its gradient with respect to the matrix entries."""
    entries = _as_matrix(q)
    if p.n != entries.shape[0]:
        raise ValidationError(
            f"permutation over {p.n} slots does not match matrix of size {entries.shape[0]}"
        )
    n = p.n
    idx = np.arange(n)
    matched = entries[idx, p.perm]
    clamped = np.clip(matched, eps, 1.0)
    loss = float(-np.mean(np.log(clamped)))
    grad = np.zeros_like(entries)
    active = (matched > eps) & (matched < 1.0)
    grad[idx[active], p.perm[active]] = -1.0 / (n * matched[active])
    return loss, grad


def permutation_accuracy(predicted: ShuffleMatrix, target: ShuffleMatrix) -> float:
    """Fraction of slots assigned to their true original position."""
    if predicted.n != target.n:
        raise ValidationError(
            f"predicted is over {predicted.n} slots, target over {target.n}"
        )
    return float(np.mean(predicted.perm == target.perm))
