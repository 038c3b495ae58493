"""Clustering quality: Kuhn-Munkres matched accuracy and normalised mutual information."""
import math
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import entropy

from subspaceops.errors import DataError
from subspaceops.types import ClusterAssignment


@dataclass(frozen=True, eq=False)
class ContingencyTable:
    """counts[a, b] = number of samples with predicted a and true b."""

    counts: np.ndarray
    n: int


@dataclass(frozen=True)
class LabelMapping:
    """Injective map between row and column ids of an assignment problem."""

    mapping: Dict[int, int]
    total_cost: float
    matched: Optional[int] = None


def _check_lengths(pred: ClusterAssignment, truth: ClusterAssignment) -> None:
    if pred.n != truth.n:
        raise DataError(f"label length mismatch: {pred.n} predicted, {truth.n} true")


def contingency(pred: ClusterAssignment, truth: ClusterAssignment) -> ContingencyTable:
    """Cross-tabulate predicted against true labels."""
    _check_lengths(pred, truth)
    counts = np.zeros((pred.k, truth.k), dtype=np.int64)
    np.add.at(counts, (pred.labels, truth.labels), 1)
    return ContingencyTable(counts, pred.n)


def hungarian(cost: np.ndarray) -> LabelMapping:
    """Minimum-cost perfect assignment.

    A rectangular matrix is padded to square with a sentinel cost above every
    entry; pairs that land on padding are left out of the mapping.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise DataError("cost matrix must be 2-D")
    if not np.all(np.isfinite(cost)):
        raise DataError("cost matrix has non-finite entries")
    rows, cols = cost.shape
    size = max(rows, cols)
    if rows != cols:
        sentinel = (np.abs(cost).max() if cost.size else 0.0) * 2.0 + 1.0
        padded = np.full((size, size), sentinel)
        padded[:rows, :cols] = cost
    else:
        padded = cost
    row_ind, col_ind = linear_sum_assignment(padded)
    mapping = {
        int(r): int(c) for r, c in zip(row_ind, col_ind) if r < rows and c < cols
    }
    total = float(sum(cost[r, c] for r, c in mapping.items()))
    return LabelMapping(mapping, total)


def best_mapping(pred: ClusterAssignment, truth: ClusterAssignment) -> LabelMapping:
    """Prediction-to-truth mapping maximising the number of agreeing samples."""
    table = contingency(pred, truth)
    size = max(table.counts.shape)
    # zero-count padding keeps the optimum
    padded = np.zeros((size, size))
    padded[:pred.k, :truth.k] = table.counts
    result = hungarian(-padded)
    mapping = {
        a: b for a, b in result.mapping.items() if a < pred.k and b < truth.k
    }
    matched = int(sum(table.counts[a, b] for a, b in mapping.items()))
    return LabelMapping(mapping, -float(matched), matched)


def accuracy(pred: ClusterAssignment, truth: ClusterAssignment) -> float:
    """Fraction of samples that agree under the best one-to-one label mapping."""
    _check_lengths(pred, truth)
    if pred.n == 0:
        return 1.0
    return best_mapping(pred, truth).matched / pred.n


def nmi(pred: ClusterAssignment, truth: ClusterAssignment) -> float:
    """MI / max(H(pred), H(truth)) with base-2 logarithms; 0 when both entropies are 0.

    Sums are exactly rounded, so the value does not depend on argument order.
    """
    table = contingency(pred, truth)
    if table.n == 0:
        return 0.0
    joint = table.counts / table.n
    p_pred = table.counts.sum(axis=1) / table.n
    p_truth = table.counts.sum(axis=0) / table.n
    h_pred = float(entropy(p_pred[p_pred > 0], base=2))
    h_truth = float(entropy(p_truth[p_truth > 0], base=2))
    denominator = max(h_pred, h_truth)
    if denominator == 0.0:
        return 0.0
    a, b = np.nonzero(joint)
    terms = [
        joint[i, j] * math.log2(joint[i, j] / (p_pred[i] * p_truth[j]))
        for i, j in zip(a, b)
    ]
    return math.fsum(terms) / denominator
