"""Immutable value types shared by every module."""
from dataclasses import dataclass, field
from typing import Any, Dict, Sequence, Tuple

import numpy as np

from subspaceops.errors import DataError


def _frozen(array: np.ndarray) -> np.ndarray:
    """Return a read-only copy of ``array``."""
    out = np.array(array, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """Ambient-dimension x sample-count matrix; columns are samples."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"data matrix must be 2-D, got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise DataError(f"data matrix must be non-empty, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise DataError(
                f"data matrix has a non-finite entry in sample {bad[1]} "
                f"(dimension {bad[0]})"
            )
        object.__setattr__(self, "values", _frozen(values))

    @property
    def m(self) -> int:
        """Ambient dimension."""
        return self.values.shape[0]

    @property
    def n(self) -> int:
        """Number of samples."""
        return self.values.shape[1]

    def columns(self, indices: Sequence[int]) -> "DataMatrix":
        """Sub-matrix made of the given columns, in the given order."""
        return DataMatrix(self.values[:, np.asarray(indices, dtype=int)])


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    """Per-sample integer labels in [0, k)."""

    labels: np.ndarray
    k: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise DataError("labels must be a 1-D vector")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise DataError("labels must be integers")
        labels = labels.astype(np.int64)
        if self.k < 1:
            raise DataError(f"k must be positive, got {self.k}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.k):
            raise DataError(f"labels must lie in [0, {self.k})")
        object.__setattr__(self, "labels", _frozen(labels))

    @property
    def n(self) -> int:
        """Number of labelled samples."""
        return int(self.labels.size)

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "ClusterAssignment":
        """Build an assignment whose k is one more than the largest label."""
        labels = np.asarray(labels, dtype=np.int64)
        k = int(labels.max()) + 1 if labels.size else 1
        return cls(labels, k)

    def subset(self, indices: Sequence[int]) -> "ClusterAssignment":
        """Labels of the given samples, keeping k."""
        return ClusterAssignment(self.labels[np.asarray(indices, dtype=int)], self.k)


@dataclass(frozen=True)
class SolverReport:
    """Outcome of an iterative solver.

    ``residual_norm`` is the quantity the stopping test compared against its
    tolerance, so ``converged`` implies ``residual_norm <= tolerance``.
    """

    iterations: int
    objective: float
    residual_norm: float
    converged: bool

    def to_dict(self) -> Dict[str, Any]:
        """JSON-friendly view."""
        return {
            "iterations": int(self.iterations),
            "objective": float(self.objective),
            "residual_norm": float(self.residual_norm),
            "converged": bool(self.converged),
        }


@dataclass(frozen=True, eq=False)
class CoefficientMatrix:
    """Representation coefficients; column i codes sample i over a dictionary."""

    values: np.ndarray
    reports: Tuple[SolverReport, ...] = field(default_factory=tuple)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"coefficients must be 2-D, got shape {values.shape}")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "reports", tuple(self.reports))

    @property
    def converged(self) -> bool:
        """True when every attached solver report converged."""
        return all(report.converged for report in self.reports)

    def summary(self) -> Dict[str, Any]:
        """Aggregate of the per-column solver reports."""
        if not self.reports:
            return {"columns": 0, "converged": 0, "max_iterations": 0, "objective": 0.0}
        return {
            "columns": len(self.reports),
            "converged": sum(1 for r in self.reports if r.converged),
            "max_iterations": max(r.iterations for r in self.reports),
            "objective": float(sum(r.objective for r in self.reports)),
        }
