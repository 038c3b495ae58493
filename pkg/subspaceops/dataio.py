"""Data ingestion, PCA preprocessing, sampling and synthetic subspace data."""
import csv
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.stats import ortho_group

from subspaceops.errors import DataError
from subspaceops.types import ClusterAssignment, DataMatrix

logger = logging.getLogger(__name__)

CORRUPTED_LABEL = -1

PathLike = Union[str, Path]


@dataclass(frozen=True, eq=False)
class SampleSplit:
    """Seeded partition of sample indices into in-sample and out-of-sample sets."""

    in_sample: np.ndarray
    out_of_sample: np.ndarray
    seed: int

    @property
    def p(self) -> int:
        """Number of in-sample points."""
        return int(self.in_sample.size)


@dataclass(frozen=True, eq=False)
class TruthLabels:
    """Ground truth read from a sidecar; corrupted samples carry no subspace."""

    assignment: ClusterAssignment
    corrupted: np.ndarray

    @property
    def n(self) -> int:
        """Number of samples."""
        return self.assignment.n

    @property
    def clean(self) -> np.ndarray:
        """Indices of samples that belong to a subspace."""
        return np.flatnonzero(~self.corrupted)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Generated data with its ground truth.

    ``truth`` keeps, for corrupted columns, the subspace whose point was replaced.
    """

    data: DataMatrix
    truth: ClusterAssignment
    subspace_dims: Tuple[int, ...]
    corrupted: np.ndarray
    bases: Tuple[np.ndarray, ...]

    def truth_labels(self) -> TruthLabels:
        """Ground truth in the sidecar convention."""
        return TruthLabels(self.truth, self.corrupted.copy())


def load_csv(path: PathLike, has_header: bool = False) -> DataMatrix:
    """Read a CSV whose rows are samples into a DataMatrix with sample columns."""
    rows: List[List[float]] = []
    width: Optional[int] = None
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            if has_header:
                next(reader, None)
            for row in reader:
                row_number = reader.line_num
                if not row or all(not cell.strip() for cell in row):
                    continue
                if width is None:
                    width = len(row)
                elif len(row) != width:
                    raise DataError(
                        f"{path}: row {row_number} has {len(row)} columns, "
                        f"expected {width}"
                    )
                parsed = []
                for column_number, cell in enumerate(row, start=1):
                    try:
                        value = float(cell)
                    except ValueError as e:
                        raise DataError(
                            f"{path}: non-numeric value {cell.strip()!r} at row "
                            f"{row_number}, column {column_number}"
                        ) from e
                    if not np.isfinite(value):
                        raise DataError(
                            f"{path}: non-finite value {cell.strip()!r} at row "
                            f"{row_number}, column {column_number}"
                        )
                    parsed.append(value)
                rows.append(parsed)
    except OSError as e:
        raise DataError(f"could not read {path}: {e}") from e

    if not rows:
        raise DataError(f"{path}: no data rows")
    logger.debug("Loaded %d samples of dimension %d from %s", len(rows), width, path)
    return DataMatrix(np.array(rows, dtype=np.float64).T)


def save_csv(data: DataMatrix, path: PathLike) -> None:
    """Write samples as rows; floats are written round-trip exact."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for column in data.values.T:
            f.write(",".join("%.17g" % value for value in column))
            f.write("\n")


def load_labels(path: PathLike, n: Optional[int] = None) -> TruthLabels:
    """Read a label sidecar: one integer per line, -1 marks a corrupted sample."""
    values: List[int] = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            for line_number, line in enumerate(f, start=1):
                text = line.strip()
                if not text:
                    continue
                try:
                    values.append(int(text))
                except ValueError as e:
                    raise DataError(
                        f"{path}: line {line_number} is not an integer: {text!r}"
                    ) from e
    except OSError as e:
        raise DataError(f"could not read {path}: {e}") from e

    labels = np.array(values, dtype=np.int64)
    if n is not None and labels.size != n:
        raise DataError(f"{path}: expected {n} labels, found {labels.size}")
    if labels.size and labels.min() < CORRUPTED_LABEL:
        raise DataError(f"{path}: labels must be >= {CORRUPTED_LABEL}")
    corrupted = labels == CORRUPTED_LABEL
    k = int(labels.max()) + 1 if labels.size and labels.max() >= 0 else 1
    # corrupted slots get label 0 so the assignment stays valid; use the mask
    assignment = ClusterAssignment(np.where(corrupted, 0, labels), k)
    return TruthLabels(assignment, corrupted)


def save_labels(
    labels: Sequence[int],
    path: PathLike,
    corrupted: Optional[np.ndarray] = None
) -> None:
    """Write one integer per line; corrupted samples are written as -1."""
    labels = np.asarray(labels, dtype=np.int64)
    if corrupted is not None:
        labels = np.where(np.asarray(corrupted, dtype=bool), CORRUPTED_LABEL, labels)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for label in labels:
            f.write(f"{int(label)}\n")


def pca_retain_energy(Y: DataMatrix, energy: float) -> DataMatrix:
    """Project centred samples onto the fewest principal directions holding ``energy``.

    The retained count d is the smallest number of leading directions whose
    cumulative squared singular values reach ``energy`` times the total.
    """
    if not 0.0 < energy <= 1.0:
        raise DataError(f"energy must lie in (0, 1], got {energy}")

    centred = Y.values - Y.values.mean(axis=1, keepdims=True)
    U, s, _ = linalg.svd(centred, full_matrices=False)
    squared = s ** 2
    total = squared.sum()
    if total == 0.0:
        logger.warning("PCA input has zero variance; keeping a single direction")
        return DataMatrix(np.zeros((1, Y.n)))

    ratio = np.cumsum(squared) / total
    # slack absorbs rounding in the cumulative sum for energy == 1
    d = int(np.searchsorted(ratio, energy - 1e-12)) + 1
    d = min(max(d, 1), s.size)
    logger.info("PCA keeps %d of %d directions (energy %.4f)", d, s.size, ratio[d - 1])
    return DataMatrix(U[:, :d].T @ centred)


def uniform_split(n: int, p: int, seed: int) -> SampleSplit:
    """Draw p in-sample indices uniformly without replacement."""
    if p < 1:
        raise DataError(f"p must be at least 1, got {p}")
    if p > n:
        raise DataError(f"p={p} exceeds the number of samples n={n}")
    rng = np.random.default_rng(seed)
    in_sample = np.sort(rng.choice(n, size=p, replace=False))
    out_of_sample = np.setdiff1d(np.arange(n), in_sample, assume_unique=True)
    return SampleSplit(in_sample, out_of_sample, seed)


def synth_subspaces(
    k: int,
    ambient: int,
    dim_per: Sequence[int],
    points_per: Sequence[int],
    noise_sigma: float = 0.0,
    corrupt_frac: float = 0.0,
    seed: int = 0
) -> LabeledDataset:
    """Sample points from k independent subspaces, optionally noisy and corrupted.

    Each subspace is spanned by its own block of coordinates of one shared random
    rotation, which makes the subspaces independent (indeed orthogonal) by
    construction. Columns are grouped by subspace.
    """
    dim_per = [int(d) for d in dim_per]
    points_per = [int(c) for c in points_per]
    if len(dim_per) != k or len(points_per) != k:
        raise DataError(
            f"expected {k} subspace dimensions and point counts, got "
            f"{len(dim_per)} and {len(points_per)}"
        )
    if any(d < 1 for d in dim_per):
        raise DataError("subspace dimensions must be positive")
    if sum(dim_per) > ambient:
        raise DataError(
            f"subspace dimensions sum to {sum(dim_per)}, above the ambient "
            f"dimension {ambient}"
        )
    for i, (d, count) in enumerate(zip(dim_per, points_per)):
        if count < d:
            raise DataError(f"subspace {i} needs at least {d} points, got {count}")
    if noise_sigma < 0:
        raise DataError(f"noise_sigma must be non-negative, got {noise_sigma}")
    if not 0.0 <= corrupt_frac < 1.0:
        raise DataError(f"corrupt_frac must lie in [0, 1), got {corrupt_frac}")

    rng = np.random.default_rng(seed)
    if ambient > 1:
        rotation = ortho_group.rvs(dim=ambient, random_state=rng)
    else:
        rotation = np.ones((1, 1))

    bases = []
    blocks = []
    offset = 0
    for d, count in zip(dim_per, points_per):
        basis = rotation[:, offset:offset + d]
        offset += d
        points = basis @ rng.standard_normal((d, count))
        points /= np.linalg.norm(points, axis=0, keepdims=True)
        bases.append(basis)
        blocks.append(points)

    values = np.hstack(blocks)
    truth = np.repeat(np.arange(k), points_per)
    n = values.shape[1]

    if noise_sigma > 0:
        values = values + noise_sigma * rng.standard_normal(values.shape)

    corrupted = np.zeros(n, dtype=bool)
    n_corrupt = int(round(corrupt_frac * n))
    if n_corrupt:
        chosen = rng.choice(n, size=n_corrupt, replace=False)
        outliers = rng.standard_normal((ambient, n_corrupt))
        values[:, chosen] = outliers / np.linalg.norm(outliers, axis=0, keepdims=True)
        corrupted[chosen] = True
        logger.debug("Replaced %d of %d columns with outliers", n_corrupt, n)

    return LabeledDataset(
        data=DataMatrix(values),
        truth=ClusterAssignment(truth, k),
        subspace_dims=tuple(dim_per),
        corrupted=corrupted,
        bases=tuple(bases),
    )


def rank_coverage(
    X: DataMatrix,
    in_labels: ClusterAssignment,
    Y: DataMatrix,
    truth: ClusterAssignment,
    tol: float = 1e-8
) -> List[Tuple[int, int]]:
    """Per-class (rank of in-sample columns, rank of all columns) pairs.

    Ranks count singular values above ``tol`` times the largest one.
    """
    coverage = []
    for j in range(truth.k):
        coverage.append((
            _rank(X.values[:, in_labels.labels == j], tol),
            _rank(Y.values[:, truth.labels == j], tol),
        ))
    return coverage


def _rank(values: np.ndarray, tol: float) -> int:
    if values.size == 0:
        return 0
    s = linalg.svdvals(values)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def ensure_dir(path: PathLike) -> None:
    """Create the parent directory of ``path`` when it does not exist."""
    parent = os.path.dirname(os.fspath(path))
    if parent and not os.path.exists(parent):
        logger.info("Creating output directory: %s", parent)
        os.makedirs(parent, exist_ok=True)
