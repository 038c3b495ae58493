"""Out-of-sample assignment by linear coding over the in-sample dictionary.

Each new point is coded over the clustered in-sample data, either with the ridge
closed form ``(X^T X + gamma I)^-1 X^T x`` or with the sparse coder, and is given the
class whose coefficients reconstruct it with the smallest (optionally regularised)
residual.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import linalg

from subspaceops.errors import DataError, UnassignableError
from subspaceops.sparse_coding import SparseSelfRepConfig, solve_lasso
from subspaceops.types import ClusterAssignment, DataMatrix

logger = logging.getLogger(__name__)

MODES = ("ridge", "sparse")
DEFAULT_GAMMA = 1e-6


@dataclass(frozen=True, eq=False)
class ClassDictionary:
    """Labelled in-sample data with the cached ridge projector."""

    X: DataMatrix
    labels: ClusterAssignment
    projector: np.ndarray
    gamma: float

    @property
    def k(self) -> int:
        """Number of classes."""
        return self.labels.k

    def masks(self) -> np.ndarray:
        """k x p boolean matrix; row j selects the columns labelled j."""
        return self.labels.labels[None, :] == np.arange(self.k)[:, None]


@dataclass(frozen=True, eq=False)
class Assignment:
    """Label of one point with its class residuals and coefficients."""

    label: int
    residuals: np.ndarray
    coefficients: np.ndarray


def build_dictionary(
    X: DataMatrix,
    labels: ClusterAssignment,
    gamma: float = DEFAULT_GAMMA,
    exclude: Optional[Sequence[int]] = None
) -> ClassDictionary:
    """Factor X^T X + gamma I once and cache the projector.

    Columns listed in ``exclude`` (e.g. corrupted samples) are dropped first.
    """
    if not gamma > 0:
        raise DataError(f"gamma must be positive, got {gamma}")
    if labels.n != X.n:
        raise DataError(f"{labels.n} labels for {X.n} dictionary columns")
    if exclude is not None and len(exclude):
        keep = np.setdiff1d(np.arange(X.n), np.asarray(exclude, dtype=int))
        if keep.size == 0:
            raise DataError("every dictionary column was excluded")
        logger.info("Excluding %d corrupted columns from the dictionary", X.n - keep.size)
        X = X.columns(keep)
        labels = labels.subset(keep)

    values = X.values
    system = values.T @ values + gamma * np.eye(X.n)
    factor = linalg.cho_factor(system)
    projector = linalg.cho_solve(factor, values.T)
    projector.setflags(write=False)
    return ClassDictionary(X, labels, projector, gamma)


def _vector(dictionary: ClassDictionary, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != dictionary.X.m:
        raise DataError(
            f"point has dimension {x.size}, dictionary has {dictionary.X.m}"
        )
    return x


def ridge_code(dictionary: ClassDictionary, x: np.ndarray) -> np.ndarray:
    """c = (X^T X + gamma I)^-1 X^T x."""
    return dictionary.projector @ _vector(dictionary, x)


def sparse_code_oos(
    dictionary: ClassDictionary,
    x: np.ndarray,
    delta: float,
    cfg: Optional[SparseSelfRepConfig] = None
) -> np.ndarray:
    """Sparse code of x over the whole dictionary (no zeroed column)."""
    cfg = cfg or SparseSelfRepConfig()
    cfg = SparseSelfRepConfig(
        lambda_=cfg.lambda_, delta=delta, max_iterations=cfg.max_iterations,
        kkt_tol=cfg.kkt_tol
    )
    code = solve_lasso(dictionary.X, _vector(dictionary, x), cfg.lambda_, cfg)
    if not code.report.converged:
        logger.warning("out-of-sample sparse code did not converge")
    return code.coefficients


def _residual_matrix(
    dictionary: ClassDictionary,
    points: np.ndarray,
    codes: np.ndarray,
    regularized: bool
) -> np.ndarray:
    """k x q residuals for q points (columns of ``points``) and their codes."""
    X = dictionary.X.values
    masks = dictionary.masks()
    residuals = np.empty((dictionary.k, points.shape[1]))
    for j, mask in enumerate(masks):
        partial = codes[mask]
        reconstruction_error = np.linalg.norm(points - X[:, mask] @ partial, axis=0)
        coefficient_norm = np.linalg.norm(partial, axis=0)
        empty = coefficient_norm == 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            if regularized:
                row = reconstruction_error / coefficient_norm
            else:
                row = reconstruction_error.copy()
        row[empty] = np.inf
        residuals[j] = row
    return residuals


def class_residuals(
    dictionary: ClassDictionary,
    x: np.ndarray,
    c: np.ndarray,
    regularized: bool = True
) -> np.ndarray:
    """r_j = ||x - X delta_j(c)|| (divided by ||delta_j(c)|| when regularised).

    A class whose masked coefficients are all zero gets +infinity.
    """
    x = _vector(dictionary, x)
    c = np.asarray(c, dtype=np.float64).ravel()
    if c.size != dictionary.X.n:
        raise DataError(f"code has length {c.size}, dictionary has {dictionary.X.n}")
    return _residual_matrix(dictionary, x[:, None], c[:, None], regularized)[:, 0]


def _code(
    dictionary: ClassDictionary,
    x: np.ndarray,
    mode: str,
    delta: float,
    cfg: Optional[SparseSelfRepConfig]
) -> np.ndarray:
    if mode == "ridge":
        return ridge_code(dictionary, x)
    if mode == "sparse":
        return sparse_code_oos(dictionary, x, delta, cfg)
    raise DataError(f"mode must be one of {', '.join(MODES)}, got {mode!r}")


def assign(
    dictionary: ClassDictionary,
    x: np.ndarray,
    mode: str = "ridge",
    regularized: bool = True,
    delta: float = 1e-3,
    cfg: Optional[SparseSelfRepConfig] = None
) -> Assignment:
    """Code x, compute class residuals, take the argmin (lowest index on ties)."""
    c = _code(dictionary, x, mode, delta, cfg)
    residuals = class_residuals(dictionary, x, c, regularized)
    if np.all(np.isinf(residuals)):
        raise UnassignableError("point has no finite class residual (zero code)")
    return Assignment(int(np.argmin(residuals)), residuals, c)


def code_batch(
    dictionary: ClassDictionary,
    points: DataMatrix,
    mode: str = "ridge",
    delta: float = 1e-3,
    cfg: Optional[SparseSelfRepConfig] = None,
    n_jobs: int = 1
) -> np.ndarray:
    """p x q codes of the columns of ``points``; the projector is reused."""
    if points.m != dictionary.X.m:
        raise DataError(
            f"points have dimension {points.m}, dictionary has {dictionary.X.m}"
        )
    if mode == "ridge":
        return dictionary.projector @ points.values
    codes = Parallel(n_jobs=n_jobs)(
        delayed(_code)(dictionary, points.values[:, i], mode, delta, cfg)
        for i in range(points.n)
    )
    return np.column_stack(codes)


def classify_codes(
    dictionary: ClassDictionary,
    points: DataMatrix,
    codes: np.ndarray,
    regularized: bool = True
) -> ClusterAssignment:
    """Argmin-residual labels for coded points.

    Raises UnassignableError listing every column whose residuals are all infinite.
    """
    residuals = _residual_matrix(dictionary, points.values, codes, regularized)
    hopeless = np.flatnonzero(np.all(np.isinf(residuals), axis=0))
    if hopeless.size:
        raise UnassignableError(
            f"{hopeless.size} point(s) have no finite class residual: "
            f"columns {hopeless[:10].tolist()}",
            hopeless.tolist(),
        )
    return ClusterAssignment(np.argmin(residuals, axis=0), dictionary.k)


def assign_batch(
    dictionary: ClassDictionary,
    points: Optional[DataMatrix],
    mode: str = "ridge",
    regularized: bool = True,
    delta: float = 1e-3,
    cfg: Optional[SparseSelfRepConfig] = None,
    n_jobs: int = 1
) -> ClusterAssignment:
    """Assign every column of ``points``; ``None`` stands for an empty batch."""
    if points is None:
        return ClusterAssignment(np.array([], dtype=np.int64), dictionary.k)
    codes = code_batch(dictionary, points, mode, delta, cfg, n_jobs)
    return classify_codes(dictionary, points, codes, regularized)
