"""Spectral clustering of a representation matrix.

Affinity ``A = |C| + |C|^T``, Laplacian ``L = I - D^-1/2 A D^-1/2``, the k
eigenvectors of L with smallest eigenvalues, then k-means on the embedded rows.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import eigsh
from sklearn.cluster import KMeans
from sklearn.preprocessing import normalize

from subspaceops.errors import DataError, DegenerateAffinityError
from subspaceops.types import ClusterAssignment, CoefficientMatrix

logger = logging.getLogger(__name__)

EIGENSOLVERS = ("auto", "dense", "lanczos")
LANCZOS_THRESHOLD = 4000
KMEANS_MAX_ITER = 300
KMEANS_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class AffinityMatrix:
    """Symmetric non-negative similarity matrix."""

    values: np.ndarray

    @property
    def n(self) -> int:
        """Number of vertices."""
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class SpectralEmbedding:
    """Orthonormal eigenvectors (columns of V) with ascending eigenvalues."""

    V: np.ndarray
    eigenvalues: np.ndarray


def build_affinity(C: CoefficientMatrix) -> AffinityMatrix:
    """A = |C| + |C|^T."""
    values = C.values
    if values.shape[0] != values.shape[1]:
        raise DataError(f"coefficient matrix must be square, got {values.shape}")
    magnitude = np.abs(values)
    return AffinityMatrix(magnitude + magnitude.T)


def normalized_laplacian(A: AffinityMatrix) -> np.ndarray:
    """L = I - D^-1/2 A D^-1/2; isolated vertices get D^-1/2 = 0, so L_ii = 1."""
    degree = A.values.sum(axis=1)
    inv_sqrt = np.zeros_like(degree)
    connected = degree > 0
    inv_sqrt[connected] = 1.0 / np.sqrt(degree[connected])
    L = np.eye(A.n) - inv_sqrt[:, None] * A.values * inv_sqrt[None, :]
    return (L + L.T) / 2.0


def smallest_eigenvectors(
    L: np.ndarray,
    k: int,
    eigensolver: str = "auto",
    seed: int = 0
) -> SpectralEmbedding:
    """The k eigenpairs of the symmetrised L with algebraically smallest eigenvalues.

    The Lanczos start vector is drawn from ``seed``, so repeated calls agree.
    """
    n = L.shape[0]
    if not 1 <= k <= n:
        raise DataError(f"k must lie in [1, {n}], got {k}")
    if eigensolver not in EIGENSOLVERS:
        raise DataError(f"unknown eigensolver {eigensolver!r}")
    symmetric = (L + L.T) / 2.0
    if eigensolver == "auto":
        eigensolver = "lanczos" if n > LANCZOS_THRESHOLD else "dense"
    # Lanczos needs k < n
    if eigensolver == "lanczos" and k < n:
        v0 = np.random.default_rng(seed).uniform(-1.0, 1.0, n)
        eigenvalues, V = eigsh(symmetric, k=k, which="SA", v0=v0)
    else:
        eigenvalues, V = linalg.eigh(symmetric, subset_by_index=[0, k - 1])
    order = np.argsort(eigenvalues, kind="stable")
    return SpectralEmbedding(V[:, order], eigenvalues[order])


def kmeans_objective(points: np.ndarray, labels: np.ndarray) -> float:
    """Within-cluster sum of squared distances to the cluster means."""
    points = np.asarray(points, dtype=np.float64)
    total = 0.0
    for label in np.unique(labels):
        members = points[labels == label]
        total += float(np.sum((members - members.mean(axis=0)) ** 2))
    return total


def _canonical(labels: np.ndarray) -> np.ndarray:
    """Relabel so clusters are numbered by first appearance."""
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    mapping = np.empty(order.size, dtype=np.int64)
    mapping[order] = np.arange(order.size)
    return mapping[np.searchsorted(np.unique(labels), labels)]


def kmeans(
    points: np.ndarray,
    k: int,
    restarts: int = 20,
    seed: int = 0
) -> ClusterAssignment:
    """Lloyd iterations from k-means++ seeding, best of ``restarts`` runs."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k < 1:
        raise DataError(f"k must be positive, got {k}")
    if n < k:
        raise DataError(f"cannot form {k} clusters from {n} points")
    model = KMeans(
        n_clusters=k,
        init="k-means++",
        n_init=max(1, restarts),
        max_iter=KMEANS_MAX_ITER,
        tol=KMEANS_TOL,
        random_state=seed,
        algorithm="lloyd",
    )
    labels = model.fit_predict(points)
    logger.debug("k-means inertia %.6e after %d restarts", model.inertia_, restarts)
    return ClusterAssignment(_canonical(labels), k)


def spectral_cluster(
    C: CoefficientMatrix,
    k: int,
    restarts: int = 20,
    seed: int = 0,
    row_normalize: bool = True,
    eigensolver: str = "auto"
) -> ClusterAssignment:
    """build_affinity -> normalized_laplacian -> smallest_eigenvectors -> kmeans.

    With ``row_normalize`` the embedded rows are scaled to unit length before
    k-means; otherwise the unit-norm eigenvectors are used as they are.
    """
    A = build_affinity(C)
    if not np.any(A.values):
        raise DegenerateAffinityError(
            "affinity matrix is zero: the representation has no off-diagonal mass"
        )
    embedding = smallest_eigenvectors(normalized_laplacian(A), k, eigensolver, seed)
    logger.debug("Smallest Laplacian eigenvalues: %s", embedding.eigenvalues)
    rows = normalize(embedding.V) if row_normalize else embedding.V
    return kmeans(rows, k, restarts, seed)
