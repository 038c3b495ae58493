"""l1-regularised coding: a LASSO solver and sparse self-representation.

The LASSO objective is ``lambda_ * ||y - D c||^2 + ||c||_1``. Dividing by
``2 * lambda_`` gives the normalised form ``1/2 ||y - D c||^2 + w ||c||_1`` with
``w = 1 / (2 * lambda_)`` (``SparseSelfRepConfig.l1_weight``); ``c = 0`` is optimal
exactly when ``w >= ||D^T y||_inf``.
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from joblib import Parallel, delayed

from subspaceops.errors import DataError
from subspaceops.types import CoefficientMatrix, DataMatrix, SolverReport

logger = logging.getLogger(__name__)

SUPPORT_EPS = 1e-12
POWER_ITERATIONS = 50
POWER_TOL = 1e-8
# power iteration approaches the top eigenvalue from below
LIPSCHITZ_PAD = 1.01


@dataclass(frozen=True)
class SparseSelfRepConfig:
    """Settings of the sparse coder.

    ``lambda_`` weights the fidelity term; ``delta`` > 0 stops the iteration as soon
    as the reconstruction residual is at most it.
    """

    lambda_: float = 5e4
    delta: float = 1e-3
    max_iterations: int = 5000
    kkt_tol: float = 1e-4

    def __post_init__(self):
        if not self.lambda_ > 0:
            raise DataError(f"lambda must be positive, got {self.lambda_}")
        if self.delta < 0:
            raise DataError(f"delta must be non-negative, got {self.delta}")
        if not self.kkt_tol > 0:
            raise DataError(f"kkt_tol must be positive, got {self.kkt_tol}")
        if self.max_iterations < 1:
            raise DataError("max_iterations must be at least 1")

    @property
    def l1_weight(self) -> float:
        """Weight of ||c||_1 in the normalised objective."""
        return 1.0 / (2.0 * self.lambda_)

    @classmethod
    def from_l1_weight(cls, l1_weight: float, **kwargs: Any) -> "SparseSelfRepConfig":
        """Build a config from the normalised-objective l1 weight."""
        if not l1_weight > 0:
            raise DataError(f"l1 weight must be positive, got {l1_weight}")
        return cls(lambda_=1.0 / (2.0 * l1_weight), **kwargs)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SparseSelfRepConfig":
        """Create a config from a settings dictionary."""
        return cls(
            lambda_=float(data.get("lambda", cls.lambda_)),
            delta=float(data.get("delta", cls.delta)),
            max_iterations=int(data.get("max_iterations", cls.max_iterations)),
            kkt_tol=float(data.get("kkt_tol", cls.kkt_tol)),
        )


@dataclass(frozen=True, eq=False)
class SparseCode:
    """Sparse code of one vector over a dictionary."""

    coefficients: np.ndarray
    support: np.ndarray
    report: SolverReport


def soft_threshold(x: Union[float, np.ndarray], tau: float) -> Union[float, np.ndarray]:
    """Proximal operator of ``tau * |.|``: sign(x) * max(|x| - tau, 0)."""
    if tau < 0:
        raise DataError(f"threshold must be non-negative, got {tau}")
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def spectral_norm_squared(gram: np.ndarray) -> float:
    """Largest eigenvalue of a Gram matrix by power iteration."""
    size = gram.shape[0]
    if size == 0 or not np.any(gram):
        return 0.0
    v = np.ones(size) / np.sqrt(size)
    estimate = 0.0
    for _ in range(POWER_ITERATIONS):
        w = gram @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # start vector in the null space; restart from a fixed alternative
            v = np.arange(1, size + 1, dtype=np.float64)
            v /= np.linalg.norm(v)
            continue
        previous = estimate
        estimate = float(v @ w)
        v = w / norm
        if abs(estimate - previous) <= POWER_TOL * max(abs(estimate), 1.0):
            break
    return max(estimate, float(np.max(np.diag(gram))))


def _kkt_violation(
    c: np.ndarray,
    correlation: np.ndarray,
    half_weight: float
) -> float:
    """Relative violation of the LASSO stationarity conditions.

    ``correlation`` is D^T (y - D c); ``half_weight`` is the normalised l1 weight.
    """
    scaled = correlation / half_weight
    on = np.abs(c) >= SUPPORT_EPS
    off_violation = np.max(np.abs(scaled[~on]) - 1.0, initial=0.0)
    on_violation = np.max(np.abs(scaled[on] - np.sign(c[on])), initial=0.0)
    return float(max(off_violation, on_violation, 0.0))


def _solve_gram(
    gram: np.ndarray,
    b: np.ndarray,
    yy: float,
    lambda_: float,
    cfg: SparseSelfRepConfig,
    lipschitz_gram: Optional[float] = None,
    excluded: Optional[int] = None
) -> SparseCode:
    """FISTA with gradient restart on the Gram form of the LASSO.

    ``gram`` = D^T D, ``b`` = D^T y, ``yy`` = y^T y. Coefficient ``excluded`` is held
    at zero, which solves over D with that column removed without copying ``gram``;
    ``b[excluded]`` must be zero.
    """
    size = b.size
    half_weight = 1.0 / (2.0 * lambda_)

    def finish(c, gc, iterations, residual, converged):
        c = np.where(np.abs(c) < SUPPORT_EPS, 0.0, c)
        fidelity = max(yy - 2.0 * b @ c + c @ gc, 0.0)
        objective = lambda_ * fidelity + np.abs(c).sum()
        return SparseCode(
            coefficients=c,
            support=np.flatnonzero(c),
            report=SolverReport(iterations, float(objective), float(residual), converged),
        )

    zeros = np.zeros(size)
    if yy == 0.0:
        return finish(zeros, zeros, 0, 0.0, True)
    if cfg.delta > 0 and np.sqrt(yy) <= cfg.delta:
        return finish(zeros, zeros, 0, np.sqrt(yy), True)

    if lipschitz_gram is None:
        lipschitz_gram = spectral_norm_squared(gram)
    if lipschitz_gram == 0.0:
        # empty dictionary: the zero code is the minimiser
        return finish(zeros, zeros, 0, 0.0, True)
    step = 1.0 / (2.0 * lambda_ * LIPSCHITZ_PAD * lipschitz_gram)
    threshold = step

    c = zeros.copy()
    gc = zeros.copy()
    z, gz = c, gc
    t = 1.0
    best = (c, gc, np.inf)
    violation = np.inf
    residual = np.sqrt(yy)

    for iteration in range(1, cfg.max_iterations + 1):
        gradient = 2.0 * lambda_ * (gz - b)
        c_next = soft_threshold(z - step * gradient, threshold)
        if excluded is not None:
            c_next[excluded] = 0.0
        gc_next = gram @ c_next

        residual = np.sqrt(max(yy - 2.0 * b @ c_next + c_next @ gc_next, 0.0))
        if cfg.delta > 0 and residual <= cfg.delta:
            return finish(c_next, gc_next, iteration, residual, True)

        correlation = b - gc_next
        if excluded is not None:
            correlation[excluded] = 0.0
        violation = _kkt_violation(c_next, correlation, half_weight)
        if violation < best[2]:
            best = (c_next, gc_next, violation)
        if violation <= cfg.kkt_tol:
            return finish(c_next, gc_next, iteration, violation, True)

        if (z - c_next) @ (c_next - c) > 0:
            t = 1.0
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
        beta = (t - 1.0) / t_next
        z = c_next + beta * (c_next - c)
        gz = gc_next + beta * (gc_next - gc)
        c, gc, t = c_next, gc_next, t_next

    logger.debug(
        "LASSO stopped after %d iterations, KKT violation %.3e", cfg.max_iterations,
        best[2]
    )
    return finish(best[0], best[1], cfg.max_iterations, best[2], False)


def solve_lasso(
    dictionary: DataMatrix,
    y: np.ndarray,
    lambda_: float,
    cfg: Optional[SparseSelfRepConfig] = None
) -> SparseCode:
    """Minimise ``lambda_ * ||y - D c||^2 + ||c||_1`` over c.

    Stops early once the residual is at most ``cfg.delta``; otherwise runs until the
    KKT violation is at most ``cfg.kkt_tol`` or ``cfg.max_iterations`` is reached,
    in which case the best iterate is returned with ``converged=False``.
    """
    cfg = cfg or SparseSelfRepConfig(lambda_=lambda_)
    if not lambda_ > 0:
        raise DataError(f"lambda must be positive, got {lambda_}")
    y = np.asarray(y, dtype=np.float64).ravel()
    D = dictionary.values
    if D.shape[0] != y.size:
        raise DataError(
            f"dictionary has {D.shape[0]} rows but the vector has length {y.size}"
        )
    return _solve_gram(D.T @ D, D.T @ y, float(y @ y), lambda_, cfg)


def _self_representation_column(
    gram: np.ndarray,
    i: int,
    yy: float,
    cfg: SparseSelfRepConfig,
    lipschitz_gram: float
) -> Tuple[np.ndarray, SolverReport]:
    b = gram[:, i].copy()
    b[i] = 0.0
    try:
        code = _solve_gram(
            gram, b, yy, cfg.lambda_, cfg, lipschitz_gram=lipschitz_gram, excluded=i
        )
    except Exception as e:
        raise DataError(f"sparse coding failed on column {i}: {e}") from e
    return code.coefficients, code.report


def sparse_self_representation(
    Y: DataMatrix,
    cfg: Optional[SparseSelfRepConfig] = None,
    n_jobs: int = 1
) -> CoefficientMatrix:
    """Code every column over the others: column i uses Y with column i zeroed.

    The diagonal of the result is exactly zero.
    """
    cfg = cfg or SparseSelfRepConfig()
    if Y.n < 2:
        raise DataError("self-representation needs at least two samples")
    values = Y.values
    gram = values.T @ values
    norms = np.einsum("ij,ij->j", values, values)
    # bounds the top eigenvalue of every principal submatrix
    lipschitz_gram = spectral_norm_squared(gram)
    logger.info("Sparse self-representation of %d samples (n_jobs=%d)", Y.n, n_jobs)

    results = Parallel(n_jobs=n_jobs)(
        delayed(_self_representation_column)(
            gram, i, float(norms[i]), cfg, lipschitz_gram
        )
        for i in range(Y.n)
    )
    C = np.zeros((Y.n, Y.n))
    reports = []
    for i, (coefficients, report) in enumerate(results):
        C[:, i] = coefficients
        reports.append(report)
    np.fill_diagonal(C, 0.0)

    unconverged = sum(1 for r in reports if not r.converged)
    if unconverged:
        logger.warning("%d of %d columns did not converge", unconverged, Y.n)
    return CoefficientMatrix(C, tuple(reports))
