"""Low-rank representation solved by the inexact augmented Lagrange multiplier method.

Problem: ``min ||C||_* + lambda ||E||_l  s.t.  Y = Y C + E`` with the splitting
``C = J`` so that every sub-problem has a closed form.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import svds

from subspaceops.errors import DataError
from subspaceops.sparse_coding import soft_threshold
from subspaceops.types import CoefficientMatrix, DataMatrix, SolverReport

logger = logging.getLogger(__name__)

ERROR_NORMS = ("l21", "l1", "fro")
OUTLIER_FACTOR = 10.0
# columns below this fraction of the largest error column never count as outliers
OUTLIER_FLOOR = 1e-6
MONOTONE_SLACK = 1e-8


@dataclass(frozen=True)
class LrrConfig:
    """Settings of the inexact-ALM LRR solver.

    ``error_norm`` selects the penalty on E: ``l21`` (sample-specific corruption),
    ``l1`` (entrywise corruption) or ``fro`` (squared Frobenius, small dense noise).
    """

    lambda_: float = 1.0
    error_norm: str = "l21"
    mu_init: float = 1e-2
    rho: float = 1.5
    mu_max: float = 1e10
    constraint_tol: float = 1e-7
    max_iterations: int = 500
    rank_bound: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if not self.lambda_ > 0:
            raise DataError(f"lambda must be positive, got {self.lambda_}")
        if self.error_norm not in ERROR_NORMS:
            raise DataError(
                f"error_norm must be one of {', '.join(ERROR_NORMS)}, "
                f"got {self.error_norm!r}"
            )
        if not self.rho > 1:
            raise DataError(f"rho must exceed 1, got {self.rho}")
        if not 0 < self.mu_init < self.mu_max:
            raise DataError("mu_init must be positive and below mu_max")
        if not self.constraint_tol > 0:
            raise DataError("constraint_tol must be positive")
        if self.max_iterations < 1:
            raise DataError("max_iterations must be at least 1")
        if self.rank_bound is not None and self.rank_bound < 1:
            raise DataError("rank_bound must be positive when given")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LrrConfig":
        """Create a config from a settings dictionary."""
        rank_bound = data.get("rank_bound")
        return cls(
            lambda_=float(data.get("lambda", cls.lambda_)),
            error_norm=str(data.get("error_norm", cls.error_norm)),
            mu_init=float(data.get("mu_init", cls.mu_init)),
            rho=float(data.get("rho", cls.rho)),
            mu_max=float(data.get("mu_max", cls.mu_max)),
            constraint_tol=float(data.get("constraint_tol", cls.constraint_tol)),
            max_iterations=int(data.get("max_iterations", cls.max_iterations)),
            rank_bound=None if rank_bound is None else int(rank_bound),
            seed=int(data.get("seed", cls.seed)),
        )


@dataclass(frozen=True, eq=False)
class LrrSolution:
    """Coefficients C, error term E and the solver report."""

    C: CoefficientMatrix
    E: np.ndarray
    report: SolverReport
    outliers: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))


def svt(
    M: np.ndarray,
    tau: float,
    rank: Optional[int] = None,
    seed: int = 0
) -> np.ndarray:
    """Singular value thresholding: U max(S - tau, 0) V^T.

    With ``rank`` below the smaller dimension only the leading ``rank`` singular
    triplets are computed, from a start vector drawn from ``seed``.
    """
    if tau < 0:
        raise DataError(f"threshold must be non-negative, got {tau}")
    M = np.asarray(M, dtype=np.float64)
    if rank is not None and rank < min(M.shape) - 1:
        v0 = np.random.default_rng(seed).uniform(-1.0, 1.0, min(M.shape))
        U, s, Vt = svds(M, k=rank, v0=v0)
    else:
        U, s, Vt = linalg.svd(M, full_matrices=False)
    shrunk = np.maximum(s - tau, 0.0)
    keep = shrunk > 0
    return (U[:, keep] * shrunk[keep]) @ Vt[keep]


def l21_shrink(M: np.ndarray, tau: float) -> np.ndarray:
    """Column-wise shrinkage: column j becomes max(1 - tau/||m_j||, 0) m_j."""
    if tau < 0:
        raise DataError(f"threshold must be non-negative, got {tau}")
    M = np.asarray(M, dtype=np.float64)
    norms = np.linalg.norm(M, axis=0)
    scale = np.zeros_like(norms)
    positive = norms > 0
    scale[positive] = np.maximum(1.0 - tau / norms[positive], 0.0)
    return M * scale


def error_penalty(E: np.ndarray, error_norm: str) -> float:
    """Value of ||E||_l for the chosen error norm."""
    if error_norm == "l21":
        return float(np.linalg.norm(E, axis=0).sum())
    if error_norm == "l1":
        return float(np.abs(E).sum())
    return float(np.sum(E * E))


def _error_prox(Q: np.ndarray, weight: float, mu: float, error_norm: str) -> np.ndarray:
    """argmin_E weight*||E||_l + mu/2 ||E - Q||_F^2."""
    if error_norm == "l21":
        return l21_shrink(Q, weight / mu)
    if error_norm == "l1":
        return soft_threshold(Q, weight / mu)
    return Q * (mu / (mu + 2.0 * weight))


def detect_outliers(E: np.ndarray, factor: float = OUTLIER_FACTOR) -> np.ndarray:
    """Columns of E whose norm exceeds ``factor`` times the median column norm."""
    norms = np.linalg.norm(E, axis=0)
    if norms.size == 0 or norms.max() == 0.0:
        return np.array([], dtype=int)
    threshold = max(factor * np.median(norms), OUTLIER_FLOOR * norms.max())
    return np.flatnonzero(norms > threshold)


def corruption_lambda(X: DataMatrix, outlier_fraction: float) -> float:
    """``3 / (7 ||X||_2 sqrt(eps * p))``, the recovery weight for column corruption."""
    if not 0 < outlier_fraction < 1:
        raise DataError(
            f"outlier fraction must lie in (0, 1), got {outlier_fraction}"
        )
    spectral = linalg.norm(X.values, 2)
    if spectral == 0.0:
        raise DataError("cannot derive lambda from an all-zero matrix")
    return 3.0 / (7.0 * spectral * np.sqrt(outlier_fraction * X.n))


def solve_lrr(Y: DataMatrix, cfg: Optional[LrrConfig] = None) -> LrrSolution:
    """Approximately solve ``min ||C||_* + lambda ||E||_l s.t. Y = YC + E``.

    Alternates J = svt(C + M2/mu, 1/mu), a ridge solve for C, the error prox for E,
    multiplier ascent and mu <- min(rho mu, mu_max). Stops when both the constraint
    residual ||Y - YC - E||_F and the splitting residual ||C - J||_F are below
    ``constraint_tol * max(1, ||Y||_F)``. On non-convergence the last iterate is
    returned with ``converged=False``.
    """
    cfg = cfg or LrrConfig()
    if Y.n < 2:
        raise DataError("LRR needs at least two samples")

    values = Y.values
    m, n = values.shape
    gram = values.T @ values
    scale = max(1.0, float(np.linalg.norm(values)))
    factor = linalg.cho_factor(np.eye(n) + gram)

    C = np.zeros((n, n))
    J = np.zeros((n, n))
    E = np.zeros((m, n))
    M1 = np.zeros((m, n))
    M2 = np.zeros((n, n))
    mu = cfg.mu_init
    previous_lagrangian = np.inf
    constraint = np.inf
    splitting = np.inf

    logger.info(
        "Solving LRR on %d samples (lambda=%g, error_norm=%s)", n, cfg.lambda_,
        cfg.error_norm
    )
    iteration = 0
    for iteration in range(1, cfg.max_iterations + 1):
        J = svt(C + M2 / mu, 1.0 / mu, cfg.rank_bound, cfg.seed)
        rhs = gram - values.T @ E + J + (values.T @ M1 - M2) / mu
        C = linalg.cho_solve(factor, rhs)
        E = _error_prox(values - values @ C + M1 / mu, cfg.lambda_, mu, cfg.error_norm)

        primal = values - values @ C - E
        split = C - J
        M1 = M1 + mu * primal
        M2 = M2 + mu * split

        constraint = float(np.linalg.norm(primal)) / scale
        splitting = float(np.linalg.norm(split)) / scale

        if logger.isEnabledFor(logging.DEBUG):
            lagrangian = (
                linalg.svdvals(J).sum()
                + cfg.lambda_ * error_penalty(E, cfg.error_norm)
                + np.sum(M1 * primal) + np.sum(M2 * split)
                + mu / 2.0 * (np.sum(primal ** 2) + np.sum(split ** 2))
            )
            logger.debug(
                "LRR iteration %d: mu=%.2e constraint=%.3e split=%.3e lagrangian=%.6e",
                iteration, mu, constraint, splitting, lagrangian
            )
            if lagrangian > previous_lagrangian + MONOTONE_SLACK:
                logger.debug("augmented Lagrangian increased at iteration %d", iteration)
            previous_lagrangian = lagrangian

        if constraint < cfg.constraint_tol and splitting < cfg.constraint_tol:
            break
        mu = min(cfg.rho * mu, cfg.mu_max)

    converged = constraint < cfg.constraint_tol and splitting < cfg.constraint_tol
    objective = linalg.svdvals(C).sum() + cfg.lambda_ * error_penalty(E, cfg.error_norm)
    report = SolverReport(
        iterations=iteration,
        objective=float(objective),
        residual_norm=max(constraint, splitting),
        converged=converged,
    )
    if not converged:
        logger.warning(
            "LRR did not converge in %d iterations (residual %.3e)", iteration,
            report.residual_norm
        )
    outliers = detect_outliers(E)
    if outliers.size:
        logger.info("LRR flags %d corrupted columns", outliers.size)
    return LrrSolution(CoefficientMatrix(C, (report,)), E, report, outliers)
