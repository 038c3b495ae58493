"""Sampling, in-sample clustering, coding and classifying.

``cluster_data`` runs one configured algorithm on a loaded matrix and returns a
``RunReport``; ``run_cluster`` adds file input/output around it.
"""
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from subspaceops.dataio import (
    SampleSplit,
    TruthLabels,
    ensure_dir,
    load_csv,
    load_labels,
    pca_retain_energy,
    rank_coverage,
    save_labels,
    synth_subspaces,
    uniform_split,
)
from subspaceops.errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    SubspaceOpsError,
    UnassignableError,
    with_stage,
)
from subspaceops.experiment import RunConfig
from subspaceops.lowrank import corruption_lambda, solve_lrr
from subspaceops.metrics import accuracy, nmi
from subspaceops.oos import build_dictionary, classify_codes, code_batch
from subspaceops.sparse_coding import sparse_self_representation
from subspaceops.spectral import spectral_cluster
from subspaceops.types import ClusterAssignment, DataMatrix

logger = logging.getLogger(__name__)

STAGES = ("sampling", "in_sample_clustering", "coding", "classifying")
SWEEP_PARAMETERS = ("ssc.lambda", "ssc.delta", "lrr.lambda", "p")


@dataclass
class RunReport:
    """Result of one clustering run."""

    config: RunConfig
    labels: ClusterAssignment
    p: int
    stage_seconds: Dict[str, float]
    total_seconds: float
    solver: Dict[str, Any]
    converged: bool
    outliers: List[int] = field(default_factory=list)
    accuracy: Optional[float] = None
    nmi: Optional[float] = None
    rank_coverage: Optional[List[Tuple[int, int]]] = None

    @property
    def n(self) -> int:
        """Number of labelled samples."""
        return self.labels.n

    def to_dict(self) -> Dict[str, Any]:
        """JSON document with keys in a fixed order."""
        return {
            'algorithm': self.config.algorithm,
            'n': self.n,
            'k': self.config.k,
            'p': self.p,
            'seed': self.config.seed,
            'accuracy': self.accuracy,
            'nmi': self.nmi,
            'stage_seconds': {stage: self.stage_seconds[stage] for stage in STAGES},
            'total_seconds': self.total_seconds,
            'solver': self.solver,
            'converged': self.converged,
            'outliers': list(self.outliers),
            'rank_coverage': (
                None if self.rank_coverage is None
                else [list(pair) for pair in self.rank_coverage]
            ),
            'config': self.config.to_dict(),
            'labels': self.labels.labels.tolist(),
        }

    def to_json(self) -> str:
        """Serialised report."""
        return json.dumps(self.to_dict(), indent=2)


@contextmanager
def _stage(name: str, timings: Dict[str, float]) -> Iterator[None]:
    """Time a stage and prefix any error with the stage name."""
    logger.info("Stage %s started", name)
    start = time.perf_counter()
    try:
        yield
    except SubspaceOpsError as e:
        raise with_stage(name, e) from e
    except (ArithmeticError, np.linalg.LinAlgError) as e:
        raise DataError(f"[{name}] {e}") from e
    finally:
        timings[name] += time.perf_counter() - start
        logger.info("Stage %s took %.3fs", name, timings[name])


def _cluster_in_sample(
    X: DataMatrix,
    cfg: RunConfig
) -> Tuple[ClusterAssignment, Dict[str, Any], bool, np.ndarray]:
    """Self-representation plus spectral clustering of the in-sample columns.

    Returns labels, solver summary, convergence flag and the outlier columns of X.
    """
    outliers = np.array([], dtype=int)
    if cfg.algorithm in ("sssc", "ssc"):
        sparse_cfg = cfg.sparse_config()
        C = sparse_self_representation(X, sparse_cfg, n_jobs=cfg.n_jobs)
        solver = {'kind': 'sparse', 'lambda': sparse_cfg.lambda_, **C.summary()}
        converged = C.converged
    else:
        lambda_ = None
        if cfg.auto_lambda:
            lambda_ = corruption_lambda(X, cfg.outlier_fraction)
            logger.info("Derived lrr.lambda=%.6g from outlier fraction %.3f",
                        lambda_, cfg.outlier_fraction)
        lrr_cfg = cfg.lrr_config(lambda_)
        solution = solve_lrr(X, lrr_cfg)
        C = solution.C
        outliers = solution.outliers
        solver = {
            'kind': 'lowrank',
            'lambda': lrr_cfg.lambda_,
            'error_norm': lrr_cfg.error_norm,
            **solution.report.to_dict(),
        }
        converged = solution.report.converged

    labels = spectral_cluster(
        C,
        cfg.k,
        restarts=cfg.spectral.restarts,
        seed=cfg.seed,
        row_normalize=cfg.spectral.row_normalize,
        eigensolver=cfg.spectral.eigensolver,
    )
    return labels, solver, converged, outliers


def _score(
    Y: DataMatrix,
    labels: ClusterAssignment,
    split: SampleSplit,
    truth: TruthLabels
) -> Tuple[float, float, Optional[List[Tuple[int, int]]]]:
    """Accuracy and NMI over uncorrupted samples, and per-class rank coverage."""
    clean = truth.clean
    pred = labels.subset(clean)
    reference = truth.assignment.subset(clean)
    scores = (accuracy(pred, reference), nmi(pred, reference))

    in_clean = split.in_sample[~truth.corrupted[split.in_sample]]
    if in_clean.size == 0:
        return scores[0], scores[1], None
    coverage = rank_coverage(
        Y.columns(in_clean),
        truth.assignment.subset(in_clean),
        Y.columns(clean),
        reference,
    )
    return scores[0], scores[1], coverage


def cluster_data(
    Y: DataMatrix,
    cfg: RunConfig,
    truth: Optional[TruthLabels] = None
) -> RunReport:
    """Run the configured algorithm on Y.

    sssc/slrr cluster ``p`` sampled columns and assign the rest by coding and
    minimal residual; ssc/lrr cluster every column directly. Labels are returned
    in the original column order. Non-convergence is reported, not raised.
    ``total_seconds`` is the wall time of the whole call, scoring included.
    """
    started = time.perf_counter()
    n = Y.n
    if truth is not None and truth.n != n:
        raise DataError(f"{truth.n} truth labels for {n} samples")
    whole_data = cfg.algorithm in ("ssc", "lrr")
    if whole_data and n > cfg.whole_data_cap:
        raise ConfigError(
            f"{cfg.algorithm} clusters all {n} samples at once, above the cap of "
            f"{cfg.whole_data_cap}; use s{cfg.algorithm} with an in-sample size p "
            f"or raise whole_data_cap"
        )
    p = n if whole_data else int(cfg.p)
    if p > n:
        raise ConfigError(f"p={p} exceeds the number of samples n={n}")

    timings = {stage: 0.0 for stage in STAGES}
    logger.info("Running %s on %d samples (k=%d, p=%d, seed=%d)",
                cfg.algorithm, n, cfg.k, p, cfg.seed)

    with _stage('sampling', timings):
        data = Y if cfg.pca_energy is None else pca_retain_energy(Y, cfg.pca_energy)
        split = uniform_split(n, p, cfg.seed)
        X = data.columns(split.in_sample)
        out_of_sample = (
            data.columns(split.out_of_sample) if split.out_of_sample.size else None
        )

    with _stage('in_sample_clustering', timings):
        in_labels, solver, converged, outliers = _cluster_in_sample(X, cfg)

    merged = np.empty(n, dtype=np.int64)
    merged[split.in_sample] = in_labels.labels
    if out_of_sample is not None:
        with _stage('coding', timings):
            dictionary = build_dictionary(X, in_labels, cfg.oos.gamma, exclude=outliers)
            codes = code_batch(
                dictionary,
                out_of_sample,
                mode=cfg.oos.mode,
                delta=cfg.oos.delta,
                cfg=cfg.sparse_config(),
                n_jobs=cfg.n_jobs,
            )
        with _stage('classifying', timings):
            try:
                oos_labels = classify_codes(
                    dictionary, out_of_sample, codes, cfg.oos.regularized
                )
            except UnassignableError as e:
                columns = split.out_of_sample[e.columns].tolist()
                raise UnassignableError(
                    f"{len(columns)} sample(s) have no finite class residual: "
                    f"columns {columns[:10]}",
                    columns,
                ) from e
        merged[split.out_of_sample] = oos_labels.labels

    labels = ClusterAssignment(merged, cfg.k)
    flagged = sorted(split.in_sample[outliers].tolist())
    if flagged:
        logger.warning("%d sample(s) flagged as corrupted and left out of the "
                       "dictionary", len(flagged))
    scores: Tuple[Optional[float], Optional[float], Any] = (None, None, None)
    if truth is not None:
        scores = _score(data, labels, split, truth)
        logger.info("Accuracy %.4f, NMI %.4f", scores[0], scores[1])

    total_seconds = time.perf_counter() - started
    unaccounted = total_seconds - sum(timings.values())
    logger.info("Finished in %.3fs (%.3fs outside the stages)",
                total_seconds, unaccounted)
    return RunReport(
        config=cfg,
        labels=labels,
        p=p,
        stage_seconds=timings,
        total_seconds=total_seconds,
        solver=solver,
        converged=converged,
        outliers=flagged,
        accuracy=scores[0],
        nmi=scores[1],
        rank_coverage=scores[2],
    )


def write_report(report: RunReport, output: Optional[str]) -> Optional[str]:
    """Write ``<output>`` (JSON) and ``<output>.labels``; returns the label path."""
    if not output:
        return None
    ensure_dir(output)
    with open(output, 'w', encoding='utf-8', newline='\n') as f:
        f.write(report.to_json())
        f.write('\n')
    label_path = f"{output}.labels"
    save_labels(report.labels.labels, label_path)
    logger.info("Report written to %s", output)
    return label_path


def load_input(cfg: RunConfig) -> Tuple[DataMatrix, Optional[TruthLabels]]:
    """Data matrix and, when configured, its ground truth."""
    if not cfg.input:
        raise ConfigError("no input file given")
    Y = load_csv(cfg.input, cfg.has_header)
    truth = load_labels(cfg.labels, Y.n) if cfg.labels else None
    return Y, truth


def run_cluster(cfg: RunConfig) -> RunReport:
    """Load the configured input, cluster it and write the report files."""
    started = time.perf_counter()
    Y, truth = load_input(cfg)
    logger.info("Loaded %d samples in %.3fs", Y.n, time.perf_counter() - started)
    report = cluster_data(Y, cfg, truth)
    write_report(report, cfg.output)
    return report


def check_converged(report: RunReport) -> None:
    """Raise ConvergenceError when the in-sample solver did not converge."""
    if not report.converged:
        raise ConvergenceError(
            f"{report.config.algorithm} solver did not converge: "
            f"{json.dumps(report.solver)}"
        )


def score_labels(pred: TruthLabels, truth: TruthLabels) -> Dict[str, float]:
    """Accuracy and NMI of predicted against true labels, skipping corrupted truth."""
    if pred.n != truth.n:
        raise DataError(f"label length mismatch: {pred.n} predicted, {truth.n} true")
    clean = truth.clean
    predicted = pred.assignment.subset(clean)
    reference = truth.assignment.subset(clean)
    return {'accuracy': accuracy(predicted, reference), 'nmi': nmi(predicted, reference)}


def _with_value(cfg: RunConfig, parameter: str, value: float) -> RunConfig:
    if parameter == 'p':
        return replace(cfg, p=int(value))
    section, key = parameter.split('.')
    settings = dict(getattr(cfg, section))
    settings[key] = value
    return replace(cfg, **{section: settings})


def sweep(
    Y: DataMatrix,
    truth: TruthLabels,
    cfg: RunConfig,
    parameter: str,
    values: Sequence[float]
) -> List[Dict[str, Any]]:
    """Accuracy, NMI and wall time for each value of one parameter."""
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(
            f"can only sweep {', '.join(SWEEP_PARAMETERS)}, got {parameter!r}"
        )
    if truth is None:
        raise ConfigError("a sweep needs ground-truth labels")
    rows = []
    for value in values:
        run_cfg = _with_value(cfg, parameter, value)
        logger.info("Sweep %s=%g", parameter, value)
        report = cluster_data(Y, run_cfg, truth)
        rows.append({
            'parameter': parameter,
            'value': value,
            'accuracy': report.accuracy,
            'nmi': report.nmi,
            'total_seconds': report.total_seconds,
            'converged': report.converged,
        })
    return rows


def bench_points(n: int, k: int) -> List[int]:
    """Split n points over k subspaces as evenly as possible."""
    base, extra = divmod(n, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


def bench(
    sizes: Sequence[int],
    cfg: RunConfig,
    ambient: int = 50,
    dim: int = 5,
    noise_sigma: float = 0.0
) -> Dict[str, Any]:
    """Scaling of the out-of-sample stages with n at fixed p.

    For each n a synthetic problem with ``cfg.k`` subspaces of dimension ``dim`` is
    generated and clustered; the slope of log(coding + classifying time) against
    log(n) is fitted when there are at least two sizes.
    """
    sizes = sorted(int(n) for n in sizes)
    if not sizes:
        raise ConfigError("bench needs at least one n")
    if cfg.p is None or cfg.p > sizes[0]:
        raise ConfigError(f"p={cfg.p} must not exceed the smallest n={sizes[0]}")
    rows = []
    for n in sizes:
        points = bench_points(n, cfg.k)
        if min(points) < dim:
            raise ConfigError(f"n={n} leaves fewer than {dim} points per subspace")
        dataset = synth_subspaces(
            cfg.k, ambient, [dim] * cfg.k, points, noise_sigma=noise_sigma,
            seed=cfg.seed
        )
        report = cluster_data(dataset.data, cfg, dataset.truth_labels())
        classification = report.stage_seconds['coding'] + report.stage_seconds['classifying']
        rows.append({
            'n': n,
            'classification_seconds': classification,
            'total_seconds': report.total_seconds,
            'accuracy': report.accuracy,
        })
        logger.info("bench n=%d: classification %.4fs, total %.4fs",
                    n, classification, report.total_seconds)

    slope = None
    times = np.array([row['classification_seconds'] for row in rows])
    if len(rows) > 1 and np.all(times > 0):
        slope = float(np.polyfit(np.log(sizes), np.log(times), 1)[0])
    return {'p': cfg.p, 'rows': rows, 'slope': slope}
