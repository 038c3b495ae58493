"""Command-line entry point: synth, cluster, bench, eval and sweep."""
import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional

from subspaceops.dataio import (
    ensure_dir,
    load_labels,
    save_csv,
    save_labels,
    synth_subspaces,
)
from subspaceops.errors import (
    EXIT_DATA,
    EXIT_OK,
    EXIT_USAGE,
    ConfigError,
    SubspaceOpsError,
    exit_code_for,
)
from subspaceops.experiment import ALGORITHMS, RunConfig, load_run_config, parse_grid
from subspaceops.lowrank import ERROR_NORMS
from subspaceops.oos import MODES
from subspaceops.pipeline import (
    SWEEP_PARAMETERS,
    bench,
    check_converged,
    load_input,
    run_cluster,
    score_labels,
    sweep,
)
from subspaceops.spectral import EIGENSOLVERS

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


class ArgumentParser(argparse.ArgumentParser):
    """argparse parser whose usage errors exit with EXIT_USAGE."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def configure_logging(log_file: Optional[str] = None, verbose: bool = False) -> None:
    """Console logging on stderr plus an optional run-history file."""
    handlers: List[logging.Handler] = [
        # Log to console
        logging.StreamHandler(sys.stderr)
    ]
    if log_file:
        ensure_dir(log_file)
        # Also log to a file, keeping track of all runs
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )


def _lambda_value(text: str):
    if text == 'auto':
        return text
    try:
        return float(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {text!r}") from e


def _int_list(text: str) -> List[int]:
    try:
        return [int(item) for item in text.split(',') if item.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def _emit(payload: Any) -> None:
    """Write machine-readable output to stdout."""
    sys.stdout.write(json.dumps(payload, indent=2))
    sys.stdout.write('\n')
    sys.stdout.flush()


def _add_run_options(parser: argparse.ArgumentParser, seed_required: bool) -> None:
    """Flags that mirror RunConfig; unset flags leave config-file values alone."""
    parser.add_argument("--config", type=str, help="experiment YAML file")
    parser.add_argument("--env", type=str, help="environment overlay name (dev, test, ...)")
    parser.add_argument("--algorithm", choices=ALGORITHMS)
    parser.add_argument("--k", type=int, help="number of subspaces")
    parser.add_argument("--p", type=int, help="in-sample size for sssc/slrr")
    parser.add_argument("--seed", type=int, required=seed_required)
    parser.add_argument("--input", type=str, help="CSV file, one sample per row")
    parser.add_argument("--labels", type=str, help="ground-truth label sidecar")
    parser.add_argument("--output", type=str, help="JSON report path")
    parser.add_argument("--has-header", action="store_const", const=True, default=None)
    parser.add_argument("--pca-energy", type=float)
    parser.add_argument("--ssc-lambda", type=float)
    parser.add_argument("--ssc-delta", type=float)
    parser.add_argument("--lrr-lambda", type=_lambda_value, help="number or 'auto'")
    parser.add_argument("--error-norm", choices=ERROR_NORMS)
    parser.add_argument("--outlier-fraction", type=float)
    parser.add_argument("--restarts", type=int)
    parser.add_argument("--eigensolver", choices=EIGENSOLVERS)
    parser.add_argument("--gamma", type=float)
    parser.add_argument("--oos-mode", choices=MODES)
    parser.add_argument(
        "--unregularized", dest="regularized", action="store_const", const=False,
        default=None, help="plain class residuals instead of the regularised ones"
    )
    parser.add_argument("--whole-data-cap", type=int)
    parser.add_argument("--n-jobs", type=int)


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        'algorithm': args.algorithm,
        'k': args.k,
        'p': args.p,
        'seed': args.seed,
        'data': {
            'input': args.input,
            'labels': args.labels,
            'output': args.output,
            'has_header': args.has_header,
        },
        'preprocess': {'pca_energy': args.pca_energy},
        'ssc': {'lambda': args.ssc_lambda, 'delta': args.ssc_delta},
        'lrr': {
            'lambda': args.lrr_lambda,
            'error_norm': args.error_norm,
            'outlier_fraction': args.outlier_fraction,
        },
        'spectral': {'restarts': args.restarts, 'eigensolver': args.eigensolver},
        'oos': {'gamma': args.gamma, 'mode': args.oos_mode, 'regularized': args.regularized},
        'whole_data_cap': args.whole_data_cap,
        'n_jobs': args.n_jobs,
    }


def _run_config(args: argparse.Namespace, extra: Optional[Dict[str, Any]] = None) -> RunConfig:
    overrides = _overrides(args)
    overrides.update(extra or {})
    filename = base_path = None
    if args.config:
        base_path, filename = os.path.split(args.config)
    config = load_run_config(filename, base_path, args.env, overrides)
    logger.info("Loaded run configuration: %s", config.name or config.algorithm)
    return config


def cmd_synth(args: argparse.Namespace) -> int:
    """Generate a synthetic union of subspaces and its label sidecar."""
    dims = args.dims if len(args.dims) > 1 else args.dims * args.k
    points = args.points if len(args.points) > 1 else args.points * args.k
    dataset = synth_subspaces(
        args.k, args.ambient, dims, points, noise_sigma=args.noise,
        corrupt_frac=args.corrupt_frac, seed=args.seed
    )
    labels_path = args.labels_output or f"{os.path.splitext(args.output)[0]}.labels"
    ensure_dir(args.output)
    ensure_dir(labels_path)
    save_csv(dataset.data, args.output)
    save_labels(dataset.truth.labels, labels_path, corrupted=dataset.corrupted)
    logger.info("Wrote %d samples to %s", dataset.data.n, args.output)
    _emit({
        'data': args.output,
        'labels': labels_path,
        'n': dataset.data.n,
        'ambient': dataset.data.m,
        'corrupted': int(dataset.corrupted.sum()),
    })
    return EXIT_OK


def cmd_cluster(args: argparse.Namespace) -> int:
    """Cluster the configured input; exit 3 when a solver did not converge."""
    config = _run_config(args)
    report = run_cluster(config)
    _emit(report.to_dict())
    check_converged(report)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    """Time the out-of-sample stages for growing n at fixed p."""
    config = _run_config(args, {'seed': args.seed if args.seed is not None else 0})
    result = bench(
        args.sizes, config, ambient=args.ambient, dim=args.dim, noise_sigma=args.noise
    )
    _emit(result)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    """Print accuracy and NMI of a predicted label file against the truth."""
    truth = load_labels(args.truth)
    pred = load_labels(args.pred)
    _emit(score_labels(pred, truth))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    """Accuracy/NMI/time table over a grid of one parameter."""
    config = _run_config(args)
    Y, truth = load_input(config)
    if truth is None:
        raise ConfigError("sweep needs --labels with the ground truth")
    _emit(sweep(Y, truth, config, args.parameter, parse_grid(args.values)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    """The subspaceops argument parser."""
    parser = ArgumentParser("subspaceops", description=__doc__)
    parser.add_argument("--log-file", type=str, help="also append logs to this file")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    subparsers = parser.add_subparsers(dest="command", required=True)

    synth = subparsers.add_parser("synth", help="generate synthetic subspace data")
    synth.add_argument("--k", type=int, required=True)
    synth.add_argument("--ambient", type=int, required=True)
    synth.add_argument("--dims", type=_int_list, required=True,
                       help="subspace dimensions, one value or one per subspace")
    synth.add_argument("--points", type=_int_list, required=True,
                       help="points per subspace, one value or one per subspace")
    synth.add_argument("--noise", type=float, default=0.0)
    synth.add_argument("--corrupt-frac", type=float, default=0.0)
    synth.add_argument("--seed", type=int, required=True)
    synth.add_argument("--output", type=str, required=True, help="data CSV path")
    synth.add_argument("--labels-output", type=str, help="label sidecar path")
    synth.set_defaults(func=cmd_synth)

    cluster = subparsers.add_parser("cluster", help="cluster a CSV data file")
    _add_run_options(cluster, seed_required=True)
    cluster.set_defaults(func=cmd_cluster)

    bench_parser = subparsers.add_parser("bench", help="scaling benchmark at fixed p")
    _add_run_options(bench_parser, seed_required=False)
    bench_parser.add_argument("--sizes", type=_int_list, required=True,
                              help="comma-separated n values")
    bench_parser.add_argument("--ambient", type=int, default=50)
    bench_parser.add_argument("--dim", type=int, default=5)
    bench_parser.add_argument("--noise", type=float, default=0.0)
    bench_parser.set_defaults(func=cmd_bench)

    evaluate = subparsers.add_parser("eval", help="score a label file against the truth")
    evaluate.add_argument("pred", type=str)
    evaluate.add_argument("truth", type=str)
    evaluate.set_defaults(func=cmd_eval)

    sweep_parser = subparsers.add_parser("sweep", help="grid over one parameter")
    _add_run_options(sweep_parser, seed_required=True)
    sweep_parser.add_argument("--parameter", choices=SWEEP_PARAMETERS, required=True)
    sweep_parser.add_argument("--values", type=str, required=True,
                              help="comma-separated grid, e.g. 1e-7,1e-6,1e-5")
    sweep_parser.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run the subcommand and map failures to exit codes."""
    args = build_parser().parse_args(argv)
    configure_logging(args.log_file, args.verbose)
    try:
        return args.func(args)
    except SubspaceOpsError as e:
        logger.error("%s", e)
        return exit_code_for(e)
    except OSError as e:
        logger.error("I/O failure: %s", e)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
