"""Tests for the subspaceops command line."""
import json
import logging
from unittest.mock import patch

import pytest
import yaml

from subspaceops.cli import build_parser, main
from subspaceops.errors import EXIT_DATA, EXIT_NOT_CONVERGED, EXIT_OK, EXIT_USAGE


@pytest.fixture(autouse=True)
def restore_logging():
    """Undo the root-logger changes made by configure_logging."""
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    with patch("subspaceops.experiment.load_dotenv"):
        yield
    for handler in root.handlers:
        if handler not in handlers:
            handler.close()
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def synth_files(tmp_path, capsys):
    """Two noise-free subspaces written by the synth command."""
    data = tmp_path / "union.csv"
    code = main([
        "synth", "--k", "2", "--ambient", "20", "--dims", "3", "--points", "40",
        "--seed", "1", "--output", str(data),
    ])
    assert code == EXIT_OK
    capsys.readouterr()
    return data, tmp_path / "union.labels"


def emitted(capsys):
    """JSON document printed on stdout."""
    return json.loads(capsys.readouterr().out)


class TestSynth:
    """Tests for the synth command."""

    def test_files(self, synth_files):
        """One CSV row and one label line per sample."""
        data, labels = synth_files
        assert len(data.read_text().splitlines()) == 80
        assert len(data.read_text().splitlines()[0].split(",")) == 20
        assert labels.read_text().splitlines().count("0") == 40

    def test_reproducible(self, tmp_path, capsys):
        """The same seed writes byte-identical files."""
        paths, summaries = [], []
        for name in ("a.csv", "b.csv"):
            path = tmp_path / name
            main(["synth", "--k", "2", "--ambient", "10", "--dims", "2,3",
                  "--points", "15,25", "--noise", "0.01", "--seed", "5",
                  "--output", str(path)])
            paths.append(path)
            summaries.append(emitted(capsys))
        assert paths[0].read_bytes() == paths[1].read_bytes()
        assert [summary["n"] for summary in summaries] == [40, 40]

    def test_corrupted_marked(self, tmp_path, capsys):
        """Corrupted samples carry the label -1."""
        labels = tmp_path / "truth.labels"
        code = main(["synth", "--k", "2", "--ambient", "20", "--dims", "3",
                     "--points", "40", "--corrupt-frac", "0.1", "--seed", "2",
                     "--output", str(tmp_path / "c.csv"), "--labels-output", str(labels)])
        assert code == EXIT_OK
        assert labels.read_text().splitlines().count("-1") == 8
        assert emitted(capsys)["corrupted"] == 8


class TestCluster:
    """Tests for the cluster command."""

    def test_report(self, synth_files, tmp_path, capsys):
        """A run prints the report, writes it and writes the label sidecar."""
        data, labels = synth_files
        output = tmp_path / "report.json"
        code = main([
            "cluster", "--algorithm", "sssc", "--k", "2", "--p", "30", "--seed", "0",
            "--input", str(data), "--labels", str(labels), "--output", str(output),
        ])
        assert code == EXIT_OK
        document = emitted(capsys)
        assert list(document)[:5] == ["algorithm", "n", "k", "p", "seed"]
        assert document["accuracy"] == 1.0
        assert json.loads(output.read_text())["labels"] == document["labels"]
        assert len((tmp_path / "report.json.labels").read_text().splitlines()) == 80

    def test_seed_required(self, synth_files):
        """cluster without --seed is a usage error."""
        data, _ = synth_files
        with pytest.raises(SystemExit) as excinfo:
            main(["cluster", "--k", "2", "--p", "30", "--input", str(data)])
        assert excinfo.value.code == EXIT_USAGE

    def test_missing_input(self, tmp_path):
        """An unreadable input file is a data failure."""
        code = main(["cluster", "--k", "2", "--p", "5", "--seed", "0",
                     "--input", str(tmp_path / "absent.csv")])
        assert code == EXIT_DATA

    def test_whole_data_cap(self, synth_files):
        """ssc above the cap is refused as a usage error."""
        data, _ = synth_files
        code = main(["cluster", "--algorithm", "ssc", "--k", "2", "--seed", "0",
                     "--input", str(data), "--whole-data-cap", "50"])
        assert code == EXIT_USAGE

    def test_config_file_and_overlay(self, synth_files, tmp_path, capsys):
        """Settings come from the YAML file, its overlay and then the flags."""
        data, labels = synth_files
        config = tmp_path / "experiment.yaml"
        config.write_text(yaml.safe_dump({
            "name": "cli_run", "algorithm": "ssc", "k": 2, "seed": 3,
            "data": {"input": str(data), "labels": str(labels)},
        }))
        (tmp_path / "experiment.dev.yaml").write_text(yaml.safe_dump({
            "algorithm": "slrr", "p": 25,
        }))
        code = main(["cluster", "--config", str(config), "--env", "dev", "--seed", "4"])
        assert code == EXIT_OK
        document = emitted(capsys)
        assert document["algorithm"] == "slrr"
        assert document["p"] == 25
        assert document["seed"] == 4
        assert document["config"]["name"] == "cli_run"

    def test_not_converged(self, synth_files, tmp_path, capsys):
        """A solver stopped at its iteration cap exits 3 after writing the report."""
        data, _ = synth_files
        config = tmp_path / "experiment.yaml"
        config.write_text(yaml.safe_dump({
            "k": 2, "p": 30,
            "ssc": {"max_iterations": 1, "kkt_tol": 1e-15, "delta": 0.0},
        }))
        output = tmp_path / "partial.json"
        code = main(["cluster", "--config", str(config), "--seed", "0",
                     "--input", str(data), "--output", str(output)])
        assert code == EXIT_NOT_CONVERGED
        assert emitted(capsys)["converged"] is False
        assert output.exists()

    def test_log_file(self, synth_files, tmp_path, capsys):
        """--log-file keeps a copy of the run log."""
        data, _ = synth_files
        log_file = tmp_path / "logs" / "run.log"
        main(["--log-file", str(log_file), "cluster", "--k", "2", "--p", "30",
              "--seed", "0", "--input", str(data)])
        for handler in logging.getLogger().handlers:
            handler.flush()
        assert "Stage in_sample_clustering" in log_file.read_text()


class TestEval:
    """Tests for the eval command."""

    def write(self, path, labels):
        path.write_text("".join(f"{label}\n" for label in labels))
        return str(path)

    @pytest.mark.parametrize("pred, truth, expected", [
        ([0, 0, 1, 1], [0, 0, 1, 1], {"accuracy": 1.0, "nmi": 1.0}),
        ([1, 1, 0, 0], [0, 0, 1, 1], {"accuracy": 1.0, "nmi": 1.0}),
        ([0, 0, 1, 1], [0, 1, 0, 1], {"accuracy": 0.5, "nmi": 0.0}),
    ])
    def test_scores(self, tmp_path, capsys, pred, truth, expected):
        """Identical, relabelled and independent partitions."""
        code = main(["eval", self.write(tmp_path / "pred", pred),
                     self.write(tmp_path / "truth", truth)])
        assert code == EXIT_OK
        scores = emitted(capsys)
        assert scores["accuracy"] == pytest.approx(expected["accuracy"])
        assert scores["nmi"] == pytest.approx(expected["nmi"], abs=1e-12)

    def test_corrupted_truth_skipped(self, tmp_path, capsys):
        """Samples marked -1 in the truth are not scored."""
        main(["eval", self.write(tmp_path / "pred", [0, 1, 1, 1]),
              self.write(tmp_path / "truth", [0, -1, 1, 1])])
        assert emitted(capsys)["accuracy"] == 1.0

    def test_length_mismatch(self, tmp_path):
        """Files of different length are a data error."""
        code = main(["eval", self.write(tmp_path / "pred", [0, 1]),
                     self.write(tmp_path / "truth", [0, 1, 1])])
        assert code == EXIT_DATA


class TestBenchAndSweep:
    """Tests for the bench and sweep commands."""

    def test_bench_p_above_smallest(self):
        """p above the smallest n is a usage error."""
        code = main(["bench", "--k", "2", "--p", "100", "--sizes", "50,200"])
        assert code == EXIT_USAGE

    def test_bench_single_size(self, capsys):
        """A single size reports its row and no slope."""
        code = main(["bench", "--k", "2", "--p", "20", "--sizes", "40",
                     "--ambient", "15", "--dim", "2"])
        assert code == EXIT_OK
        result = emitted(capsys)
        assert result["slope"] is None
        assert result["rows"][0]["n"] == 40

    def test_sweep(self, synth_files, capsys):
        """One row per grid value."""
        data, labels = synth_files
        code = main(["sweep", "--k", "2", "--p", "30", "--seed", "0", "--input", str(data),
                     "--labels", str(labels), "--parameter", "ssc.lambda",
                     "--values", "1e3,5e4"])
        assert code == EXIT_OK
        rows = emitted(capsys)
        assert [row["value"] for row in rows] == [1e3, 5e4]

    def test_sweep_needs_labels(self, synth_files):
        """Without ground truth the sweep is refused."""
        data, _ = synth_files
        code = main(["sweep", "--k", "2", "--p", "30", "--seed", "0", "--input", str(data),
                     "--parameter", "p", "--values", "10,20"])
        assert code == EXIT_USAGE

    def test_bad_grid(self, synth_files):
        """A grid that does not parse is a usage error."""
        data, labels = synth_files
        code = main(["sweep", "--k", "2", "--p", "30", "--seed", "0", "--input", str(data),
                     "--labels", str(labels), "--parameter", "p", "--values", "ten"])
        assert code == EXIT_USAGE


def test_parser_dispatch():
    """Each subcommand maps to its handler; no subcommand is a usage error."""
    parser = build_parser()
    args = parser.parse_args(["eval", "pred.labels", "truth.labels"])
    assert args.func.__name__ == "cmd_eval"
    args = parser.parse_args(["bench", "--k", "2", "--p", "5", "--sizes", "10,20"])
    assert args.sizes == [10, 20]
    assert args.seed is None
    with pytest.raises(SystemExit) as excinfo:
        parser.parse_args([])
    assert excinfo.value.code == EXIT_USAGE
