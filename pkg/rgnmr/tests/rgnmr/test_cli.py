# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
import json
from functools import partial

import numpy as np
import pandas as pd
import pytest
from typer.testing import CliRunner

from rgnmr.cli.cli import cli
from rgnmr.errors import InvalidArgumentError
from rgnmr.matrix_market import read_dense_matrix_market, write_matrix_market
from rgnmr.obs_model import ObservationSet
from rgnmr.simulation.bench import run_bench

runner = CliRunner()


@pytest.fixture
def rank_one_file(tmp_path):
    path = tmp_path / "rank_one.mtx"
    write_matrix_market(path, ObservationSet.from_dense(np.outer([1.0, 2.0, 3.0], [1.0, 1.0, 2.0])))
    return path


@pytest.fixture
def outlier_file(tmp_path):
    truth = np.outer(np.arange(1.0, 7.0), [1.0, -1.0, 0.5, 2.0, 1.5])
    observed = truth.copy()
    observed[2, 3] += 100.0

    path = tmp_path / "outlier.mtx"
    write_matrix_market(path, ObservationSet.from_dense(observed))
    return path, truth


def read_diagnostics(out):
    return [json.loads(line) for line in (out / "diagnostics.jsonl").read_text().splitlines()]


def test_complete_rank_one(rank_one_file, tmp_path):
    out = tmp_path / "run"

    result = runner.invoke(cli, ["complete", str(rank_one_file), "--rank", "1", "--out", str(out)])

    assert result.exit_code == 0, result.output
    u = read_dense_matrix_market(out / "U.mtx")
    v = read_dense_matrix_market(out / "V.mtx")
    assert np.allclose(u @ v.T, np.outer([1.0, 2.0, 3.0], [1.0, 1.0, 2.0]), atol=1e-9)
    assert read_diagnostics(out)[0]["status"] == "converged"


def test_complete_removes_outlier(outlier_file, tmp_path):
    path, truth = outlier_file
    out = tmp_path / "run"

    result = runner.invoke(cli, ["complete", str(path), "-r", "1", "--k", "1", "-o", str(out)])

    assert result.exit_code == 0, result.output
    u = read_dense_matrix_market(out / "U.mtx")
    v = read_dense_matrix_market(out / "V.mtx")
    assert np.allclose(u @ v.T, truth, atol=1e-8)

    diagnostics = read_diagnostics(out)[0]
    assert diagnostics["k"] == 1
    assert diagnostics["k_hat"] is None


def test_complete_reports_non_convergence(outlier_file, tmp_path):
    path, _ = outlier_file

    result = runner.invoke(
        cli, ["complete", str(path), "-r", "1", "--max-iters", "1", "-o", str(tmp_path)]
    )

    assert result.exit_code == 2
    assert read_diagnostics(tmp_path)[0]["status"] == "max-iterations"


def test_complete_rejects_zero_rank(rank_one_file, tmp_path):
    result = runner.invoke(cli, ["complete", str(rank_one_file), "--rank", "0", "-o", str(tmp_path)])

    assert result.exit_code == 1
    assert not (tmp_path / "U.mtx").exists()


def test_complete_rejects_malformed_file(tmp_path):
    path = tmp_path / "broken.mtx"
    path.write_text("not a matrix market header\n")

    result = runner.invoke(cli, ["complete", str(path), "--rank", "1", "-o", str(tmp_path)])

    assert result.exit_code == 1


def test_simulate_dump_config():
    result = runner.invoke(cli, ["simulate", "oversampling", "--dump-config"])

    assert result.exit_code == 0, result.output
    config = json.loads(result.output)
    assert config["name"] == "oversampling"
    assert config["grid"]["oversampling_ratio"][0] == 4


def test_simulate_writes_records(tmp_path):
    sweep = tmp_path / "tiny.yaml"
    sweep.write_text(
        "name: tiny\n"
        "base:\n  n1: 30\n  n2: 20\n  r_true: 2\n  oversampling_ratio: 6\n"
        "grid:\n  corruption_fraction: [0.0, 0.05]\n"
        "repetitions: 2\nrecord_runtime: false\n"
    )
    out = tmp_path / "tiny.csv"

    result = runner.invoke(cli, ["simulate", str(sweep), "--threads", "2", "--out", str(out)])

    assert result.exit_code == 0, result.output
    frame = pd.read_csv(out)
    assert len(frame) == 4
    assert frame["corruption_fraction"].tolist() == [0.0, 0.0, 0.05, 0.05]


def test_simulate_rejects_invalid_config(tmp_path):
    sweep = tmp_path / "bad.yaml"
    sweep.write_text("name: bad\ngrid:\n  not_a_field: [1]\n")

    result = runner.invoke(cli, ["simulate", str(sweep)])

    assert result.exit_code == 1


def test_plot_writes_svg(tmp_path):
    sweep = tmp_path / "tiny.yaml"
    sweep.write_text(
        "name: tiny\n"
        "base:\n  n1: 30\n  n2: 20\n  r_true: 2\n"
        "grid:\n  oversampling_ratio: [5, 6]\n"
        "repetitions: 2\nrecord_runtime: false\n"
    )
    records = tmp_path / "tiny.csv"
    simulated = runner.invoke(cli, ["simulate", str(sweep), "--out", str(records)])
    assert simulated.exit_code == 0, simulated.output

    svg = tmp_path / "summary.svg"

    result = runner.invoke(cli, ["plot", str(records), "--x-axis", "oversampling_ratio", "-o", str(svg)])

    assert result.exit_code == 0, result.output
    assert svg.read_text().lstrip().startswith("<?xml")


def test_plot_rejects_unknown_axis(tmp_path):
    records = tmp_path / "records.csv"
    records.write_text("rel_rmse,failed\n0.1,True\n")

    result = runner.invoke(cli, ["plot", str(records), "--x-axis", "kappa"])

    assert result.exit_code == 1


def test_seed_falls_back_to_environment(rank_one_file, tmp_path, monkeypatch):
    monkeypatch.setenv("RGNMR_SEED", "not-a-number")

    result = runner.invoke(cli, ["complete", str(rank_one_file), "--rank", "1", "-o", str(tmp_path)])

    assert result.exit_code == 1


def test_bench_writes_csv_and_slope(tmp_path, monkeypatch):
    monkeypatch.setattr(
        "rgnmr.cli.cli.run_bench", partial(run_bench, trial_timer=lambda n, _: 1e-6 * n**2)
    )
    out = tmp_path / "bench.csv"

    result = runner.invoke(
        cli, ["bench", "--sizes", "10", "--sizes", "20", "--sizes", "40", "--repetitions", "2", "-o", str(out)]
    )

    assert result.exit_code == 0, result.output
    assert "2.00" in result.output
    frame = pd.read_csv(out)
    assert frame["n"].tolist() == [10, 20, 40]
    assert frame["repetitions"].tolist() == [2, 2, 2]


def test_bench_needs_three_sizes(tmp_path):
    result = runner.invoke(cli, ["bench", "--sizes", "10", "--sizes", "20", "-o", str(tmp_path / "b.csv")])

    assert result.exit_code == 1


@pytest.mark.parametrize("flags", [["--estimate-k"], ["--noise-sigma", "0.1"]])
def test_modified_variant_rejects_plain_only_flags(rank_one_file, tmp_path, flags):
    result = runner.invoke(
        cli,
        ["complete", str(rank_one_file), "-r", "1", "--variant", "modified", "-o", str(tmp_path), *flags],
    )

    assert result.exit_code == 1


def test_modified_variant_receives_tolerance_and_seed(rank_one_file, tmp_path, monkeypatch):
    received = {}

    def capture(obs, r, params, T, init, inner=None, tolerance=None, callback=None):
        received.update(T=T, seed=inner.seed, tolerance=tolerance, delta=params.delta)
        raise InvalidArgumentError("captured")

    monkeypatch.setattr("rgnmr.cli.cli.run_modified", capture)

    result = runner.invoke(
        cli,
        [
            "complete", str(rank_one_file), "-r", "1", "--variant", "modified",
            "--tol", "1e-6", "--seed", "4", "--max-iters", "7", "--delta", "2.0", "-o", str(tmp_path),
        ],
    )

    assert result.exit_code == 1
    assert received == {"T": 7, "seed": 4, "tolerance": 1e-6, "delta": 2.0}


def test_complete_accepts_threads(rank_one_file, tmp_path):
    accepted = runner.invoke(cli, ["complete", str(rank_one_file), "-r", "1", "--threads", "2", "-o", str(tmp_path)])
    rejected = runner.invoke(cli, ["complete", str(rank_one_file), "-r", "1", "--threads", "0", "-o", str(tmp_path)])

    assert accepted.exit_code == 0, accepted.output
    assert rejected.exit_code == 1
