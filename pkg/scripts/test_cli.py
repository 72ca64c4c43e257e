import json
import os

import pandas as pd
import pytest

from app.cli import build_parser, main


def test_experiment_requires_a_seed():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["experiment"])


def test_simulate_then_run(tmp_path, capsys):
    out = tmp_path / "sites"
    assert main(["simulate", "--p", "2", "--n", "20", "--M", "3", "--seed", "1", "--out", str(out)]) == 0
    assert sorted(os.listdir(out)) == ["site_1.csv", "site_2.csv", "site_3.csv", "truth.json"]

    result_path = tmp_path / "result.json"
    paths = [str(out / f"site_{m}.csv") for m in (1, 2, 3)]
    assert main(["run", *paths, "--method", "opt", "--workdir", str(tmp_path / "work"),
                 "--output", str(result_path)]) == 0
    result = json.loads(result_path.read_text())
    assert result["method"] == "opt" and len(result["beta"]) == 2
    assert "beta" in capsys.readouterr().out


def test_experiment_and_report(tmp_path):
    out = tmp_path / "exp"
    assert main(["experiment", "--seed", "4", "--p", "2", "--n-grid", "12,24", "--M-grid", "3",
                 "--K-list", "0,4", "--replicates", "2", "--gnuplot", "--out", str(out)]) == 0
    rows = pd.read_csv(out / "results.csv")
    assert len(rows) == 2 * 2 * 6
    assert (out / "gnuplot").is_dir()
    summary_path = tmp_path / "summary.csv"
    assert main(["report", str(out / "results.csv"), "--out", str(summary_path)]) == 0
    assert len(pd.read_csv(summary_path)) == 2 * 6


def test_privacy_command(tmp_path):
    path = tmp_path / "privacy.csv"
    assert main(["privacy", "--p", "4", "--K", "4", "--c", "1/4,1/8", "--reps", "20000", "--redraws", "2",
                 "--out", str(path)]) == 0
    table = pd.read_csv(path)
    assert list(table["c"]) == pytest.approx([0.25, 0.125])
    assert {"eps_mc", "eps_forward_mean", "eps_expected"} <= set(table.columns)


def test_domain_errors_exit_with_status_two(tmp_path):
    assert main(["run", str(tmp_path / "missing.csv")]) == 2


def test_report_compares_methods_to_opt(tmp_path, capsys):
    out = tmp_path / "sites"
    assert main(["simulate", "--p", "2", "--n", "20", "--M", "3", "--seed", "2", "--out", str(out)]) == 0
    paths = [str(out / f"site_{m}.csv") for m in (1, 2, 3)]
    table_path = tmp_path / "compare.csv"
    assert main(["report", *paths, "--compare", "--K", "2", "--repeats", "3", "--out", str(table_path)]) == 0
    table = pd.read_csv(table_path).set_index("method")
    assert set(table.index) == {"avgm", "csl1", "csla", "cedar"}
    assert table.loc["cedar", "repeats"] == 3
    assert {"beta_l2", "wald_l2"} <= set(table.columns)
    assert "Central site" in capsys.readouterr().out
    assert main(["report", *paths, "--compare", "--repeats", "0"]) == 2
