import json

import numpy as np
import pytest

from mlpsel.cli import DataFormatError, main, read_data_csv
from mlpsel.simulation import gen_true_data

FAST = ["--restarts", "1", "--max-iter", "60"]


def simulate_args(out, *extra):
    return ["simulate", "--n", "30", "--reps", "2", "--kmax", "2", "--seed", "3", "--jobs", "1",
            "--out", str(out), *FAST, *extra]


def write_csv(path, text):
    path.write_text(text)
    return path


@pytest.fixture
def data_csv(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text(gen_true_data(40, np.random.default_rng(1)).to_csv())
    return path


class TestReadDataCsv:
    def test_round_trip(self, data_csv):
        data = read_data_csv(data_csv)
        assert (data.n, data.d) == (40, 2)
        np.testing.assert_array_equal(data.targets, gen_true_data(40, np.random.default_rng(1)).targets)

    def test_bad_cell_location(self, tmp_path):
        rows = ["x1,y"] + [f"{i},{i}" for i in range(6)] + ["abc,1"]
        path = write_csv(tmp_path / "bad.csv", "\n".join(rows) + "\n")
        with pytest.raises(DataFormatError, match=r"row 7 \(line 8\), column 1"):
            read_data_csv(path)

    @pytest.mark.parametrize("text", ["y\n1\n2\n", "x,y\n1,2\n3\n", "", "x,y\n", "x,y\n1,inf\n"])
    def test_rejects(self, tmp_path, text):
        with pytest.raises(DataFormatError):
            read_data_csv(write_csv(tmp_path / "d.csv", text))


class TestSimulate:
    def test_outputs_and_manifest(self, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(simulate_args(out, "--criteria", "BIC:known,SP:log")) == 0
        assert "| BIC:known |" in capsys.readouterr().out
        lines = (out / "selection_table.csv").read_text().splitlines()
        assert lines[0] == "criterion,regime,k,count"
        assert sum(int(line.split(",")[3]) for line in lines[1:3]) == 2
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["subcommand"] == "simulate"
        assert manifest["seed"] == 3
        assert manifest["config"]["criteria"] == ["BIC:known", "SP:log"]
        assert manifest["config"]["sigma2"] == pytest.approx(1 / 3)
        assert "--reps" in manifest["resolved_argv"]
        assert "--box" in manifest["resolved_argv"]  # defaults materialized
        assert manifest["outputs"] == ["selection_table.csv", "selection_table.md"]

    def test_rerun_identical(self, tmp_path):
        assert main(simulate_args(tmp_path / "a")) == 0
        assert main(simulate_args(tmp_path / "b")) == 0
        assert (tmp_path / "a/selection_table.csv").read_bytes() == (tmp_path / "b/selection_table.csv").read_bytes()

    def test_dump_data(self, tmp_path):
        dump = tmp_path / "rep0.csv"
        assert main(simulate_args(tmp_path / "r", "--dump-data", str(dump))) == 0
        data = read_data_csv(dump)
        assert (data.n, data.d) == (30, 2)

    @pytest.mark.parametrize(
        "extra", [["--reps", "0"], ["--criteria", "BIC:nope"], ["--criteria", "SP:log,SP:log"], ["--sigma2", "-1"]]
    )
    def test_usage_errors(self, tmp_path, extra):
        assert main(simulate_args(tmp_path / "x", *extra)) == 2

    def test_small_n(self, tmp_path):
        args = simulate_args(tmp_path / "x")
        args[args.index("--n") + 1] = "5"
        assert main(args) == 2


class TestSelect:
    def test_prints_choice(self, data_csv, capsys):
        assert main(["select", "--data", str(data_csv), "--kmax", "2", "--jobs", "1", *FAST]) == 0
        out = capsys.readouterr().out
        assert out.startswith("k_hat: ")
        assert "k,D,mse_hat,penalty,criterion,chosen" in out

    def test_bad_cell_exit_code(self, tmp_path, capsys):
        rows = ["x1,x2,y"] + ["0,0,0"] * 6 + ["0,zz,0"]
        path = write_csv(tmp_path / "bad.csv", "\n".join(rows) + "\n")
        assert main(["select", "--data", str(path)]) == 2
        assert "row 7" in capsys.readouterr().err

    def test_single_column(self, tmp_path):
        assert main(["select", "--data", str(write_csv(tmp_path / "s.csv", "y\n1\n2\n"))]) == 2

    def test_ragged(self, tmp_path):
        assert main(["select", "--data", str(write_csv(tmp_path / "r.csv", "x,y\n1,2\n3\n"))]) == 2

    def test_known_needs_sigma2(self, data_csv):
        assert main(["select", "--data", str(data_csv), "--criterion", "BIC:known"]) == 2

    def test_zero_mse_under_log(self, data_csv, capsys, monkeypatch):
        import mlpsel.cli as cli
        from mlpsel.selection import DegenerateError

        def degenerate(*args, **kwargs):
            raise DegenerateError("degenerate zero MSE")

        monkeypatch.setattr(cli, "select", degenerate)
        assert main(["select", "--data", str(data_csv), "--criterion", "SP:log"]) == 1
        assert "degenerate zero MSE" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["select", "--data", str(tmp_path / "nope.csv")]) == 2


class TestBound:
    def test_negative_lambda(self, tmp_path):
        assert main(["bound", "--lambda", "-1", "--out", str(tmp_path)]) == 2

    def test_too_few_units(self, tmp_path):
        assert main(["bound", "--k", "2", "--out", str(tmp_path)]) == 2

    def test_degenerate_draws_skipped(self, tmp_path, capsys):
        args = ["bound", "--n", "50", "--draws", "1", "--force-theta0", "--norm-samples", "2000",
                "--elementary-samples", "1000", "--out", str(tmp_path)]
        assert main(args) == 0
        out = capsys.readouterr().out
        assert "violations: 0 / 0" in out
        assert "skipped degenerate: 1" in out

    def test_report(self, tmp_path, capsys):
        args = ["bound", "--n", "60", "--draws", "3", "--norm-samples", "5000", "--elementary-samples", "1000",
                "--out", str(tmp_path), *FAST]
        assert main(args) == 0
        lines = (tmp_path / "bound_report.csv").read_text().splitlines()
        assert len(lines) == 1 + 4  # three draws and the fitted parameter
        assert "violations: 0 / 4" in capsys.readouterr().out


class TestReplay:
    def test_simulate(self, tmp_path):
        assert main(simulate_args(tmp_path / "a")) == 0
        assert main(["replay", str(tmp_path / "a/manifest.json"), "--out", str(tmp_path / "b")]) == 0
        for name in ("selection_table.csv", "selection_table.md"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_unreadable_manifest(self, tmp_path):
        bad = write_csv(tmp_path / "m.json", "{}")
        assert main(["replay", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_no_subcommand():
    assert main([]) == 2
