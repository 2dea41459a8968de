import subprocess
import sys

import pytest

from roughsde.cli import run_cli

SMALL = ["--nmin", "16", "--nmax", "128", "--reps", "400", "--seed", "7"]


def _header(path):
    return path.read_text().splitlines()[0]


class TestExitCodes:
    def test_unknown_field(self, tmp_path, capsys):
        assert run_cli(["strong", "--field", "nope", "--out", str(tmp_path)]) == 1
        err = capsys.readouterr().err
        assert "linear1d" in err and "poly2x2" in err

    def test_unknown_test_function(self, tmp_path, capsys):
        assert run_cli(["weak", "--f", "nope", "--out", str(tmp_path)]) == 1
        assert "quartic-bump" in capsys.readouterr().err

    def test_bad_flag(self, capsys):
        assert run_cli(["strong", "--bogus", "1"]) == 1

    def test_unknown_command(self):
        assert run_cli(["frobnicate"]) == 1

    def test_bad_hurst(self, tmp_path):
        assert run_cli(["sample", "--H", "0.9", "--out", str(tmp_path)]) == 1

    def test_regression_error(self, tmp_path, capsys):
        assert run_cli(["strong", "--nmin", "16", "--nmax", "16", "--reps", "10", "--out", str(tmp_path)]) == 2
        assert "needs >= 4 points" in capsys.readouterr().err

    def test_experiment_error(self, tmp_path):
        args = ["weak", "--nmin", "16", "--nmax", "1024", "--reps", "10", "--out", str(tmp_path)]
        assert run_cli(args) == 2

    def test_missing_config(self, tmp_path):
        assert run_cli(["strong", "--config", str(tmp_path / "none.toml")]) == 1

    def test_help(self, capsys):
        assert run_cli(["--help"]) == 0


class TestOutputs:
    def test_strong_with_config(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text('H = 0.4\nfield = "linear1d"\nn_grid = [16, 32, 64, 128]\nreps = 300\nseed = 3\n')
        out = tmp_path / "out"
        assert run_cli(["strong", "--config", str(cfg), "--out", str(out)]) == 0
        assert _header(out / "strong_rates.csv") == "n,error,stderr"
        assert _header(out / "report.csv") == "slope,intercept,r2"
        assert (out / "plot_strong.gp").exists()

    def test_flags_override_config(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text('n_grid = [16, 32, 64, 128]\nreps = 300\n')
        out = tmp_path / "out"
        assert run_cli(["strong", "--config", str(cfg), "--nmax", "256", "--out", str(out)]) == 0
        assert len((out / "strong_rates.csv").read_text().splitlines()) == 1 + 5

    def test_sample(self, tmp_path):
        assert run_cli(["sample", "--n", "32", "--d", "2", "--out", str(tmp_path)]) == 0
        assert _header(tmp_path / "path.csv") == "t,x1,x2"
        assert _header(tmp_path / "lift.csv") == "k_from,k_to,i,j,value"
        assert _header(tmp_path / "q.csv") == "k_from,k_to,i,j,value"

    def test_greedy(self, tmp_path):
        assert run_cli(["greedy", "--alpha", "0.5", "--n", "64", "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "partition.csv").read_text().splitlines()
        assert lines[0] == "j,s_j,s_j1,omega,label"
        assert all(line.split(",")[-1] in ("S0", "S1", "S2") for line in lines[1:])
        assert _header(tmp_path / "mproducts.csv") == "S0,S1,S2,M0,M1,M2,K"

    def test_greedy_two_dim(self, tmp_path):
        args = ["greedy", "--field", "poly2x2", "--n", "16", "--out", str(tmp_path)]
        assert run_cli(args) == 0

    @pytest.mark.parametrize("field", ["sine1d", "poly2x2"])
    def test_sewing(self, tmp_path, field):
        args = ["sewing", "--field", field, "--a", "0.3", "--n", "16", "--out", str(tmp_path)]
        assert run_cli(args) == 0
        rows = (tmp_path / "sewing.csv").read_text().splitlines()
        assert rows[0] == "mu,K_mu,max_ratio,witness_s,witness_t,verdict"
        assert rows[1].endswith("PASS")
        assert _header(tmp_path / "trajectory.csv").startswith("k,t_k,y1")

    def test_qscale(self, tmp_path):
        assert run_cli(["qscale", *SMALL, "--out", str(tmp_path)]) == 0
        assert _header(tmp_path / "qscale_rates.csv") == "n,error,stderr,excluded"

    def test_weak_deterministic(self, tmp_path):
        args = ["weak", "--H", "0.5", "--field", "linear1d", "--f", "cos", "--a", "1.0",
                "--nmin", "4", "--nmax", "32", "--reps", "20000", "--seed", "7"]
        assert run_cli(args + ["--out", str(tmp_path / "a")]) == 0
        assert run_cli(args + ["--out", str(tmp_path / "b"), "--workers", "2", "--chunk", "3000"]) == 0
        for name in ("weak_rates.csv", "report.csv", "weak_benchmark.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "roughsde", "sample", "--n", "8", "--out", str(tmp_path)],
                              capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "path.csv").exists()
