import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from seqmc.cli import ExperimentConfig, fmt, load_config, main
from seqmc.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """
seed = 11
model.kind = "tempering"
model.H = [0, 1, 2, 3]
model.betas = [0.0, 0.5, 1.0]
model.steps = [8, 8]
run.N = 32
run.R = 100
stability.trials = 300
sweep.dims = [1, 2]
sweep.N = 10
sweep.R = 50
"""


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return path


def write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_missing_config_exit_2(tmp_path, capsys):
    missing = tmp_path / "nope.toml"
    assert main(["run", "--config", str(missing), "--out", str(tmp_path)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_usage_errors_exit_2(small, tmp_path):
    assert main(["frobnicate", "--config", str(small)]) == 2
    assert main(["run"]) == 2
    assert main(["run", "--config", str(small), "--threads", "-1",
                 "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("text, fragment", [
    ("run.N = 4\nbogus = 1\n", "bogus"),
    ("run.N = 4\nrun.Q = 1\n", "run.Q"),
    ("run.N = \"four\"\n", "run.N"),
    ("run.N = 0\n", "run.N"),
    ("model.kind = \"torus\"\n", "model.kind"),
    ("run.N = [\n", "cfg.toml"),
])
def test_bad_config_fields_are_named(tmp_path, text, fragment):
    with pytest.raises(ConfigError, match=fragment.replace(".", r"\.")):
        load_config(write(tmp_path, text))


def test_config_defaults(tmp_path):
    cfg = load_config(write(tmp_path, "seed = 3\n"))
    assert isinstance(cfg, ExperimentConfig)
    assert cfg.seed == 3 and cfg.kind == "fixture_a" and cfg.p == 4


def test_fmt():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(True) == "true" and fmt(3) == "3"


def test_run_writes_rows_and_aggregates(small, tmp_path):
    assert main(["run", "--config", str(small), "--out", str(tmp_path), "--threads", "1"]) == 0
    rows = read_rows(tmp_path / "estimates.csv")
    assert rows[0] == ["kind", "replication", "eta", "nu", "phi", "ok"]
    assert sum(r[0] == "rep" for r in rows) == 100
    assert [r[0] for r in rows[-3:]] == ["mean", "se", "exact"]
    assert (tmp_path / "estimates.csv").read_bytes().count(b"\r\n") == len(rows)


def test_run_is_byte_identical_and_thread_independent(small, tmp_path):
    outs = []
    for i, threads in enumerate(["1", "1", "4"]):
        out = tmp_path / f"o{i}"
        assert main(["run", "--config", str(small), "--out", str(out), "--threads", threads]) == 0
        outs.append((out / "estimates.csv").read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_seed_precedence(small, tmp_path, monkeypatch):
    def run(out, *extra):
        assert main(["run", "--config", str(small), "--out", str(tmp_path / out), *extra]) == 0
        return (tmp_path / out / "estimates.csv").read_bytes()

    base = run("a")
    monkeypatch.setenv("SEQMC_SEED", "12")
    env = run("b")
    assert env != base
    assert run("c", "--seed", "11") == base
    monkeypatch.setenv("SEQMC_SEED", "x")
    assert main(["run", "--config", str(small), "--out", str(tmp_path / "d")]) == 2


def test_verify_passes_on_small_fixture(small, tmp_path, capsys):
    assert main(["verify", "--config", str(small), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "variance_report.json").read_text())
    assert report["identity_holds"] is True and report["R"] == 100
    rows = read_rows(tmp_path / "verify_report.csv")
    assert rows[0] == ["quantity", "estimate", "se", "exact", "pass"]
    assert all(r[4] == "true" for r in rows[1:])
    assert "FAIL" not in capsys.readouterr().out


def test_verify_needs_100_replications(tmp_path):
    cfg = write(tmp_path, SMALL.replace("run.R = 100", "run.R = 99"))
    assert main(["verify", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_verify_halved_alpha_exits_1(tmp_path, capsys):
    cfg = CONFIGS / "halved_alpha.toml"
    assert main(["verify", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "alpha_beta_one_step" in err and "one-step L2 mixing bound" in err


def test_bounds_document(small, tmp_path):
    assert main(["bounds", "--config", str(small), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "bounds.json").read_text())
    assert doc["explicit_first_n"] == pytest.approx(3.125)
    assert doc["explicit_second_n_within_rounded"] is True
    assert doc["explicit_second_n2_within_rounded"] is True
    assert "180" in doc["explicit_notes"][0]
    assert doc["error_threshold_met"] is False and doc["error_rhs"] is None
    assert "t_inequality_failed" in doc and "rho_min_squared_gap" in doc


def test_bounds_flags_short_runs(tmp_path):
    text = SMALL.replace("model.steps = [8, 8]", "model.steps = [1, 1]")
    cfg = write(tmp_path, text + "bounds.a_star = [0.01, 0.01]\nbounds.tau = 0.5\n")
    assert main(["bounds", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "bounds.json").read_text())
    assert doc["t_inequality_failed"] is True
    assert doc["model_t_ok_hyper"] == [False, False]


def test_bounds_without_feasible_tau_reports_null(tmp_path):
    text = SMALL.replace("model.steps = [8, 8]", "model.steps = [1, 1]")
    cfg = write(tmp_path, text)
    assert main(["bounds", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "bounds.json").read_text())
    assert doc["t_inequality_failed"] is None
    assert doc["feasible_tau_positive"] is False


def test_bounds_single_level(tmp_path):
    text = ("model.kind = \"tempering\"\nmodel.H = [0, 1, 2]\nmodel.betas = [0.5]\n"
            "model.steps = []\nrun.N = 10\n")
    cfg = write(tmp_path, text)
    assert main(["bounds", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "bounds.json").read_text())
    assert doc["error_mse_bound"] == pytest.approx(doc["error_sum_var"] / 10)


def test_dim_sweep(small, tmp_path):
    assert main(["dim-sweep", "--config", str(small), "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "sweep.csv")
    assert len(rows) == 3
    head = rows[0]
    work = [float(r[head.index("work")]) for r in rows[1:]]
    assert all(w > 0 for w in work)


def test_dim_sweep_capacity_row(tmp_path):
    cfg = write(tmp_path, SMALL.replace("sweep.dims = [1, 2]", "sweep.dims = [1, 10]"))
    assert main(["dim-sweep", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "sweep.csv")
    head = rows[0]
    assert rows[2][head.index("skipped")] == "true"
    assert "4^10" in rows[2][head.index("reason")]


def test_console_script(small, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "seqmc.cli", "run", "--config", str(small),
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "seqmc.cli", "run", "--config",
                           str(tmp_path / "missing.toml")], capture_output=True, text=True)
    assert proc.returncode == 2 and "missing.toml" in proc.stderr
