import json
import subprocess
import sys

import pytest

from brwpass.brw_dp import PassageLaw
from brwpass.cli import main

GAUSS = {"N": 2, "law": {"type": "normal", "mean": -1.0, "variance": 0.5}}
LATT = {"N": 2, "law": {"type": "two_point", "a": 1.0, "b": -1.0, "p": 0.05}}


@pytest.fixture
def write_config(tmp_path):
    def _write(**spec):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(spec))
        return str(path)
    return _write


def test_analyze_prints_profile(write_config, capsys):
    assert main(["analyze", "--config", write_config(model=GAUSS, u_list=[1.0])]) == 0
    prof = json.loads(capsys.readouterr().out)
    assert abs(prof["alpha0"] - 3.1078860) <= 1e-6


def test_verify_empty_check_list(write_config, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["verify", "--config", write_config(model=GAUSS, u_list=[1.0], checks=[]),
                 "--out", str(out)])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["reports"] == [] and summary["passed"] is True


def test_dp_negative_barrier(write_config, capsys):
    assert main(["dp", "--config", write_config(model=GAUSS, u_list=[-1.0])]) == 2
    assert "u must be > 0" in capsys.readouterr().err


@pytest.mark.parametrize("text", ["{not json", json.dumps({"u_list": [1.0]}),
                                  json.dumps({"model": {"N": 2, "law": {"type": "x"}},
                                              "u_list": [1.0]})])
def test_malformed_config(tmp_path, capsys, text):
    path = tmp_path / "bad.json"
    path.write_text(text)
    assert main(["analyze", "--config", str(path)]) == 2
    assert "bad config" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["analyze", "--config", str(tmp_path / "none.json")]) == 2


def test_regime_error_exit_code(write_config):
    model = {"N": 2, "law": {"type": "two_point", "a": 1.0, "b": -1.0, "p": 0.5}}
    assert main(["analyze", "--config", write_config(model=model, u_list=[1.0])]) == 2


def test_dp_writes_passage_csv(write_config, tmp_path):
    out = tmp_path / "dp"
    cfg = write_config(model=LATT, u_list=[0.5, 2.5], h=1.0, n_max=6)
    assert main(["dp", "--config", cfg, "--out", str(out)]) == 0
    law = PassageLaw.from_csv((out / "passage_u0.5.csv").read_text())
    assert law.prob(1) == pytest.approx(0.0975, abs=1e-15)
    assert law.n_max == 6
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["config_sha256"]) == 64


def test_survival_table(write_config, capsys):
    assert main(["survival", "--config", write_config(model=LATT, u_list=[0.5, 1.5], h=1.0)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "u,survival,iterations"
    s = [float(line.split(",")[1]) for line in lines[1:]]
    assert s[0] > s[1] > 0


def test_simulate_summary(write_config, tmp_path):
    out = tmp_path / "sim"
    cfg = write_config(model=LATT, u_list=[0.5], M=5000, n_max=10, base_seed=3)
    assert main(["simulate", "--config", cfg, "--out", str(out), "--seed", "11"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 11
    run = summary["runs"][0]
    assert run["replicates"] == 5000 and run["base_seed"] == 11
    assert (out / "histogram_u0.5.csv").read_text().startswith("n,count")
    # same seed, different worker count: same output
    out2 = tmp_path / "sim2"
    assert main(["simulate", "--config", cfg, "--out", str(out2), "--seed", "11",
                 "--workers", "4"]) == 0
    assert (out2 / "summary.json").read_text() == (out / "summary.json").read_text()


def test_simulate_needs_replicates(write_config):
    assert main(["simulate", "--config", write_config(model=LATT, u_list=[0.5], M=0)]) == 2


def test_verify_pass_and_fail(write_config, tmp_path, capsys):
    u = [0.5 + k for k in range(21)]
    ok = write_config(model=LATT, u_list=u, h=1.0, checks=["cramer_tail"])
    assert main(["verify", "--config", ok, "--out", str(tmp_path / "a")]) == 0
    assert (tmp_path / "a" / "report_cramer_tail.csv").exists()
    bad = write_config(model=LATT, u_list=u, h=1.0,
                       checks=[{"name": "cramer_tail", "tol": 1e-9}])
    assert main(["verify", "--config", bad]) == 1
    assert "FAIL cramer_tail" in capsys.readouterr().out


def test_console_entry_point(write_config):
    proc = subprocess.run([sys.executable, "-m", "brwpass.cli", "analyze", "--config",
                           write_config(model=LATT, u_list=[1.0])],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert abs(json.loads(proc.stdout)["alpha0"] - 2.0081456) <= 1e-6
