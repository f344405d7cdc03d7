import csv
import subprocess
import sys

import numpy as np
import pytest

from mmacc.acceleration import run
from mmacc.cli import REPORT_HEADER, cli_main, read_trajectory_csv
from mmacc.config import load_config, parse_config
from mmacc.errors import ConfigError
from mmacc.microsolver import Ensemble

SIM = """# driven model, short run
model.epsilon = 0.5
run.mode = ensemble
run.seed = 11
run.n_particles = 400
run.micro_dt = 0.025
run.macro_dt = 0.1
run.end_time = 1.0
"""

CONV = """model.epsilon = 0.5
run.end_time = 2.0
sweep.macro_dts = 0.025, 0.05, 0.1
"""

STAB = """model.epsilon = 0.1
run.n_particles = 300
run.end_time = 2.0
sweep.micro_dts = 0.01, 0.1
sweep.macro_dts = 0.1, 0.5, 0.9
"""

REF = """model.epsilon = 1
run.micro_dt = 0.05
run.end_time = 1
initial.mean = 1, -1
"""


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def manifest(path):
    return dict(line.split(" = ", 1) for line in path.read_text().splitlines())


def test_simulate_writes_trajectory_and_manifest(tmp_path):
    out = tmp_path / "out"
    assert cli_main(["simulate", "--config", write(tmp_path, SIM), "--out", str(out)]) == 0
    rows = read_csv(out / "trajectory.csv")
    assert rows[0][:4] == ["t", "n", "mu_s0", "mu_f0"]
    assert len(rows) == 1 + 11
    m = manifest(out / "run.manifest")
    assert m["manifest.command"] == "simulate"
    assert m["manifest.seed"] == "11"
    assert m["manifest.resample"] == "True"
    assert m["manifest.mode"] == "ensemble"
    assert m["manifest.backend"] in ("cython", "python")
    assert m["manifest.version"].startswith("0.1.0+")
    assert m["run.n_particles"] == "400" and m["model.epsilon"] == "0.5"


def test_converge_header(tmp_path):
    out = tmp_path / "o"
    assert cli_main(["converge", "--config", write(tmp_path, CONV), "--out", str(out)]) == 0
    rows = read_csv(out / "convergence.csv")
    assert rows[0] == ["dt_macro", "err_exact", "err_euler", "std_exact", "std_euler"]
    assert [float(r[0]) for r in rows[1:]] == [0.025, 0.05, 0.1]


def test_stability_header_and_mode_default(tmp_path):
    out = tmp_path / "o"
    assert cli_main(["stability", "--config", write(tmp_path, STAB), "--out", str(out)]) == 0
    rows = read_csv(out / "stability.csv")
    assert rows[0] == ["micro_dt", "macro_dt", "verdict", "failure_time"]
    assert len(rows) == 1 + 2 * 3
    for r in rows[1:]:
        assert r[2] in ("stable", "matching_failure", "blow_up")
        assert (r[2] == "stable") == (r[3] == "")
    assert manifest(out / "run.manifest")["manifest.mode"] == "ensemble"


def test_reference_output(tmp_path):
    out = tmp_path / "o"
    assert cli_main(["reference", "--config", write(tmp_path, REF), "--out", str(out)]) == 0
    rows = read_csv(out / "reference.csv")
    assert rows[0] == ["t", "mu_s0", "mu_f0"]
    assert rows[1] == ["0.0", "1.0", "-1.0"]
    assert len(rows) == 1 + 21


def test_byte_identical_reruns_and_threads(tmp_path, monkeypatch):
    cfg = write(tmp_path, STAB)
    assert cli_main(["stability", "--config", cfg, "--out", str(tmp_path / "a"),
                     "--threads", "1"]) == 0
    monkeypatch.setenv("MMACC_THREADS", "3")
    assert cli_main(["stability", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/stability.csv").read_bytes() == (tmp_path / "b/stability.csv").read_bytes()
    sim = write(tmp_path, SIM, "sim.cfg")
    for name in ("c", "d"):
        assert cli_main(["simulate", "--config", sim, "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "c/trajectory.csv").read_bytes() == (tmp_path / "d/trajectory.csv").read_bytes()


def test_stream_matches_batch_output(tmp_path):
    cfg = write(tmp_path, SIM)
    assert cli_main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert cli_main(["simulate", "--config", cfg, "--out", str(tmp_path / "b"), "--stream"]) == 0
    assert (tmp_path / "a/trajectory.csv").read_bytes() == (tmp_path / "b/trajectory.csv").read_bytes()


def test_seed_and_mode_overrides(tmp_path):
    cfg = write(tmp_path, SIM)
    assert cli_main(["simulate", "--config", cfg, "--out", str(tmp_path / "a"),
                     "--seed", "12"]) == 0
    assert cli_main(["simulate", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    assert manifest(tmp_path / "a/run.manifest")["manifest.seed"] == "12"
    assert (tmp_path / "a/trajectory.csv").read_bytes() != (tmp_path / "b/trajectory.csv").read_bytes()
    assert cli_main(["simulate", "--config", cfg, "--out", str(tmp_path / "g"),
                     "--mode", "gaussian"]) == 0
    header = read_csv(tmp_path / "g/trajectory.csv")[0]
    assert "m3_0" not in header
    assert manifest(tmp_path / "g/run.manifest")["run.mode"] == "gaussian"


@pytest.mark.parametrize("text, line, key", [
    ("model.epsilon = 0.5\nrun.micro_dt = -1\n", 2, "run.micro_dt"),
    ("model.epsilon = 0.5\nrun.bogus = 3\n", 2, "run.bogus"),
    ("model.epsilon = 0.5\nmodel.epsilon = 1\n", 2, "model.epsilon"),
    ("model.drift = 1, 2; 3\n", 1, "model.drift"),
    ("run.seed = -4\n", 1, "run.seed"),
])
def test_config_errors_exit_1(tmp_path, capsys, text, line, key):
    code = cli_main(["simulate", "--config", write(tmp_path, text), "--out", str(tmp_path / "o")])
    assert code == 1
    err = capsys.readouterr().err
    assert f"line {line}" in err and key in err


def test_missing_config_file_exits_1(tmp_path, capsys):
    assert cli_main(["simulate", "--config", str(tmp_path / "nope.cfg"),
                     "--out", str(tmp_path / "o")]) == 1
    assert "config error" in capsys.readouterr().err


def test_missing_required_key_exits_1(tmp_path, capsys):
    assert cli_main(["simulate", "--config", write(tmp_path, "model.epsilon = 1\n"),
                     "--out", str(tmp_path / "o")]) == 1
    assert "run.micro_dt" in capsys.readouterr().err


def test_internal_error_exits_2(tmp_path, capsys):
    # an unreadable previous run directory is not a config error
    (tmp_path / "prev").mkdir()
    (tmp_path / "prev/run.manifest").write_text(SIM)
    (tmp_path / "prev/trajectory.csv").write_text("t,n\n0,zero\n")
    code = cli_main(["diagnose", "--input", str(tmp_path / "prev"), "--out", str(tmp_path / "o")])
    assert code in (1, 2)
    (tmp_path / "prev/trajectory.csv").write_text(
        "t,n,mu_s0,mu_f0,m2_0,m3_0\n0.0,0,x,0,1,0\n")
    assert cli_main(["diagnose", "--input", str(tmp_path / "prev"),
                     "--out", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err


def test_diagnose_round_trip(tmp_path):
    text = """model.drift = -2, 0; 0, -10
model.diffusion = 1, 0; 0, 1
model.slow_dim = 1
initial.law = bimodal(2, 0.25)
run.mode = ensemble
run.seed = 3
run.n_particles = 4000
run.micro_dt = 0.02
run.macro_dt = 0.1
run.end_time = 3
"""
    src = tmp_path / "sim"
    assert cli_main(["simulate", "--config", write(tmp_path, text), "--out", str(src)]) == 0
    out = tmp_path / "diag"
    assert cli_main(["diagnose", "--input", str(src), "--out", str(out)]) == 0
    rows = read_csv(out / "convergence_report.csv")
    assert rows[0] == REPORT_HEADER
    assert len(rows) == 1 + 31
    assert rows[1][-1] == "0"  # the bimodal start is far from equilibrium
    traj = read_trajectory_csv(src / "trajectory.csv", 2, 1)
    assert len(traj.records) == 31 and traj.failure is None
    assert manifest(out / "run.manifest")["manifest.command"] == "diagnose"


def test_read_trajectory_recovers_moments(tmp_path):
    e = Ensemble.sample_bimodal(2000, 2, 1.0, 0.5, seed=5)
    from mmacc.model import LinearSdeModel, StepSchedule
    model = LinearSdeModel(np.diag([-1.0, -3.0]), np.eye(2), 1)
    traj = run(e, model, StepSchedule(0.05, 1, 0.1, 0.5))
    traj.write_csv(tmp_path / "t.csv")
    back = read_trajectory_csv(tmp_path / "t.csv", 2, 1)
    for a, b in zip(traj.records, back.records):
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.cov, b.cov)
        np.testing.assert_allclose(a.cumulants.fourth[:2], b.cumulants.fourth, rtol=1e-9, atol=1e-12)


def test_manifest_reads_back_as_config(tmp_path):
    out = tmp_path / "o"
    assert cli_main(["simulate", "--config", write(tmp_path, SIM), "--out", str(out)]) == 0
    cfg = load_config(out / "run.manifest")
    assert cfg.get("run.seed") == 11 and cfg.epsilon == 0.5


def test_config_parser_details():
    cfg = parse_config("model.drift = -1, 0.5; 0, -3  # comment\nmodel.forcing = sine(1, 1, 0)\n"
                       "model.diffusion = 1; 0\n")
    m = cfg.model()
    np.testing.assert_array_equal(m.drift, [[-1, 0.5], [0, -3]])
    assert m.diffusion.shape == (2, 1)
    with pytest.raises(ConfigError):
        parse_config("model.epsilon = 1\nmodel.drift = -1\n").model()
    with pytest.raises(ConfigError):
        parse_config("novalue\n")


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mmacc", "reference", "--config",
                           write(tmp_path, REF), "--out", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o/reference.csv").exists()
    bad = subprocess.run([sys.executable, "-m", "mmacc", "reference", "--config",
                          write(tmp_path, "run.x = 1\n", "bad.cfg"), "--out", str(tmp_path / "p")],
                         capture_output=True, text=True)
    assert bad.returncode == 1 and "line 1" in bad.stderr
