import json
import subprocess
import sys

import numpy as np
import pytest

from parahom.cli import main
from parahom.environments import EnvironmentSpec
from parahom.experiments import ExperimentConfig, emit, run, validate
from parahom.fitting import DecayFit
from parahom.lattice import LatticeBox
from parahom.solver import green_mc_estimate


def _write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_validate_stability():
    cfg = ExperimentConfig.from_dict({"experiment": "heatkernel", "numerics": {"Lambda": 0.3, "d": 1}})
    assert any("stability" in d for d in validate(cfg))


def test_validate_environment_stability():
    cfg = ExperimentConfig.from_dict({"experiment": "qmatrix",
                                      "environment": {"kind": "iid-bernoulli", "kappa": 0.2, "gamma": 0.5}})
    assert any("stability" in d for d in validate(cfg))


def test_validate_empty_eps():
    cfg = ExperimentConfig.from_dict({"experiment": "rate", "environment": {"kind": "iid-bernoulli"},
                                      "numerics": {"eps": []}})
    assert any("eps" in d for d in validate(cfg))


def test_validate_ok_and_unknown():
    assert validate(ExperimentConfig.from_dict({"experiment": "heatkernel"})) == []
    assert validate(ExperimentConfig.from_dict({"experiment": "rate",
                                                "environment": {"kind": "iid-bernoulli"}})) == []
    assert validate(ExperimentConfig.from_dict({"experiment": "nope"}))
    assert validate(ExperimentConfig.from_dict({"experiment": "heatkernel", "numerics": {"bogus": 1}}))


def test_emit_headers_and_checksum(tmp_path):
    est = green_mc_estimate(EnvironmentSpec.bernoulli(seed=2), LatticeBox.cube(1, 8), np.arange(3), N=4)
    c1 = emit(est, tmp_path / "g.csv")
    c2 = emit(est, tmp_path / "g2.csv")
    assert c1 == c2
    assert (tmp_path / "g.csv").read_text().splitlines()[0] == "x1,t,mean,stderr,N,seed"
    emit(DecayFit(1.0, 0.1, 0.2), tmp_path / "f.csv")
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == "C,gamma,alpha,band_lo,band_hi,npoints,verdict"


def test_run_heatkernel(tmp_path):
    m = run(ExperimentConfig.from_dict({"experiment": "heatkernel"}), out=str(tmp_path))
    assert m.verdict == "pass"
    assert -0.55 <= m.summary["slope"] <= -0.45
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert set(man["files"]) == {"kernel.csv", "checks.csv", "envelope_fit.csv"}


def test_run_rate_constant_bitwise(tmp_path):
    raw = {"experiment": "rate", "environment": {"kind": "constant", "kappa": 1 / 12},
           "numerics": {"N": 2, "eps": [0.5, 0.25, 0.125], "a_hom": 1 / 12}}
    m1 = run(ExperimentConfig.from_dict(raw), out=str(tmp_path / "a"))
    m2 = run(ExperimentConfig.from_dict(raw), out=str(tmp_path / "b"))
    assert m1.files == m2.files
    assert (tmp_path / "a" / "rate.csv").read_bytes() == (tmp_path / "b" / "rate.csv").read_bytes()


def test_run_qmatrix_manifest(tmp_path):
    raw = {"experiment": "qmatrix", "seed": 4, "environment": {"kind": "iid-bernoulli"},
           "numerics": {"N": 16, "N_direct": 64, "horizon": 64}}
    m = run(ExperimentConfig.from_dict(raw), out=str(tmp_path))
    for key in ("q00", "q00_stderr", "q_direct", "delta", "combined_sigma"):
        assert key in m.summary
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["summary"]["delta"] == pytest.approx(m.summary["q00"] - m.summary["q_direct"])


def test_run_identity(tmp_path):
    m = run(ExperimentConfig.from_dict({"experiment": "identity-check", "seed": 2}), out=str(tmp_path))
    assert m.verdict == "pass"


def test_cli_exit_codes(tmp_path, capsys):
    good = _write(tmp_path, 'experiment = "identity-check"\n', "good.toml")
    bad = _write(tmp_path, 'experiment = "heatkernel"\n[numerics]\nLambda = 0.3\n', "bad.toml")
    broken = _write(tmp_path, "experiment = \n", "broken.toml")
    assert main(["validate", "--config", str(good)]) == 0
    assert main(["validate", "--config", str(bad)]) == 4
    assert main(["validate", "--config", str(broken)]) == 4
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 4
    assert main(["run", "--config", str(good), "--out", str(tmp_path / "o"), "--seed", "3"]) == 0
    assert main(["list-experiments"]) == 0
    assert "heatkernel" in capsys.readouterr().out


def test_cli_fail_exit(tmp_path):
    # a slope window that cannot meet the band on a short horizon gives exit code 3
    cfg = _write(tmp_path, 'experiment = "heatkernel"\n[numerics]\nhorizon = 16\n')
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "parahom", "list-experiments"], capture_output=True, text=True)
    assert r.returncode == 0 and "green-compare" in r.stdout
