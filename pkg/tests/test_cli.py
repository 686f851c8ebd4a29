import json

import numpy as np
import pytest

from skinfer.cli import main
from skinfer.config import ConfigError, normalize_config


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


FAST = ["--builtin", "immigration-death", "--iters", "60", "--pilot-iters", "40"]


def test_missing_config_exit_2(workdir, capsys):
    assert main(["infer", "--config", "missing.json"]) == 2
    assert "config not found" in capsys.readouterr().err


def test_bad_config_values_exit_2(workdir):
    (workdir / "c.json").write_text(json.dumps({"builtin": "lotka-volterra", "sampler": {"rho": 2.0}}))
    assert main(["validate-config", "c.json"]) == 2
    (workdir / "c.json").write_text(json.dumps({"builtin": "nope"}))
    assert main(["validate-config", "c.json"]) == 2
    (workdir / "c.json").write_text(json.dumps({"builtin": "sir-ou", "sampler": {"name": "mis"},
                                                "approximation": "poisson-leap"}))
    assert main(["validate-config", "c.json"]) == 2


def test_pmmh_normalises_to_cpmmh_rho_zero():
    cfg = normalize_config({"builtin": "immigration-death", "sampler": {"name": "pmmh"}})
    assert cfg["sampler"]["name"] == "cpmmh" and cfg["sampler"]["rho"] == 0.0
    assert normalize_config(cfg) == cfg
    with pytest.raises(ConfigError):
        normalize_config({"builtin": "immigration-death", "sampler": {"name": "pmmh", "rho": 0.5}})


def test_infer_outputs_and_manifest_round_trip(workdir, capsys):
    assert main(["infer", *FAST, "--out", "a"]) == 0
    for name in ("chain.csv", "summary.json", "manifest.json"):
        assert (workdir / "a" / name).exists()
    summary = json.loads((workdir / "a" / "summary.json").read_text())
    assert {"mess", "acceptance_rate", "parameters", "machine_dependent"} <= set(summary)
    manifest = json.loads((workdir / "a" / "manifest.json").read_text())
    capsys.readouterr()
    assert main(["validate-config", "a/manifest.json"]) == 0
    assert json.loads(capsys.readouterr().out) == manifest["config"]


def test_infer_repeat_is_byte_identical(workdir):
    assert main(["infer", *FAST, "--seed", "4", "--out", "a"]) == 0
    first = {name: (workdir / "a" / name).read_bytes() for name in ("chain.csv", "manifest.json")}
    assert main(["infer", *FAST, "--seed", "4", "--out", "a"]) == 0
    for name, content in first.items():
        assert (workdir / "a" / name).read_bytes() == content
    assert main(["infer", *FAST, "--seed", "5", "--out", "c"]) == 0
    assert (workdir / "a" / "chain.csv").read_bytes() != (workdir / "c" / "chain.csv").read_bytes()


def test_infer_from_manifest_reproduces_chain(workdir):
    assert main(["infer", *FAST, "--out", "a"]) == 0
    assert main(["infer", "--config", "a/manifest.json", "--out", "b"]) == 0
    assert (workdir / "a" / "chain.csv").read_bytes() == (workdir / "b" / "chain.csv").read_bytes()


def test_mis_via_cli(workdir):
    assert main(["infer", *FAST, "--sampler", "mis", "--out", "m"]) == 0
    manifest = json.loads((workdir / "m" / "manifest.json").read_text())
    assert manifest["config"]["sampler"]["name"] == "mis"


def _impossible_model(workdir):
    (workdir / "d.csv").write_text("time,y1\n1,10\n2,12\n3,11\n")
    model = {
        "species": ["X"],
        "reactions": [{"reactants": {}, "products": {"X": 1}}],
        "observation": {"P": [[1.0]], "Sigma": 0.0},
        "priors": [{"type": "normal-on-log", "mean": 0.0, "sd": 10.0}],
        "initial": {"kind": "known", "x": [10.0]},
        "approximation": "poisson-leap",
        "m": 2,
        "data": "d.csv",
    }
    (workdir / "model.json").write_text(json.dumps(model))


def test_numerical_abort_exit_3(workdir, capsys):
    _impossible_model(workdir)
    assert main(["infer", "--model", "model.json", "--init", "2.0", "--iters", "5", "--pilot-iters", "0",
                 "--N", "2"]) == 3
    assert "numerical abort" in capsys.readouterr().err


def test_model_file_missing_key_exit_2(workdir):
    (workdir / "model.json").write_text(json.dumps({"species": ["X"]}))
    assert main(["infer", "--model", "model.json"]) == 2


def test_simulate_then_infer_on_written_data(workdir):
    assert main(["simulate", "--builtin", "lotka-volterra", "--sigma", "5", "--seed", "7", "--n", "12",
                 "--out", "sim"]) == 0
    lines = (workdir / "sim" / "data.csv").read_text().splitlines()
    assert lines[0] == "time,y1,y2" and len(lines) == 13
    assert (workdir / "sim" / "latent.csv").exists()
    assert main(["simulate", "--builtin", "lotka-volterra", "--sigma", "5", "--seed", "7", "--n", "12",
                 "--out", "sim2"]) == 0
    assert (workdir / "sim" / "data.csv").read_bytes() == (workdir / "sim2" / "data.csv").read_bytes()
    assert main(["infer", "--builtin", "lotka-volterra", "--sigma", "5", "--data", "sim/data.csv", "--iters",
                 "20", "--pilot-iters", "0", "--out", "fit"]) == 0


@pytest.mark.parametrize("method", ["poisson-leap", "cle"])
def test_simulate_discretised(workdir, method):
    assert main(["simulate", "--builtin", "immigration-death", "--method", method, "--n", "6", "--out", "s"]) == 0
    data = np.loadtxt(workdir / "s" / "data.csv", delimiter=",", skiprows=1)
    assert data.shape == (6, 2)


def test_tune_writes_report(workdir, capsys):
    assert main(["tune", "--builtin", "lotka-volterra", "--N-grid", "1,3", "--replicates", "100", "--out", "t"]) == 0
    report = json.loads((workdir / "t" / "tuning.json").read_text())
    assert report["N_grid"] == [1, 3]
    assert "recommended N" in capsys.readouterr().out


def test_diagnose_chain(workdir, capsys):
    assert main(["infer", *FAST, "--out", "a"]) == 0
    capsys.readouterr()
    assert main(["diagnose", "a/chain.csv", "--burn", "10", "--out", "diag.json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["n_iters"] == 50
    assert main(["diagnose", "nope.csv"]) == 2
    assert main(["diagnose", "a/chain.csv", "--burn", "60"]) == 2


def test_sir_ou_rejects_mis():
    with pytest.raises(ConfigError):
        normalize_config({"builtin": "sir-ou", "sampler": {"name": "mis"}})
