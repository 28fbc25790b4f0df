import json
from pathlib import Path

import pytest
import yaml

from fourdvar.cli import OUT_ENV, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _read(path):
    return json.loads(Path(path).read_text())


def test_verify_default_config(tmp_path):
    assert main(["verify", "--out", str(tmp_path)]) == 0
    report = _read(tmp_path / "verify_report.json")
    assert report["passed"]
    assert set(report["suites"]) == {"model", "grid", "pde", "assimilation", "optimize", "bayes", "certificates"}
    assert (tmp_path / "schema.json").exists()


def test_forward_writes_trajectory(tmp_path):
    assert main(["forward", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    header = lines[1].split(",")
    assert header[0] == "t" and len(header) == 1 + 65
    assert float(lines[-1].split(",")[0]) == pytest.approx(0.1)


def test_assimilate_noiseless_twin(tmp_path):
    assert main(["assimilate", "--out", str(tmp_path)]) == 0
    assert _read(tmp_path / "catalog.json")["distinct_count"] == 1
    result = _read(tmp_path / "result.json")
    assert result["converged"] and result["misfit"] <= 1e-6
    assert (tmp_path / "traces.csv").exists()


def test_construct_saddle_q3(tmp_path):
    cfg = yaml.safe_load((CONFIGS / "saddle.yaml").read_text())
    cfg["grid"]["M"] = 31
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(cfg))
    assert main(["construct-saddle", "--config", str(path), "--out", str(tmp_path)]) == 0
    assert _read(tmp_path / "hessian.json")["morse_index"] >= 3
    inst = _read(tmp_path / "saddle.json")
    assert inst["q"] == 3 and inst["D"] == inst["Z"]


def test_scan_and_posterior(tmp_path):
    cfg = yaml.safe_load((CONFIGS / "burgers_twin.yaml").read_text())
    cfg["grid"] = {"M": 15, "dt_max": 0.002}
    cfg["posterior"] = {"beta": 0.5, "n_samples": 20}
    cfg["scan"] = {"sigmas": [0.1, 100.0], "t_finals": [0.1]}
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(cfg))
    assert main(["scan-uniqueness", "--config", str(path), "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "sweep.csv").read_text().splitlines()
    assert rows[1] == "sigma,t_N,lhs,rhs,passes"
    assert [r.split(",")[-1] for r in rows[2:]] == ["1", "0"]
    cert = _read(tmp_path / "certificate.json")
    assert 0.1 < cert["sigma_threshold"] < 100
    assert main(["sample-posterior", "--config", str(path), "--out", str(tmp_path)]) == 0
    summary = _read(tmp_path / "chain_summary.json")
    assert summary["n_samples"] == 20
    assert len((tmp_path / "chain.csv").read_text().splitlines()) == 22


def test_outputs_identical_across_runs(tmp_path):
    for run in ("a", "b"):
        assert main(["sample-posterior", "--seed", "4", "--out", str(tmp_path / run)]) == 0
    for name in ("chain.csv", "chain_summary.json", "schema.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert main(["sample-posterior", "--seed", "5", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "a" / "chain.csv").read_bytes() != (tmp_path / "c" / "chain.csv").read_bytes()


def test_env_output_directory(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    assert main(["forward"]) == 0
    assert (tmp_path / "env" / "trajectory.csv").exists()


def test_config_error_status(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: {kind: unknown}\n")
    assert main(["verify", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["verify", "--config", str(tmp_path / "none.yaml"), "--out", str(tmp_path)]) == 2
    assert main(["verify", "--threads", "0", "--out", str(tmp_path)]) == 2


def test_runtime_error_status(tmp_path):
    cfg = yaml.safe_load((CONFIGS / "heat.yaml").read_text())
    cfg["assimilate"] = {"n_starts": 1, "max_iter": 1}
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(cfg))
    assert main(["assimilate", "--config", str(path), "--out", str(tmp_path)]) == 1


def test_saddle_on_unsuitable_model_is_config_error(tmp_path):
    cfg = yaml.safe_load((CONFIGS / "heat.yaml").read_text())
    cfg["saddle"] = {"q": 1}
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(cfg))
    assert main(["construct-saddle", "--config", str(path), "--out", str(tmp_path)]) == 2


def test_threads_do_not_change_results(tmp_path):
    for n in ("1", "2"):
        assert main(["assimilate", "--threads", n, "--out", str(tmp_path / n)]) == 0
    assert (tmp_path / "1" / "catalog.json").read_bytes() == (tmp_path / "2" / "catalog.json").read_bytes()
