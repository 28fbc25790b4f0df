import json

import numpy as np
import pytest
import yaml

from fourdvar import Grid
from fourdvar.config import ConfigError, ExperimentConfig, default_config, grid_function, load_config, observation_rows
from fourdvar.io import config_hash, to_jsonable, write_csv, write_json


def test_jsonable_handles_numpy_and_nonfinite():
    out = to_jsonable({"a": np.arange(3), "b": np.float64(np.inf), "c": (np.bool_(True), np.nan)})
    assert out == {"a": [0, 1, 2], "b": "inf", "c": [True, "nan"]}
    json.dumps(out)


def test_config_hash_is_order_independent():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_writers_stamp_hash(tmp_path):
    j = write_json(tmp_path / "x.json", {"v": np.array([1.0, 2.0])}, "abc")
    assert json.loads(j.read_text()) == {"config_hash": "abc", "v": [1.0, 2.0]}
    c = write_csv(tmp_path / "x.csv", ["a", "b"], [(1, 0.1), (2, 0.2)], "abc")
    lines = c.read_text().splitlines()
    assert lines[0] == "# config_hash=abc"
    assert lines[1] == "a,b" and lines[2] == "1,0.1"


def test_grid_function_specs():
    g = Grid(15)
    assert np.array_equal(grid_function("zero", g), g.zeros())
    u = grid_function({"sines": {1: 2.0, "3": -1.0}}, g)
    assert np.allclose(u, 2 * g.sine(1) - g.sine(3))
    vals = g.sine(2)
    assert np.array_equal(grid_function({"values": vals.tolist()}, g), vals)
    for bad in ({"sines": {99: 1.0}}, {"values": [1.0, 2.0]}, {"values": [1.0] * 17}, "ones"):
        with pytest.raises(ConfigError):
            grid_function(bad, g)


def test_observation_rows():
    g = Grid(9)
    pts = observation_rows({"kind": "points", "x": [0.5]}, g)
    assert g.inner(pts[0], g.sine(1)) == pytest.approx(1.0)
    avg = observation_rows({"kind": "averages", "intervals": [[0.2, 0.4]]}, g)
    assert g.inner(avg[0], np.where(g.x > -1, 1.0, 0.0)) == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        observation_rows({"kind": "points", "x": [0.0]}, g)
    with pytest.raises(ConfigError):
        observation_rows({"kind": "wavelets"}, g)


def test_default_config_builds():
    cfg = default_config()
    assert cfg.command == "verify" and cfg.model_kind == "heat"
    p = cfg.problem()
    assert p.obs.N == 2 and p.grid.M == 63
    from fourdvar import solve_forward

    y = solve_forward(p.model, cfg.truth(), p.mesh)
    assert np.allclose(p.obs.H(y.at_obs()), p.obs.data, rtol=1e-12, atol=1e-14)


def test_twin_noise_is_seeded():
    raw = yaml.safe_load(default_config_text())
    raw["observations"]["data"]["noise_std"] = 0.1
    a = ExperimentConfig.from_dict(raw).observations().data
    b = ExperimentConfig.from_dict(raw).observations().data
    raw["seed"] = 1
    c = ExperimentConfig.from_dict(raw).observations().data
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def default_config_text():
    from importlib import resources

    return resources.files("fourdvar").joinpath("data/heat.yaml").read_text()


@pytest.mark.parametrize(
    "patch",
    [
        {"model": None},
        {"model": {"kind": "navier_stokes"}},
        {"grid": {"M": 1}},
        {"grid": {"M": 31, "dt_max": -1}},
        {"command": "explode"},
        {"seed": -3},
        {"prior": {"sigma": 0}},
        {"observations": {"times": [0.1, 0.05]}},
        {"observations": {"times": [0.1], "R": -1.0}},
    ],
)
def test_config_errors(patch):
    raw = yaml.safe_load(default_config_text())
    raw.update(patch)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(raw)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: [unclosed")
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text("- just a list")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_overrides():
    cfg = default_config().with_overrides(command="forward", seed=9)
    assert cfg.command == "forward" and cfg.seed == 9
