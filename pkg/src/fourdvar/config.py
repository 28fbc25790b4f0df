"""YAML experiment configuration and the objects it describes.

A config is a nested mapping::

    seed: 0
    model: {kind: burgers, params: {nu: 1.0}}
    grid: {M: 63, dt_max: 0.001}
    observations:
      times: [0.05, 0.1]
      rows: {kind: sines, modes: [1, 2]}
      R: 1.0
      data: {source: twin, truth: {sines: {1: 0.5}}, noise_std: 0.0}
    prior: {u0: zero, sigma: 0.5}
    command: assimilate
    output: {directory: results, formats: [json, csv]}

plus optional per-command sections (``forward``, ``assimilate``, ``scan``,
``saddle``, ``posterior``, ``verify``). Grid functions are ``zero``,
``{sines: {n: amplitude}}`` or ``{values: [...]}`` (length M + 2).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .assimilation import Problem, twin_observations
from .grid import Grid
from .model import ModelSpec, make_model
from .observations import ObservationSet, PriorSpec

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "COMMANDS",
    "load_config",
    "default_config",
    "grid_function",
    "observation_rows",
]

COMMANDS = ("forward", "assimilate", "scan-uniqueness", "construct-saddle", "sample-posterior", "verify")
MODEL_KINDS = ("heat", "burgers", "bounded_reaction", "linear")


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


def _section(raw: dict, key: str, required: bool = False) -> dict:
    val = raw.get(key)
    if val is None:
        if required:
            raise ConfigError(f"missing section '{key}'")
        return {}
    if not isinstance(val, dict):
        raise ConfigError(f"section '{key}' must be a mapping")
    return val


def grid_function(spec, grid: Grid) -> np.ndarray:
    if spec is None or spec == "zero":
        return grid.zeros()
    if isinstance(spec, dict) and "sines" in spec:
        u = grid.zeros()
        for n, amp in dict(spec["sines"]).items():
            n = int(n)
            if not 1 <= n <= grid.M:
                raise ConfigError(f"sine index {n} outside 1..{grid.M}")
            u = u + float(amp) * grid.sine(n)
        return u
    if isinstance(spec, dict) and "values" in spec:
        vals = np.asarray(spec["values"], dtype=float)
        if vals.shape != (grid.size,):
            raise ConfigError(f"'values' must have length {grid.size}")
        try:
            return grid.check(vals)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    raise ConfigError(f"cannot interpret grid function {spec!r}")


def observation_rows(spec, grid: Grid) -> np.ndarray:
    """Rows of ``H``: ``sines`` (modes), ``points`` (x positions) or ``averages`` (intervals)."""
    spec = spec or {"kind": "sines", "modes": [1]}
    kind = spec.get("kind", "sines")
    if kind == "sines":
        return np.array([grid.sine(int(n)) for n in spec.get("modes", [1])])
    if kind == "points":
        rows = []
        for x in spec["x"]:
            j = int(round(float(x) * (grid.M + 1)))
            if not 1 <= j <= grid.M:
                raise ConfigError(f"observation point {x} is not an interior node")
            row = grid.zeros()
            row[j] = 1.0 / grid.dx
            rows.append(row)
        return np.array(rows)
    if kind == "averages":
        rows = []
        for a, b in spec["intervals"]:
            mask = (grid.x >= float(a)) & (grid.x <= float(b))
            mask[0] = mask[-1] = False
            if not mask.any():
                raise ConfigError(f"interval [{a}, {b}] contains no interior node")
            rows.append(mask / (grid.dx * mask.sum()))
        return np.array(rows, dtype=float)
    raise ConfigError(f"unknown observation row kind {kind!r}")


def _covariance(spec, q: int) -> np.ndarray:
    if spec is None:
        return np.eye(q)
    R = np.asarray(spec, dtype=float)
    if R.ndim == 0:
        return float(R) * np.eye(q)
    if R.ndim == 1:
        return np.diag(R)
    return R


@dataclass
class ExperimentConfig:
    """Validated view of a raw config mapping."""

    raw: dict
    seed: int = 0
    command: str = "verify"
    model_kind: str = "heat"
    model_params: dict = field(default_factory=dict)
    M: int = 63
    dt_max: float | None = None
    output_dir: str | None = None
    formats: tuple = ("json", "csv")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        raw = copy.deepcopy(raw)
        model = _section(raw, "model", required=True)
        kind = model.get("kind")
        if kind not in MODEL_KINDS:
            raise ConfigError(f"model.kind must be one of {MODEL_KINDS}, got {kind!r}")
        params = model.get("params") or {}
        if not isinstance(params, dict) or not all(isinstance(v, (int, float)) for v in params.values()):
            raise ConfigError("model.params must map names to numbers")
        grid = _section(raw, "grid")
        M = grid.get("M", 63)
        if not isinstance(M, int) or M < 3:
            raise ConfigError("grid.M must be an integer >= 3")
        dt_max = grid.get("dt_max")
        if dt_max is not None and (not isinstance(dt_max, (int, float)) or dt_max <= 0):
            raise ConfigError("grid.dt_max must be positive")
        command = raw.get("command", "verify")
        if command not in COMMANDS:
            raise ConfigError(f"command must be one of {COMMANDS}, got {command!r}")
        seed = raw.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        prior = _section(raw, "prior")
        sigma = prior.get("sigma", 1.0)
        if not isinstance(sigma, (int, float)) or sigma <= 0:
            raise ConfigError("prior.sigma must be positive")
        out = _section(raw, "output")
        cfg = cls(
            raw=raw, seed=seed, command=command, model_kind=kind, model_params=dict(params),
            M=M, dt_max=None if dt_max is None else float(dt_max),
            output_dir=out.get("directory"), formats=tuple(out.get("formats", ("json", "csv"))),
        )
        # resolve everything once so errors surface as config errors
        try:
            cfg.problem()
        except ConfigError:
            raise
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"invalid observations or prior: {exc}") from None
        return cfg

    def with_overrides(self, command: str | None = None, seed: int | None = None) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        if command is not None:
            raw["command"] = command
        if seed is not None:
            raw["seed"] = seed
        return ExperimentConfig.from_dict(raw)

    def section(self, key: str) -> dict:
        return _section(self.raw, key)

    def model(self) -> ModelSpec:
        try:
            return make_model(self.model_kind, **self.model_params)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def grid(self) -> Grid:
        return Grid(self.M)

    def observations(self) -> ObservationSet:
        grid = self.grid()
        spec = self.section("observations")
        times = spec.get("times", [])
        rows = observation_rows(spec.get("rows"), grid)
        R = _covariance(spec.get("R"), rows.shape[0])
        if not times:
            return ObservationSet(np.zeros(0), rows, R, np.zeros((0, rows.shape[0])))
        data = spec.get("data") or {"source": "twin"}
        source = data.get("source", "twin")
        if source == "literal":
            return ObservationSet(times, rows, R, np.asarray(data["values"], dtype=float), spec.get("D"))
        if source == "twin":
            truth = grid_function(data.get("truth", {"sines": {1: 1.0}}), grid)
            noise = float(data.get("noise_std", 0.0))
            rng = np.random.default_rng([self.seed, 1])
            obs = twin_observations(self.model(), truth, times, rows, R, noise, rng, self.dt_max)
            return obs.with_data(obs.data, spec.get("D"))
        raise ConfigError(f"unknown data source {source!r}")

    def truth(self) -> np.ndarray | None:
        data = self.section("observations").get("data") or {}
        if data.get("source", "twin") != "twin":
            return None
        return grid_function(data.get("truth", {"sines": {1: 1.0}}), self.grid())

    def prior(self) -> PriorSpec:
        spec = self.section("prior")
        return PriorSpec(grid_function(spec.get("u0", "zero"), self.grid()), float(spec.get("sigma", 1.0)))

    def problem(self) -> Problem:
        obs = self.observations()
        t_final = self.section("forward").get("t_final") if obs.N == 0 else None
        if obs.N == 0 and t_final is None:
            t_final = 0.1
        return Problem.build(self.model(), obs, self.prior(), dt_max=self.dt_max, t_final=t_final)


def load_config(path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    return ExperimentConfig.from_dict(raw)


def default_config() -> ExperimentConfig:
    """The packaged heat-equation config."""
    text = resources.files("fourdvar").joinpath("data/heat.yaml").read_text()
    return ExperimentConfig.from_dict(yaml.safe_load(text))
