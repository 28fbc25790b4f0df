"""Command-line front end: ``fourdvar <command> --config PATH``.

Outputs go to ``--out``, else ``$FOURDVAR_OUT``, else the config's
``output.directory``. Exit status is 0 on success, 1 on solver or runtime
errors (or failing verify suites) and 2 on config errors.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .assimilation import eval_cost
from .bayes import KLExpansion, pcn_sample
from .certificates import (
    certificate_sweep,
    construct_saddle,
    convexity_certificate,
    sigma_threshold,
    time_threshold,
)
from .config import COMMANDS, ConfigError, ExperimentConfig, default_config, grid_function, load_config
from .grid import TimeMesh
from .io import config_hash, write_csv, write_json, write_schema
from .model import make_model
from .optimize import multistart
from .pde import SolverError, solve_forward
from .verify import run_suites

__all__ = ["main", "run", "OUT_ENV"]

OUT_ENV = "FOURDVAR_OUT"
logger = logging.getLogger("fourdvar")


def _grid_header(grid) -> list:
    return [f"x_{j}" for j in range(grid.size)]


def _forward(cfg: ExperimentConfig, out: Path, chash: str, threads: int) -> list:
    problem = cfg.problem()
    spec = cfg.section("forward")
    grid = problem.grid
    u = grid_function(spec.get("u", {"sines": {1: 1.0}}), grid)
    mesh = problem.mesh
    t_final = spec.get("t_final")
    if t_final is not None and t_final > mesh.t_final:
        mesh = TimeMesh.build(problem.obs.times, t_final=float(t_final), dt_max=cfg.dt_max)
    y = solve_forward(problem.model, u, mesh)
    rows = (np.concatenate([[t], s]) for t, s in zip(mesh.nodes, y.states))
    return [write_csv(out / "trajectory.csv", ["t", *_grid_header(grid)], rows, chash)]


def _assimilate(cfg: ExperimentConfig, out: Path, chash: str, threads: int) -> list:
    problem = cfg.problem()
    spec = cfg.section("assimilate")
    opts = {k: spec[k] for k in ("gtol", "max_iter", "memory") if k in spec}
    catalog = multistart(
        problem,
        n_starts=int(spec.get("n_starts", 4)),
        sampler=spec.get("sampler", "prior"),
        seed=cfg.seed,
        method=spec.get("method", "lbfgs"),
        delta_merge=float(spec.get("delta_merge", 1e-4)),
        threads=threads,
        **opts,
    )
    done = [r for r in catalog.runs if not isinstance(r, Exception) and r.converged]
    if not done:
        raise SolverError("no multistart run converged")
    best = min(done, key=lambda r: r.cost)
    cost = eval_cost(best.minimizer, problem)
    result = {**best.to_dict(), "misfit": cost.misfit, "reg": cost.reg}
    truth = cfg.truth()
    if truth is not None:
        result["l2_error_to_truth"] = float(problem.grid.norm(best.minimizer - truth))
    traces = []
    for i, r in enumerate(catalog.runs):
        if not isinstance(r, Exception):
            traces.extend((i, k, c) for k, c in enumerate(r.path_costs))
    return [
        write_json(out / "result.json", result, chash),
        write_json(out / "catalog.json", catalog.to_dict(), chash),
        write_csv(out / "traces.csv", ["start", "iteration", "cost"], traces, chash),
    ]


def _scan(cfg: ExperimentConfig, out: Path, chash: str, threads: int) -> list:
    problem = cfg.problem()
    if problem.obs.N == 0:
        raise ConfigError("scan-uniqueness needs observations")
    spec = cfg.section("scan")
    sigmas = spec.get("sigmas", [0.1, 0.3, 1.0, 3.0])
    t_finals = spec.get("t_finals", [float(problem.obs.times[-1])])
    rows = certificate_sweep(problem, sigmas, t_finals)
    cert = convexity_certificate(problem)
    summary = {
        "certificate": cert.to_dict(),
        "sigma_threshold": sigma_threshold(problem),
        "time_threshold": time_threshold(problem),
    }
    keys = ["sigma", "t_N", "lhs", "rhs", "passes"]
    return [
        write_csv(out / "sweep.csv", keys, ([r[k] if k != "passes" else int(r[k]) for k in keys] for r in rows), chash),
        write_json(out / "certificate.json", summary, chash),
    ]


def _saddle(cfg: ExperimentConfig, out: Path, chash: str, threads: int) -> list:
    spec = cfg.section("saddle")
    mspec = spec.get("model")
    if mspec is not None:
        try:
            model = make_model(mspec["kind"], **(mspec.get("params") or {}))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"saddle.model: {exc}") from None
    else:
        model = cfg.model()
    q = int(spec.get("q", 1))
    try:
        inst = construct_saddle(
            q, spec.get("times", [0.05, 0.1]), float(spec.get("sigma", 1.0)), model, cfg.grid(), cfg.dt_max
        )
    except ValueError as exc:
        raise ConfigError(f"saddle: {exc}") from None
    payload = inst.to_dict()
    payload["q"] = q
    return [
        write_json(out / "saddle.json", payload, chash),
        write_json(out / "hessian.json", inst.hessian.to_dict(), chash),
    ]


def _posterior(cfg: ExperimentConfig, out: Path, chash: str, threads: int) -> list:
    problem = cfg.problem()
    spec = cfg.section("posterior")
    kl = KLExpansion(problem.prior.u0, problem.sigma, spec.get("n_modes"))
    rng = np.random.default_rng(cfg.seed)
    chain = pcn_sample(
        kl, problem.obs, problem.model, problem.mesh,
        beta=float(spec.get("beta", 0.2)),
        n_samples=int(spec.get("n_samples", 200)),
        rng=rng,
        misfit_scale=float(spec.get("misfit_scale", 0.5)),
        thin=int(spec.get("thin", 1)),
    )
    rows = (np.concatenate([[i, phi], u]) for i, (phi, u) in enumerate(zip(chain.log_potentials, chain.samples)))
    header = ["sample", "log_potential", *_grid_header(problem.grid)]
    summary = chain.summary()
    truth = cfg.truth()
    if truth is not None and problem.obs.N:
        summary["l2_error_mean_to_truth"] = float(problem.grid.norm(chain.mean - truth))
        summary["l2_error_prior_mean_to_truth"] = float(problem.grid.norm(problem.prior.u0 - truth))
    return [
        write_csv(out / "chain.csv", header, ([int(r[0]), *r[1:]] for r in rows), chash),
        write_json(out / "chain_summary.json", summary, chash),
    ]


def _verify(cfg: ExperimentConfig, out: Path, chash: str, threads: int) -> list:
    report = run_suites(cfg.problem(), seed=cfg.seed)
    path = write_json(out / "verify_report.json", report, chash)
    if not report["passed"]:
        failed = [k for k, s in report["suites"].items() if not s["passed"]]
        raise _SuiteFailure(f"failing suites: {', '.join(failed)}", [path])
    return [path]


class _SuiteFailure(RuntimeError):
    def __init__(self, msg, paths):
        super().__init__(msg)
        self.paths = paths


HANDLERS = {
    "forward": _forward,
    "assimilate": _assimilate,
    "scan-uniqueness": _scan,
    "construct-saddle": _saddle,
    "sample-posterior": _posterior,
    "verify": _verify,
}


def run(cfg: ExperimentConfig, out_dir, threads: int = 1) -> tuple[int, list]:
    """Execute ``cfg.command`` and return ``(status, written paths)``."""
    out = Path(out_dir)
    chash = config_hash(cfg.raw)
    try:
        paths = HANDLERS[cfg.command](cfg, out, chash, threads)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return 2, []
    except _SuiteFailure as exc:
        logger.error("%s", exc)
        return 1, exc.paths + [write_schema(out, chash)]
    except (SolverError, RuntimeError, ValueError, FloatingPointError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return 1, []
    return 0, paths + [write_schema(out, chash)]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fourdvar", description="4D-Var laboratory for 1-D parabolic PDEs")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, help="YAML experiment config (default: packaged heat config)")
    parser.add_argument("--out", type=Path, help=f"output directory (default: ${OUT_ENV} or output.directory)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for multistart")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else default_config()
        cfg = cfg.with_overrides(command=args.command, seed=args.seed)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return 2
    if args.threads < 1:
        logger.error("config error: --threads must be positive")
        return 2
    out = args.out or os.environ.get(OUT_ENV) or cfg.output_dir or "results"
    status, paths = run(cfg, out, args.threads)
    for p in paths:
        print(p)
    return status


if __name__ == "__main__":
    sys.exit(main())
