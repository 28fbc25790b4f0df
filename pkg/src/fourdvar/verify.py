"""Invariant suites for every module, run by the ``verify`` command.

Each check records the measured value and its threshold so a report can be
diffed across runs. All randomness comes from one seed.
"""

from __future__ import annotations

import numpy as np

from .assimilation import (
    Problem,
    assemble_hessian,
    cost_and_grad,
    eval_cost,
    grad_cost,
    hessian_terms,
    second_variation_pairing,
)
from .bayes import KLExpansion, pcn_sample, sample_prior
from .certificates import convexity_certificate, verify_apriori_bounds
from .grid import Grid
from .model import check_global_existence, derivative_slopes
from .observations import ObservationSet
from .optimize import minimize
from .pde import solve_adjoint, solve_forward, solve_second_variation, solve_tangent

__all__ = ["run_suites", "SUITES"]


def _check(value: float, threshold: float, kind: str = "le") -> dict:
    value = float(value)
    ok = value <= threshold if kind == "le" else value >= threshold
    return {"passed": bool(ok), "value": value, "threshold": float(threshold), "kind": kind}


def _smooth(grid: Grid, rng, n_modes: int = 5, scale: float = 0.5) -> np.ndarray:
    coef = scale * rng.standard_normal(n_modes) / np.arange(1, n_modes + 1) ** 2
    return sum(c * grid.sine(n) for n, c in enumerate(coef, start=1))


def _rel(a, b) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def suite_model(problem: Problem, rng) -> dict:
    m = problem.model
    y = rng.uniform(-2.0, 2.0, 16)
    slopes = derivative_slopes(m, y)
    out = {f"slope_{k}": _check(v, 1.9, "ge") for k, v in slopes.items()}
    out["global_existence"] = _check(float(check_global_existence(m)), 1.0, "ge")
    return out


def suite_grid(problem: Problem, rng) -> dict:
    g = problem.grid
    u, v = _smooth(g, rng), _smooth(g, rng)
    duality = _rel(g.inner(-g.laplacian(u), v), g.inner_V(u, v))
    inverse = float(g.norm(g.laplacian(g.solve_laplacian(u)) - u) / g.norm(u))
    return {"laplacian_duality": _check(duality, 1e-12), "laplacian_inverse": _check(inverse, 1e-10)}


def suite_pde(problem: Problem, rng) -> dict:
    g, m, mesh = problem.grid, problem.model, problem.mesh
    u, v = _smooth(g, rng), _smooth(g, rng)
    y = solve_forward(m, u, mesh)
    eta = solve_tangent(m, y, v)
    # first-order Taylor remainder of the forward map
    errs = []
    for eps in (1e-2, 5e-3):
        y_eps = solve_forward(m, u + eps * v, mesh)
        errs.append(float(np.max(g.norm(y_eps.states - y.states - eps * eta.states))))
    if m.is_linear:
        taylor = _check(max(errs) / max(float(np.max(g.norm(eta.states))), 1e-300), 1e-10)
    else:
        taylor = _check(np.log2(errs[0] / errs[1]), 1.9, "ge")
    obs = problem.obs
    out = {"tangent_taylor": taylor}
    if obs.N:
        p = solve_adjoint(m, y, obs)
        # <p, eta> is constant between observations; compare across every step
        right = g.inner(p.right[:-1], eta.states[:-1])
        left = g.inner(p.left[1:], eta.states[1:])
        scale = max(float(np.max(np.abs(right))), 1e-300)
        out["adjoint_duality"] = _check(float(np.max(np.abs(left - right))) / scale, 1e-10)
    omega = solve_second_variation(m, y, eta)
    out["second_variation_finite"] = _check(float(np.all(np.isfinite(omega.states))), 1.0, "ge")
    return out


def suite_assimilation(problem: Problem, rng) -> dict:
    g = problem.grid
    u, v = _smooth(g, rng), _smooth(g, rng)
    _, gV = grad_cost(u, problem)
    eps = 1e-5
    fd = (eval_cost(u + eps * v, problem).total - eval_cost(u - eps * v, problem).total) / (2 * eps)
    out = {"gradient_fd": _check(_rel(fd, float(g.inner_V(gV, v))), 1e-6)}
    Q = hessian_terms(u, v, problem)["total"]
    h = 1e-3
    second = (
        eval_cost(u + h * v, problem).total - 2 * eval_cost(u, problem).total + eval_cost(u - h * v, problem).total
    ) / h**2
    out["hessian_fd"] = _check(_rel(Q, second), 1e-4)
    terms = hessian_terms(u, v, problem)
    pairing = second_variation_pairing(u, v, problem)
    out["omega_pairing"] = _check(abs(pairing - terms["nonlinear"]) / max(abs(Q), 1e-300), 1e-8)
    H = assemble_hessian(u, problem, min(6, g.M // 2))
    sym = float(np.max(np.abs(H.matrix - H.matrix.T)) / np.max(np.abs(H.matrix)))
    out["hessian_symmetric"] = _check(sym, 1e-10)
    return out


def suite_optimize(problem: Problem, rng) -> dict:
    g = problem.grid
    res = minimize(problem, _smooth(g, rng), method="lbfgs", gtol=1e-8, max_iter=300)
    increases = np.diff(res.path_costs)
    scale = max(abs(res.path_costs[0]), 1.0)
    _, gV = cost_and_grad(res.minimizer, problem)
    return {
        "converged": _check(float(res.converged), 1.0, "ge"),
        "monotone_cost": _check(float(np.max(increases, initial=0.0)) / scale, 1e-12),
        "stationary": _check(float(g.norm_V(gV)), 1e-8),
    }


def suite_bayes(problem: Problem, rng) -> dict:
    g = problem.grid
    kl = KLExpansion(g.zeros(), 1.0)
    n = 2000
    draws = sample_prior(kl, rng, n)
    sq = g.norm(draws) ** 2
    z = abs(sq.mean() - kl.expected_sq_norm()) / (sq.std(ddof=1) / np.sqrt(n))
    out = {"prior_sq_norm_zscore": _check(z, 4.0)}
    empty = ObservationSet.empty(g)
    chain = pcn_sample(kl, empty, problem.model, problem.mesh, 0.0, 5, rng)
    out["pcn_identity"] = _check(float(np.max(np.abs(chain.samples - kl.mean))), 0.0)
    return out


def suite_certificates(problem: Problem, rng) -> dict:
    g = problem.grid
    u = _smooth(g, rng)
    rep = verify_apriori_bounds(problem.model, u, problem.obs, problem.mesh, rng=rng)
    out = {f"bound_{k}": _check(c.margin, 0.0, "ge") for k, c in rep.checks.items()}
    if problem.obs.N:
        cert = convexity_certificate(problem)
        out["certificate_finite"] = _check(float(np.isfinite(cert.lhs) or not cert.passes), 1.0, "ge")
    return out


SUITES = {
    "model": suite_model,
    "grid": suite_grid,
    "pde": suite_pde,
    "assimilation": suite_assimilation,
    "optimize": suite_optimize,
    "bayes": suite_bayes,
    "certificates": suite_certificates,
}


def run_suites(problem: Problem, seed: int = 0, suites=None) -> dict:
    """Run the named suites (default: all) and return a JSON-ready report."""
    names = list(SUITES) if suites is None else list(suites)
    report = {}
    for i, name in enumerate(names):
        rng = np.random.default_rng([seed, i])
        try:
            checks = SUITES[name](problem, rng)
            report[name] = {"passed": all(c["passed"] for c in checks.values()), "checks": checks}
        except Exception as exc:  # a crashing suite is a failing suite
            report[name] = {"passed": False, "error": f"{type(exc).__name__}: {exc}", "checks": {}}
    return {"seed": seed, "passed": all(s["passed"] for s in report.values()), "suites": report}
