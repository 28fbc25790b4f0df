"""Minimization of the 4D-Var cost in the V inner product and multi-start cataloguing."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .assimilation import Problem, assemble_hessian, cost_and_grad
from .pde import SolverError

logger = logging.getLogger(__name__)

__all__ = [
    "LineSearchError",
    "OptimizeResult",
    "CriticalPoint",
    "CriticalPointCatalog",
    "minimize",
    "multistart",
    "merge_points",
    "draw_starts",
]

METHODS = ("sobolev_gd", "lbfgs", "fixed_point")


class LineSearchError(RuntimeError):
    pass


@dataclass
class OptimizeResult:
    minimizer: np.ndarray
    cost: float
    grad_norm_V: float
    iterations: int
    converged: bool
    path_costs: list
    method: str = "lbfgs"
    tol: float = 1e-8
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "minimizer": self.minimizer.tolist(),
            "cost": self.cost,
            "grad_norm_V": self.grad_norm_V,
            "iterations": self.iterations,
            "converged": self.converged,
            "path_costs": list(self.path_costs),
            "method": self.method,
            "tol": self.tol,
            "message": self.message,
        }


class _Objective:
    """Caches the last evaluation so cost and gradient share one forward/adjoint pair."""

    def __init__(self, problem: Problem):
        self.problem = problem
        self.grid = problem.grid
        self.n_evals = 0

    def __call__(self, u):
        self.n_evals += 1
        cost, g = cost_and_grad(u, self.problem)
        if not np.isfinite(cost.total):
            raise SolverError("non-finite cost")
        return cost.total, g


def _armijo(obj, u, J, g, d, slope, step, c, max_backtracks):
    for _ in range(max_backtracks):
        trial = u + step * d
        try:
            J_new, g_new = obj(trial)
        except SolverError:
            step *= 0.5
            continue
        if J_new <= J + c * step * slope:
            return step, trial, J_new, g_new
        step *= 0.5
    raise LineSearchError(f"Armijo backtracking failed after {max_backtracks} halvings")


def _lbfgs_direction(g, pairs, inner, gamma):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * inner(s, q)
        alphas.append(a)
        q = q - a * y
    r = gamma * q
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * inner(y, r)
        r = r + (a - b) * s
    return -r


def minimize(
    problem: Problem,
    start,
    method: str = "lbfgs",
    gtol: float = 1e-8,
    max_iter: int = 500,
    armijo_c: float = 1e-4,
    memory: int = 10,
    damping: float = 1.0,
    max_backtracks: int = 60,
) -> OptimizeResult:
    """Drive ``||grad_V J||_V`` below ``gtol``.

    ``sobolev_gd`` steps along ``-grad_V J`` and ``lbfgs`` builds its quasi-Newton
    model from V inner products; both use Armijo backtracking with constant
    ``armijo_c``. ``fixed_point`` iterates ``u <- (1 - damping) u + damping T(u)``
    with ``T(u) = u0 - sigma^2 lap^{-1} p(0)``.

    If backtracking fails once the gradient is already within ``1e3 * gtol``
    the run stops unconverged instead of raising; the cost is then flat to
    rounding error along the search direction.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    grid = problem.grid
    obj = _Objective(problem)
    u = grid.check(start, "start").copy()
    J, g = obj(u)
    gnorm = float(grid.norm_V(g))
    path = [J]
    sigma2 = problem.sigma**2
    step = sigma2
    pairs: list = []
    message = "max_iter reached"
    it = 0
    for it in range(1, max_iter + 1):
        if gnorm <= gtol:
            message = "gradient tolerance reached"
            it -= 1
            break
        try:
            if method == "fixed_point":
                u_new = u - damping * sigma2 * g
                J_new, g_new = obj(u_new)
            elif method == "sobolev_gd":
                d = -g
                step, u_new, J_new, g_new = _armijo(
                    obj, u, J, g, d, -gnorm**2, min(2.0 * step, 1e6 * sigma2),
                    armijo_c, max_backtracks,
                )
            else:
                gamma = sigma2
                if pairs:
                    s, y, rho = pairs[-1]
                    gamma = 1.0 / (rho * float(grid.inner_V(y, y)))
                d = _lbfgs_direction(g, pairs, grid.inner_V, gamma)
                slope = float(grid.inner_V(g, d))
                if slope >= 0:
                    pairs.clear()
                    d, slope = -sigma2 * g, -sigma2 * gnorm**2
                _, u_new, J_new, g_new = _armijo(
                    obj, u, J, g, d, slope, 1.0, armijo_c, max_backtracks
                )
                s, y = u_new - u, g_new - g
                sy = float(grid.inner_V(s, y))
                if sy > 1e-12 * float(grid.norm_V(s) * grid.norm_V(y)):
                    pairs.append((s, y, 1.0 / sy))
                    if len(pairs) > memory:
                        pairs.pop(0)
        except LineSearchError:
            if gnorm <= 1e3 * gtol:
                message = "line search stalled at rounding level"
                it -= 1
                break
            raise
        u, J, g = u_new, J_new, g_new
        gnorm = float(grid.norm_V(g))
        path.append(J)
    else:
        if gnorm <= gtol:
            message = "gradient tolerance reached"
    logger.debug("%s: %d iterations, |g|_V = %.3e, J = %.6e", method, it, gnorm, J)
    return OptimizeResult(
        minimizer=u,
        cost=float(J),
        grad_norm_V=gnorm,
        iterations=it,
        converged=gnorm <= gtol,
        path_costs=path,
        method=method,
        tol=gtol,
        message=message,
    )


@dataclass
class CriticalPoint:
    point: np.ndarray
    cost: float
    grad_norm: float
    hessian_min_eig: float
    multiplicity: int = 1

    def to_dict(self) -> dict:
        return {
            "point": self.point.tolist(),
            "cost": self.cost,
            "grad_norm": self.grad_norm,
            "hessian_min_eig": self.hessian_min_eig,
            "multiplicity": self.multiplicity,
        }


@dataclass
class CriticalPointCatalog:
    points: list
    delta_merge: float = 1e-4
    failures: list = field(default_factory=list)
    runs: list = field(default_factory=list, repr=False)

    @property
    def distinct_count(self) -> int:
        return len(self.points)

    def to_dict(self) -> dict:
        return {
            "distinct_count": self.distinct_count,
            "delta_merge": self.delta_merge,
            "points": [p.to_dict() for p in self.points],
            "failures": list(self.failures),
        }


def merge_points(points: list, grid, delta_merge: float = 1e-4) -> list:
    """Collapse points closer than ``delta_merge`` in V distance.

    Points are grouped by single linkage, so any two survivors from different
    groups are at least ``delta_merge`` apart and the result does not depend on
    input order. Each group keeps its member with the smallest gradient norm.
    """
    if not points:
        return []
    if len(points) == 1:
        return [points[0]]
    X = np.array([p.point for p in points])
    # V distance equals the Euclidean distance of scaled first differences
    Z = np.diff(X, axis=1) / np.sqrt(grid.dx)
    labels = fcluster(linkage(Z, method="single"), t=delta_merge, criterion="distance")
    merged = []
    for lab in sorted(set(labels)):
        members = [p for p, l in zip(points, labels) if l == lab]
        best = min(members, key=lambda p: (p.grad_norm, p.cost, tuple(p.point)))
        merged.append(
            CriticalPoint(
                best.point, best.cost, best.grad_norm, best.hessian_min_eig,
                sum(p.multiplicity for p in members),
            )
        )
    merged.sort(key=lambda p: (p.cost, tuple(p.point)))
    return merged


def draw_starts(problem: Problem, n_starts: int, sampler: str = "prior", seed=None, scale: float = 1.0):
    """Initial points from the prior (KL draws) or deterministic mode combinations."""
    grid = problem.grid
    u0 = problem.prior.u0
    if sampler == "prior":
        from .bayes import KLExpansion, sample_prior

        kl = KLExpansion(u0, problem.sigma * scale, max(1, grid.M // 2))
        rng = np.random.default_rng(seed)
        return [sample_prior(kl, rng) for _ in range(n_starts)]
    if sampler == "scaled_modes":
        starts = []
        for k in range(n_starts):
            n = k // 2 + 1
            sign = 1.0 if k % 2 == 0 else -1.0
            amp = scale * problem.sigma * np.sqrt(2.0) / (n * np.pi)
            starts.append(u0 + sign * amp * grid.sine(n))
        return starts
    raise ValueError(f"unknown sampler {sampler!r}")


def multistart(
    problem: Problem,
    n_starts: int = 10,
    sampler: str = "prior",
    seed=None,
    method: str = "lbfgs",
    delta_merge: float = 1e-4,
    hessian_modes: int = 8,
    seed_points=(),
    threads: int = 1,
    starts=None,
    **opts,
) -> CriticalPointCatalog:
    """Minimize from many starts and catalogue the distinct critical points found.

    ``seed_points`` are candidate critical points (for example saddles known by
    construction) admitted when their V gradient is below the tolerance.
    Runs that raise or fail to converge are recorded in ``failures``; ``runs``
    keeps every :class:`OptimizeResult` (or exception) in start order.
    """
    if n_starts < 1 and starts is None:
        raise ValueError("n_starts must be at least 1")
    grid = problem.grid
    if starts is None:
        starts = draw_starts(problem, n_starts, sampler, seed)
    gtol = opts.get("gtol", 1e-8)
    modes = min(hessian_modes, grid.M // 2)

    def run(start):
        try:
            return minimize(problem, start, method=method, **opts)
        except (LineSearchError, SolverError) as exc:
            return exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(s) for s in starts]

    candidates, failures = [], []
    for i, res in enumerate(results):
        if isinstance(res, Exception):
            failures.append({"start": i, "error": f"{type(res).__name__}: {res}"})
        elif not res.converged:
            failures.append({"start": i, "error": res.message, "grad_norm_V": res.grad_norm_V})
        else:
            candidates.append((res.minimizer, res.cost, res.grad_norm_V))
    for sp in seed_points:
        sp = grid.check(sp, "seed point")
        cost, g = cost_and_grad(sp, problem)
        gn = float(grid.norm_V(g))
        if gn <= gtol:
            candidates.append((sp, cost.total, gn))
        else:
            failures.append({"seed_point": True, "error": "not stationary", "grad_norm_V": gn})

    points = [CriticalPoint(u, c, gn, np.nan) for u, c, gn in candidates]
    merged = merge_points(points, grid, delta_merge)
    for p in merged:
        p.hessian_min_eig = assemble_hessian(p.point, problem, modes).min_eigenvalue
    return CriticalPointCatalog(merged, delta_merge, failures, results)
