"""Cost functional, adjoint gradients and Hessian analysis for 4D-Var.

The cost is::

    J(u) = 1/2 sum_i |R^{-1/2}(H y(t_i) - z_i)|^2 + ||u - u0||_V^2 / (2 sigma^2)

evaluated on the discrete forward trajectory, so every derivative below is
the exact derivative of the discrete cost.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .grid import Grid, TimeMesh, advective_dt_cap
from .model import ModelSpec
from .observations import ObservationSet, PriorSpec
from .pde import (
    AdjointTrajectory,
    Trajectory,
    solve_adjoint,
    solve_forward,
    solve_second_variation,
    solve_tangent,
)

__all__ = [
    "Problem",
    "CostReport",
    "HessianReport",
    "eval_cost",
    "grad_cost",
    "cost_and_grad",
    "hessian_quadratic_form",
    "hessian_terms",
    "second_variation_pairing",
    "assemble_hessian",
    "fixed_point_map",
    "mode_basis",
    "twin_observations",
]


@dataclass(frozen=True)
class Problem:
    """Model, observations, prior and time mesh of one assimilation problem."""

    model: ModelSpec
    obs: ObservationSet
    prior: PriorSpec
    mesh: TimeMesh

    def __post_init__(self):
        if self.obs.grid != self.prior_grid:
            raise ValueError("observation rows and prior mean live on different grids")
        self.mesh.indices_for(self.obs.times)

    @property
    def prior_grid(self) -> Grid:
        return Grid.for_values(self.prior.u0)

    @property
    def grid(self) -> Grid:
        return self.prior_grid

    @property
    def sigma(self) -> float:
        return self.prior.sigma

    @classmethod
    def build(
        cls,
        model: ModelSpec,
        obs: ObservationSet,
        prior: PriorSpec,
        dt_max: float | None = None,
        t_final: float | None = None,
        cfl_amplitude: float | None = None,
    ) -> "Problem":
        grid = Grid.for_values(prior.u0)
        cap = None if cfl_amplitude is None else advective_dt_cap(model, grid, cfl_amplitude)
        mesh = TimeMesh.build(obs.times, t_final=t_final, dt_max=dt_max, dt_cap=cap)
        return cls(model, obs, prior, mesh)

    def replace(self, **changes) -> "Problem":
        fields = dict(model=self.model, obs=self.obs, prior=self.prior, mesh=self.mesh)
        fields.update(changes)
        return Problem(**fields)


@dataclass(frozen=True)
class CostReport:
    total: float
    misfit: float
    reg: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class HessianReport:
    """Hessian of J restricted to the first ``modes`` V-normalized sines."""

    modes: int
    matrix: np.ndarray
    eigenvalues: np.ndarray
    morse_index: int
    tol: float
    norms_V_sq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    norms_L2_sq: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def min_eigenvalue(self) -> float:
        return float(self.eigenvalues[0])

    def to_dict(self) -> dict:
        return {
            "modes": self.modes,
            "matrix": self.matrix.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "morse_index": self.morse_index,
            "tol": self.tol,
            "unnormalized_sine_norms_V_sq": self.norms_V_sq.tolist(),
            "unnormalized_sine_norms_L2_sq": self.norms_L2_sq.tolist(),
        }


def _cost_parts(u, y: Trajectory, problem: Problem) -> CostReport:
    grid = problem.grid
    if problem.obs.N:
        res = problem.obs.residuals(y.at_obs())
        misfit = 0.5 * float(np.sum(res**2))
    else:
        misfit = 0.0
    reg = float(grid.norm_V(u - problem.prior.u0)) ** 2 / (2.0 * problem.sigma**2)
    return CostReport(misfit + reg, misfit, reg)


def eval_cost(u, problem: Problem) -> CostReport:
    u = problem.grid.check(u)
    y = solve_forward(problem.model, u, problem.mesh)
    return _cost_parts(u, y, problem)


def _adjoint(problem: Problem, y: Trajectory) -> AdjointTrajectory:
    return solve_adjoint(problem.model, y, problem.obs)


def _gradients(u, p0, problem: Problem):
    grid = problem.grid
    s2 = problem.sigma**-2
    du = u - problem.prior.u0
    grad_V = grid.solve_laplacian(p0) + s2 * du
    grad_L2 = -p0 - s2 * grid.laplacian(du)
    return grad_L2, grad_V


def grad_cost(u, problem: Problem):
    """Return ``(grad_L2, grad_V)``.

    ``grad_V = lap^{-1} p(0) + (u - u0) / sigma^2`` and
    ``grad_L2 = -p(0) - lap(u - u0) / sigma^2``.
    """
    u = problem.grid.check(u)
    y = solve_forward(problem.model, u, problem.mesh)
    p = _adjoint(problem, y)
    return _gradients(u, p.p0, problem)


def cost_and_grad(u, problem: Problem):
    """One forward and one adjoint solve: ``(CostReport, grad_V)``."""
    u = problem.grid.check(u)
    y = solve_forward(problem.model, u, problem.mesh)
    cost = _cost_parts(u, y, problem)
    if problem.obs.N:
        p0 = _adjoint(problem, y).p0
    else:
        p0 = np.zeros_like(u)
    return cost, _gradients(u, p0, problem)[1]


def fixed_point_map(u, problem: Problem):
    """``u0 - sigma^2 lap^{-1} p(0)``; its fixed points are the critical points of J."""
    u = problem.grid.check(u)
    if not problem.obs.N:
        return problem.prior.u0.copy()
    y = solve_forward(problem.model, u, problem.mesh)
    p0 = _adjoint(problem, y).p0
    return problem.prior.u0 - problem.sigma**2 * problem.grid.solve_laplacian(p0)


def _curvature_weights(problem: Problem, y: Trajectory, p: AdjointTrajectory) -> np.ndarray:
    """Weights ``W`` with ``sum_k sum_j W[k, j] eta_k[j]**2`` the nonlinear Hessian term.

    Over step ``k`` the explicit source ``-Dc(f'' eta^2) + r'' eta^2`` pairs with
    the smoothed adjoint ``q_k``; moving ``Dc`` onto ``q_k`` gives
    ``-dt_k [<q_k, r'' eta^2> + <(q_k)_x, f'' eta^2>]``.
    """
    grid = problem.grid
    m = problem.model
    Y = y.states[:-1]
    q = p.smoothed
    W = (q * m.d2r(Y) + grid.ddx(q) * m.d2f(Y)) * (-grid.dx * problem.mesh.dts[:, None])
    W[:, 0] = W[:, -1] = 0.0
    return W


def _quadratic(eta_states, W, problem: Problem, v):
    """Nonlinear, observational and prior parts of Q for tangents ``eta_states``.

    ``eta_states`` has shape ``(K + 1, ..., M + 2)``.
    """
    nonlinear = np.einsum("kj,k...j->...", W, eta_states[:-1] ** 2)
    if problem.obs.N:
        Heta = problem.obs.H(eta_states[list(problem.mesh.obs_indices)])
        white = Heta @ problem.obs.R_inv_sqrt.T
        observation = np.sum(white**2, axis=(0, -1))
    else:
        observation = np.zeros(np.shape(nonlinear))
    prior = problem.grid.norm_V(v) ** 2 / problem.sigma**2
    return nonlinear, observation, prior


def hessian_terms(u, v, problem: Problem) -> dict:
    """Breakdown of ``D^2 J(u)(v, v)`` into nonlinear, observational and prior parts.

    The nonlinear part is the adjoint form of the second variation
    ``-int <r''(y) eta^2, p> + <f''(y) eta^2, p_x> dt`` summed exactly over steps.
    """
    grid = problem.grid
    u = grid.check(u)
    v = grid.check(v, "v")
    y = solve_forward(problem.model, u, problem.mesh)
    p = _adjoint(problem, y)
    eta = solve_tangent(problem.model, y, v)
    W = _curvature_weights(problem, y, p)
    nonlinear, observation, prior = _quadratic(eta.states, W, problem, v)
    return {
        "nonlinear": nonlinear,
        "observation": observation,
        "prior": prior,
        "total": nonlinear + observation + prior,
    }


def hessian_quadratic_form(u, v, problem: Problem):
    return hessian_terms(u, v, problem)["total"]


def second_variation_pairing(u, v, problem: Problem) -> float:
    """``sum_i <omega(t_i), H* R^{-1}(H y(t_i) - z_i)>`` with ``omega`` solved directly."""
    grid = problem.grid
    u = grid.check(u)
    v = grid.check(v, "v")
    if not problem.obs.N:
        return 0.0
    y = solve_forward(problem.model, u, problem.mesh)
    eta = solve_tangent(problem.model, y, v)
    omega = solve_second_variation(problem.model, y, eta)
    jumps = problem.obs.jumps(y.at_obs())
    return float(np.sum(grid.inner(omega.at_obs(), jumps)))


def mode_basis(grid: Grid, m_modes: int) -> np.ndarray:
    """Sines ``sin(n pi x)``, n = 1..m_modes, scaled to unit discrete V norm."""
    S = np.array([grid.sine(n) for n in range(1, m_modes + 1)])
    return S / grid.norm_V(S)[:, None]


def assemble_hessian(u, problem: Problem, m_modes: int = 8) -> HessianReport:
    """Mode-space Hessian by polarization of the quadratic form, with Morse index."""
    grid = problem.grid
    if m_modes < 1 or m_modes > grid.M // 2:
        raise ValueError(f"m_modes must lie in [1, {grid.M // 2}] for M = {grid.M}")
    u = grid.check(u)
    basis = mode_basis(grid, m_modes)
    y = solve_forward(problem.model, u, problem.mesh)
    p = _adjoint(problem, y)
    W = _curvature_weights(problem, y, p)
    eta = solve_tangent(problem.model, y, basis).states  # (K+1, m, M+2)

    def Q(eta_states, v):
        return sum(_quadratic(eta_states, W, problem, v))

    diag = np.array([Q(eta[:, n], basis[n]) for n in range(m_modes)])
    A = np.diag(diag)
    for n in range(m_modes):
        for k in range(n + 1, m_modes):
            both = Q(eta[:, n] + eta[:, k], basis[n] + basis[k])
            A[n, k] = A[k, n] = 0.5 * (both - diag[n] - diag[k])
    evals = np.linalg.eigvalsh(A)
    tol = 1e-8 * float(np.max(np.abs(evals)))
    sines = np.array([grid.sine(n) for n in range(1, m_modes + 1)])
    return HessianReport(
        modes=m_modes,
        matrix=A,
        eigenvalues=evals,
        morse_index=int(np.sum(evals < -tol)),
        tol=tol,
        norms_V_sq=grid.norm_V(sines) ** 2,
        norms_L2_sq=grid.norm(sines) ** 2,
    )


def twin_observations(
    model: ModelSpec,
    truth,
    times,
    rows,
    R=None,
    noise_std: float = 0.0,
    rng: np.random.Generator | None = None,
    dt_max: float | None = None,
) -> ObservationSet:
    """Synthetic data ``H y_truth(t_i) + noise`` for a twin experiment."""
    rows = np.atleast_2d(rows)
    q = rows.shape[0]
    if R is None:
        R = np.eye(q) * (noise_std**2 if noise_std > 0 else 1.0)
    mesh = TimeMesh.build(times, dt_max=dt_max)
    y = solve_forward(model, truth, mesh)
    obs = ObservationSet(times, rows, R, np.zeros((len(np.atleast_1d(times)), q)), D=np.inf)
    data = obs.H(y.at_obs())
    if noise_std > 0:
        rng = np.random.default_rng() if rng is None else rng
        data = data + noise_std * rng.standard_normal(data.shape)
    return obs.with_data(data)
