"""A priori bounds, convexity certificates and saddle-point instances.

The constants follow the energy estimates for the forward, tangent and adjoint
equations: a comparison-ODE sup bound ``B``, derivative sups ``R_k``/``F_k`` on
``[-B, B]``, Gronwall rates ``alpha``/``beta``, and the adjoint amplitude ``C``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .assimilation import (
    HessianReport,
    Problem,
    assemble_hessian,
)
from .grid import Grid, TimeMesh
from .model import ModelSpec
from .observations import ObservationSet, PriorSpec
from .pde import BlowUpError, solve_adjoint, solve_forward, solve_tangent

__all__ = [
    "BoundSeries",
    "CertificateReport",
    "LemmaCheck",
    "BoundCheckReport",
    "SaddleInstance",
    "pointwise_bound",
    "derivative_sups",
    "convexity_certificate",
    "sigma_threshold",
    "time_threshold",
    "certificate_sweep",
    "verify_apriori_bounds",
    "construct_saddle",
]

SUP_SAMPLES = 4096
SUP_INFLATION = 1.05


@dataclass(frozen=True)
class BoundSeries:
    """Comparison functions ``psi_-`` and ``psi_+`` and their envelope ``B``."""

    B: float
    times: np.ndarray
    psi_plus: np.ndarray
    psi_minus: np.ndarray


def pointwise_bound(m: ModelSpec, A: float, T: float, times=None, max_step: float | None = None) -> BoundSeries:
    """Integrate ``psi_+' = |r(psi_+)|``, ``psi_+(0) = A`` and its mirror with RK4.

    ``times`` (increasing, starting at 0) are the output nodes; each interval
    is subdivided so that no RK4 substep exceeds ``max_step`` (default ``T/2000``).
    """
    if A < 0 or T < 0:
        raise ValueError("A and T must be nonnegative")
    times = np.linspace(0.0, T, 2001) if times is None else np.asarray(times, dtype=float)
    h_max = (T / 2000.0 if T > 0 else 1.0) if max_step is None else max_step

    def rhs(s):
        return np.array([1.0, -1.0]) * np.abs(m.r(s))

    out = np.empty((times.size, 2))
    s = out[0] = np.array([A, -A], dtype=float)
    for i, dt in enumerate(np.diff(times)):
        n = max(1, int(np.ceil(dt / h_max)))
        h = dt / n
        for _ in range(n):
            k1 = rhs(s)
            k2 = rhs(s + 0.5 * h * k1)
            k3 = rhs(s + 0.5 * h * k2)
            k4 = rhs(s + h * k3)
            s = s + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        if not np.all(np.isfinite(s)) or np.max(np.abs(s)) > 1e12:
            raise BlowUpError(f"comparison ODE blew up before t = {times[i + 1]:.6g}")
        out[i + 1] = s
    plus, minus = out[:, 0], out[:, 1]
    B = float(max(plus.max(), -minus.min()))
    return BoundSeries(B, times, plus, minus)


def derivative_sups(m: ModelSpec, B: float, n: int = SUP_SAMPLES, inflate: float = SUP_INFLATION) -> dict:
    """``R_k`` and ``F_k`` (k = 0, 1, 2): sampled sups of ``|r^(k)|``, ``|f^(k)|`` on ``[-B, B]``.

    Dense sampling underestimates the true sup, so the sampled value is inflated.
    """
    ys = np.linspace(-B, B, n)
    out = {}
    for key, fn in (("R0", m.r), ("R1", m.dr), ("R2", m.d2r), ("F0", m.f), ("F1", m.df), ("F2", m.d2f)):
        out[key] = inflate * float(np.max(np.abs(fn(ys))))
    return out


def _exp_integral(alpha: float, beta: float, T: float) -> float:
    """``int_0^T exp(alpha t + beta (T - t)) dt`` in closed form."""
    d = alpha - beta
    if abs(d) * T < 1e-10:
        return T * np.exp(alpha * T)
    return float(np.exp(beta * T) * np.expm1(d * T) / d)


@dataclass(frozen=True)
class CertificateReport:
    A: float
    B: float
    R0: float
    R1: float
    R2: float
    F0: float
    F1: float
    F2: float
    alpha: float
    beta: float
    gamma: float
    C_prime: float
    Cp: float
    Gamma: float
    lhs: float
    lhs_reaction: float
    lhs_flux: float
    rhs: float
    passes: bool
    t_N: float
    sigma: float
    N: int
    D: float
    probe_in_ball: bool | None = None

    def to_dict(self) -> dict:
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else v) for k, v in asdict(self).items()}


def convexity_certificate(problem: Problem, u_probe=None) -> CertificateReport:
    """Sufficient condition for convexity of J on ``{||u||_V <= A}``.

    ``A`` bounds every minimizer (compare with ``J(0)``). The nonlinear part of
    the Hessian is then bounded by ``lhs * ||v^2||`` and the certificate
    passes when ``lhs < sigma^-2``.
    """
    grid = problem.grid
    obs, sigma, m = problem.obs, problem.sigma, problem.model
    T = problem.mesh.t_final if obs.N == 0 else float(obs.times[-1])
    if obs.N:
        y0 = solve_forward(m, grid.zeros(), problem.mesh)
        mis0 = float(np.sum(obs.residuals(y0.at_obs()) ** 2))
    else:
        mis0 = 0.0
    A = float(np.sqrt(sigma**2 * mis0 + grid.norm_V(problem.prior.u0) ** 2))
    B = pointwise_bound(m, A, T).B
    s = derivative_sups(m, B)
    alpha = (4 * s["R1"] + 3 * s["F1"] ** 2) / 2
    beta = s["R1"] + s["F1"] ** 2 / 4
    gamma = 2 * s["R1"] + s["F1"] ** 2
    nH, nHR = obs.op_norms()
    C_prime = nHR * (nH * B + obs.D)
    Cp = obs.N * C_prime
    with np.errstate(over="ignore", invalid="ignore"):
        # an overflowing bound is simply a failed certificate
        lhs_r = Cp * s["R2"] * _exp_integral(alpha, beta, T) if s["R2"] else 0.0
        lhs_f = Cp * s["F2"] * np.sqrt(T) * np.exp((alpha + 2 * beta) * T) if s["F2"] else 0.0
    lhs = float(lhs_r + lhs_f)
    if np.isnan(lhs):
        lhs = np.inf
    rhs = sigma**-2
    probe = None
    if u_probe is not None:
        probe = bool(grid.norm_V(grid.check(u_probe)) <= A)
    return CertificateReport(
        A=A, B=B, **s, alpha=alpha, beta=beta, gamma=gamma,
        C_prime=float(C_prime), Cp=float(Cp),
        Gamma=lhs / np.sqrt(T) if T > 0 else 0.0,
        lhs=lhs, lhs_reaction=float(lhs_r), lhs_flux=float(lhs_f),
        rhs=rhs, passes=bool(lhs < rhs), t_N=T, sigma=sigma, N=obs.N, D=obs.D,
        probe_in_ball=probe,
    )


def _with_sigma(problem: Problem, sigma: float) -> Problem:
    return problem.replace(prior=PriorSpec(problem.prior.u0, sigma))


def _with_final_time(problem: Problem, t_N: float) -> Problem:
    """Observation times scaled so the last one is ``t_N``; data kept fixed."""
    obs = problem.obs
    scale = t_N / obs.times[-1]
    new_obs = ObservationSet(obs.times * scale, obs.rows, obs.R, obs.data, obs.D)
    n_steps = problem.mesh.n_steps
    mesh = TimeMesh.build(new_obs.times, dt_max=t_N / n_steps * (1 + 1e-9))
    return problem.replace(obs=new_obs, mesh=mesh)


def _passes(problem: Problem) -> bool:
    try:
        return convexity_certificate(problem).passes
    except BlowUpError:
        return False


def _bisect(pred, lo: float, hi: float, iters: int) -> float:
    """Largest value in [lo, hi] (log scale) where ``pred`` holds, assuming monotone."""
    if not pred(lo):
        return 0.0
    if pred(hi):
        return np.inf
    for _ in range(iters):
        mid = np.sqrt(lo * hi)
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return float(lo)


def sigma_threshold(problem: Problem, lo: float = 1e-4, hi: float = 1e3, iters: int = 40) -> float:
    """Effective ``sigma_0``: the certificate passes for every smaller sigma."""
    return _bisect(lambda s: _passes(_with_sigma(problem, s)), lo, hi, iters)


def time_threshold(problem: Problem, lo: float = 1e-6, hi: float = 1e3, iters: int = 40) -> float:
    """Effective ``T_0``: the certificate passes when the last observation precedes it."""
    if problem.obs.N == 0:
        return np.inf
    return _bisect(lambda t: _passes(_with_final_time(problem, t)), lo, hi, iters)


def certificate_sweep(problem: Problem, sigmas, t_finals) -> list[dict]:
    rows = []
    for t_N in t_finals:
        pt = _with_final_time(problem, t_N) if problem.obs.N else problem
        for s in sigmas:
            try:
                rep = convexity_certificate(_with_sigma(pt, s))
                lhs, passes = rep.lhs, rep.passes
            except BlowUpError:
                lhs, passes = np.inf, False
            rows.append({"sigma": float(s), "t_N": float(t_N), "lhs": lhs, "rhs": s**-2, "passes": passes})
    return rows


@dataclass
class LemmaCheck:
    """Observed quantity against its bound over time.

    ``margin = min_t (bound (1 + tol) - observed) / |bound|``; the check passes
    iff the margin is nonnegative.
    """

    name: str
    times: np.ndarray
    bound: np.ndarray
    observed: np.ndarray
    tol: float = 1e-8
    margin: float = field(init=False)
    passed: bool = field(init=False)

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.bound = np.atleast_1d(np.asarray(self.bound, dtype=float))
        self.observed = np.atleast_1d(np.asarray(self.observed, dtype=float))
        scale = np.maximum(np.abs(self.bound), 1e-300)
        slack = (self.bound * (1 + self.tol) - self.observed) / scale
        self.margin = float(np.min(slack))
        self.passed = bool(self.margin >= 0)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "margin": self.margin,
            "passed": self.passed,
            "times": self.times.tolist(),
            "bound": self.bound.tolist(),
            "observed": self.observed.tolist(),
        }


@dataclass
class BoundCheckReport:
    checks: dict
    constants: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "constants": self.constants,
            "checks": {k: c.to_dict() for k, c in self.checks.items()},
        }


def _smooth_direction(grid: Grid, rng, n_modes: int = 6) -> np.ndarray:
    coef = rng.standard_normal(n_modes) / np.arange(1, n_modes + 1)
    return sum(c * grid.sine(n) for n, c in enumerate(coef, start=1))


def _lipschitz_fit(m: ModelSpec, B: float) -> tuple[float, float]:
    """``(a, b)`` with ``2|y r(y)| <= a y^2 + b`` on ``[-B, B]``."""
    ys = np.linspace(-B, B, SUP_SAMPLES + 1)
    ys = ys[ys != 0]
    r0 = float(m.r(np.array(0.0)))
    K = SUP_INFLATION * float(np.max(np.abs(m.r(ys) - r0) / np.abs(ys))) if ys.size else 0.0
    if r0 == 0:
        return 2 * K, 0.0
    return 2 * K + 1.0, r0**2


def verify_apriori_bounds(
    m: ModelSpec,
    u,
    obs: ObservationSet,
    mesh: TimeMesh,
    v=None,
    u2=None,
    tol: float = 1e-8,
    rng: np.random.Generator | None = None,
) -> BoundCheckReport:
    """Check the forward, tangent and adjoint energy bounds along actual solves.

    ``v`` is the tangent direction and ``u2`` the second initial state for the
    Lipschitz estimate; both default to smooth random perturbations.
    """
    grid = Grid.for_values(u)
    u = grid.check(u)
    rng = np.random.default_rng(0) if rng is None else rng
    v = _smooth_direction(grid, rng) if v is None else grid.check(v, "v")
    if u2 is None:
        w = _smooth_direction(grid, rng)
        u2 = u + 0.05 * max(float(grid.norm(u)), 1.0) * w / float(grid.norm(w))
    u2 = grid.check(u2, "u2")
    times = mesh.nodes
    T = mesh.t_final
    checks = {}

    y = solve_forward(m, u, mesh)
    A = float(grid.sup_norm(u))
    bound = pointwise_bound(m, A, T, times)
    B = bound.B
    s = derivative_sups(m, B)
    checks["yunif_upper"] = LemmaCheck("yunif_upper", times, bound.psi_plus, y.states.max(axis=1), tol)
    checks["yunif_lower"] = LemmaCheck("yunif_lower", times, -bound.psi_minus, -y.states.min(axis=1), tol)

    alpha = (4 * s["R1"] + 3 * s["F1"] ** 2) / 2
    eta = solve_tangent(m, y, v)
    checks["etaL4"] = LemmaCheck(
        "etaL4", times, grid.norm(v**2) * np.exp(alpha * times), grid.norm(eta.states**2), tol
    )

    beta = s["R1"] + s["F1"] ** 2 / 4
    gamma = 2 * s["R1"] + s["F1"] ** 2
    nH, nHR = obs.op_norms()
    C_prime = nHR * (nH * B + obs.D)
    C = obs.N * C_prime
    p = solve_adjoint(m, y, obs)
    p_norm = np.maximum(grid.norm(p.left), grid.norm(p.right))
    checks["pbound"] = LemmaCheck("pbound", times, C * np.exp(beta * (T - times)), p_norm, tol)
    pxV_right = grid.norm_V(p.right[:-1])
    pxV_left = grid.norm_V(p.left[1:])
    px_integral = float(np.sum(0.5 * mesh.dts * (pxV_right + pxV_left)))
    px_bound = C * np.sqrt(T) * np.exp(gamma * T / 2)
    px_bound_relaxed = C * np.sqrt(T) * np.exp(2 * beta * T)
    checks["pxbound"] = LemmaCheck("pxbound", [T], [px_bound], [px_integral], tol)

    a, b = _lipschitz_fit(m, B)
    checks["yL2"] = LemmaCheck(
        "yL2", times, np.exp(a * times) * (grid.norm(u) ** 2 + b * times), grid.norm(y.states) ** 2, tol
    )

    y2 = solve_forward(m, u2, mesh)
    B2 = pointwise_bound(m, max(A, float(grid.sup_norm(u2))), T).B
    s2 = derivative_sups(m, B2)
    K_r, K_f = s2["R1"], s2["F2"]
    df0 = abs(float(m.df(np.array(0.0))))
    rate = K_r + 0.25 * (K_f * (grid.norm_V(y.states) + grid.norm_V(y2.states)) + df0) ** 2
    # upper Riemann sum keeps the Gronwall exponent on the safe side
    integral = np.concatenate([[0.0], np.cumsum(mesh.dts * np.maximum(rate[:-1], rate[1:]))])
    du2 = float(grid.norm(u - u2)) ** 2
    lip_bound = np.exp(2 * integral) * du2
    checks["ylip"] = LemmaCheck("ylip", times, lip_bound, grid.norm(y.states - y2.states) ** 2, tol)

    constants = {
        "A": A, "B": B, **s, "alpha": alpha, "beta": beta, "gamma": gamma,
        "C_prime": float(C_prime), "C": float(C),
        "px_integral": px_integral, "px_bound_gamma": float(px_bound),
        "px_bound_4beta": float(px_bound_relaxed),
        "a": a, "b": b, "K_r": K_r, "K_f": K_f, "L": float(lip_bound[-1] / du2) if du2 > 0 else 1.0,
    }
    return BoundCheckReport(checks, constants)


@dataclass
class SaddleInstance:
    obs: ObservationSet
    prior: PriorSpec
    problem: Problem
    Z: float
    hessian: HessianReport
    doublings: int = 0

    def to_dict(self) -> dict:
        return {
            "q": None,
            "Z": self.Z,
            "doublings": self.doublings,
            "times": self.obs.times.tolist(),
            "data": self.obs.data.tolist(),
            "D": self.obs.D,
            "sigma": self.prior.sigma,
            "u0": self.prior.u0.tolist(),
            "hessian": self.hessian.to_dict(),
        }


def saddle_data_scale(q: int, times, sigma: float, r2: float, safety: float = 2.0) -> float:
    """Data amplitude making ``D^2 J(0)(v_q, v_q)`` negative, ``v_q = sin(q pi x)``.

    About ``y = 0`` the tangent is ``exp(-q^2 pi^2 t) sin(q pi x)`` and the
    adjoint on ``t < t_i`` is ``z_i exp(-pi^2 (t_i - t)) sin(pi x)``. The
    nonlinear Hessian term is ``-r''(0) z kappa_q sum_i T_q(t_i)`` with
    ``kappa_q = <sin(pi x), sin^2(q pi x)> = 4q^2 / (pi (4q^2 - 1))`` and
    ``T_q(t) = int_0^t exp(-pi^2 (t - s) - 2 q^2 pi^2 s) ds``. It has to beat
    the observational term (at most ``sum_i exp(-2 pi^2 t_i)``) and the prior
    term ``q^2 pi^2 / (2 sigma^2)``.
    """
    t = np.asarray(times, dtype=float)
    kappa = 4 * q**2 / (np.pi * (4 * q**2 - 1))
    lam = (2 * q**2 - 1) * np.pi**2
    Tq = np.exp(-np.pi**2 * t) * -np.expm1(-lam * t) / lam
    positive = np.sum(np.exp(-2 * np.pi**2 * t)) + q**2 * np.pi**2 / (2 * sigma**2)
    return float(safety * positive / (abs(r2) * kappa * np.sum(Tq)))


def construct_saddle(
    q: int,
    times,
    sigma: float,
    m: ModelSpec,
    grid: Grid | int = 127,
    dt_max: float | None = None,
    safety: float = 2.0,
    max_doublings: int = 30,
    hessian_modes: int | None = None,
) -> SaddleInstance:
    """Data and prior for which ``u = 0`` is a critical point of Morse index >= q.

    Observations are the first sine coefficient with ``R = 1``. Equal data
    ``z_i = sign(r''(0)) Z`` push ``D^2 J(0)`` negative on ``sin(n pi x)``,
    ``n <= q``; the prior mean ``u0 = sigma^2 lap^{-1} p(0)`` then makes 0 a
    critical point. ``Z`` is doubled until the assembled Hessian confirms the index.
    """
    if q < 1:
        raise ValueError("q must be a positive integer")
    grid = Grid(grid) if isinstance(grid, int) else grid
    zero = np.array(0.0)
    r0, r1, r2 = (float(fn(zero)) for fn in (m.r, m.dr, m.d2r))
    if abs(r0) > 1e-12 or abs(r1) > 1e-12 or abs(r2) < 1e-6:
        raise ValueError("construction needs r(0) = r'(0) = 0 and r''(0) != 0")
    if abs(float(m.df(zero))) > 1e-12 or abs(float(m.d2f(zero))) > 1e-12:
        raise ValueError("construction needs a reaction-diffusion model (f'(0) = f''(0) = 0)")
    modes = hessian_modes or min(max(2 * q, 4), grid.M // 2)
    if modes < q:
        raise ValueError("grid too coarse to resolve q modes")
    times = np.asarray(times, dtype=float)
    Z = saddle_data_scale(q, times, sigma, r2, safety)
    if not np.isfinite(Z):
        raise FloatingPointError("data scale Z is not finite")
    rows = grid.sine(1)[None, :]
    mesh = TimeMesh.build(times, dt_max=dt_max)
    y0 = solve_forward(m, grid.zeros(), mesh)
    for doubling in range(max_doublings + 1):
        data = np.full((times.size, 1), np.sign(r2) * Z)
        obs = ObservationSet(times, rows, np.eye(1), data, D=Z)
        p0 = solve_adjoint(m, y0, obs).p0
        prior = PriorSpec(sigma**2 * grid.solve_laplacian(p0), sigma)
        problem = Problem(m, obs, prior, mesh)
        H = assemble_hessian(grid.zeros(), problem, modes)
        if H.morse_index >= q:
            return SaddleInstance(obs, prior, problem, Z, H, doubling)
        Z *= 2.0
    raise RuntimeError(f"Morse index {H.morse_index} < {q} after {max_doublings} doublings")
