"""IMEX solvers for the forward, tangent, second-variation and adjoint equations.

One forward step from ``y`` to ``y'`` with step ``dt`` reads::

    (I - dt/2 L) y' = (I + dt/2 L) y + dt * (-Dc f(y) + r(y))

with ``L`` the three-point Dirichlet Laplacian and ``Dc`` the centered
difference. The tangent and second-variation steps are the first and second
derivatives of this map, and the adjoint step is the exact transpose of the
tangent step, so discrete pairings are preserved to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid, SymTridiag, TimeMesh
from .model import ModelSpec
from .observations import ObservationSet

__all__ = [
    "SolverError",
    "BlowUpError",
    "MeshMismatchError",
    "Trajectory",
    "AdjointTrajectory",
    "solve_forward",
    "solve_tangent",
    "solve_second_variation",
    "solve_adjoint",
    "tangent_step",
    "adjoint_step",
]


class SolverError(RuntimeError):
    pass


class BlowUpError(SolverError):
    """State exceeded the sup-norm ceiling or became non-finite."""


class MeshMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    """States at every mesh node; ``states`` has shape ``(K + 1, ..., M + 2)``."""

    states: np.ndarray
    mesh: TimeMesh

    def __post_init__(self):
        if self.states.shape[0] != self.mesh.nodes.size:
            raise MeshMismatchError("one state per mesh node is required")

    @property
    def grid(self) -> Grid:
        return Grid.for_values(self.states)

    def at(self, t: float) -> np.ndarray:
        return self.states[self.mesh.index_of(t)]

    def at_obs(self) -> np.ndarray:
        return self.states[list(self.mesh.obs_indices)]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class AdjointTrajectory:
    """Adjoint state with one-sided values at each node.

    ``right[k]`` is ``p(t_k+)`` and ``left[k]`` is ``p(t_k-)``; they differ
    only at observation nodes. ``smoothed[k] = (I - dt_k/2 L)^{-1} left[k+1]``
    is the weight that pairs with the explicit source over step ``k``.
    """

    left: np.ndarray
    right: np.ndarray
    smoothed: np.ndarray
    mesh: TimeMesh

    @property
    def p0(self) -> np.ndarray:
        return self.left[0]

    @property
    def grid(self) -> Grid:
        return Grid.for_values(self.left)


class _Operators:
    """Per-grid cache of implicit factorizations keyed by step size."""

    _cache: dict = {}

    def __init__(self, grid: Grid):
        self.grid = grid
        self.inv_dx2 = 1.0 / grid.dx**2
        self.inv_2dx = 1.0 / (2.0 * grid.dx)

    def implicit(self, dt: float) -> SymTridiag:
        key = (self.grid.M, float(dt))
        A = self._cache.get(key)
        if A is None:
            c = 0.5 * dt * self.inv_dx2
            A = SymTridiag(np.full(self.grid.M, 1.0 + 2.0 * c), np.full(self.grid.M - 1, -c))
            if len(self._cache) > 256:
                self._cache.clear()
            self._cache[key] = A
        return A

    def lap(self, x):
        """Interior Laplacian with zero Dirichlet padding; space is axis 0."""
        out = -2.0 * x
        out[1:] += x[:-1]
        out[:-1] += x[1:]
        return out * self.inv_dx2

    def dc(self, x):
        """Interior centered difference with zero padding; space is axis 0."""
        out = np.zeros_like(x)
        out[:-1] += x[1:]
        out[1:] -= x[:-1]
        return out * self.inv_2dx


def _interior(v):
    """(…, M+2) -> (M, …) with space leading."""
    return np.moveaxis(np.asarray(v, dtype=float)[..., 1:-1], -1, 0).copy()


def _pad(x):
    """(M, …) -> (…, M+2)."""
    x = np.moveaxis(x, 0, -1)
    out = np.zeros(x.shape[:-1] + (x.shape[-1] + 2,))
    out[..., 1:-1] = x
    return out


def _col(c, x):
    return c.reshape(c.shape + (1,) * (x.ndim - 1))


def _check_same_mesh(a: TimeMesh, b: TimeMesh):
    if a is not b and (a.nodes.shape != b.nodes.shape or np.any(a.nodes != b.nodes)):
        raise MeshMismatchError("trajectories live on different time meshes")


def solve_forward(
    m: ModelSpec, u, mesh: TimeMesh, ceiling: float = 1e8, allow_ill_posed: bool = False
) -> Trajectory:
    """Integrate the forward equation from ``y(0) = u``.

    Raises
    ------
    BlowUpError
        If the sup norm exceeds ``ceiling`` or the state stops being finite.
    """
    if not (m.globally_well_posed or allow_ill_posed):
        raise SolverError(f"model {m.name!r} is flagged as not globally well posed")
    grid = Grid.for_values(u)
    u = grid.check(u)
    ops = _Operators(grid)
    states = np.empty((mesh.nodes.size, grid.size))
    states[0] = u
    y = u.copy()
    x = np.zeros(grid.size)
    for k, dt in enumerate(mesh.dts):
        F = m.f(y)
        rhs = y[1:-1] + 0.5 * dt * ops.lap(y[1:-1]) + dt * (
            -(F[2:] - F[:-2]) * ops.inv_2dx + m.r(y[1:-1])
        )
        x[1:-1] = ops.implicit(dt).solve(rhs)
        if not np.all(np.isfinite(x)):
            raise BlowUpError(f"non-finite state at t = {mesh.nodes[k + 1]:.6g}")
        if np.max(np.abs(x)) > ceiling:
            raise BlowUpError(f"sup norm exceeded {ceiling:g} at t = {mesh.nodes[k + 1]:.6g}")
        states[k + 1] = x
        y = x.copy()
    return Trajectory(states, mesh)


def tangent_step(m: ModelSpec, y_k, eta, dt: float, source=None):
    """Linearized step about ``y_k`` applied to ``eta`` (shape ``(..., M + 2)``)."""
    grid = Grid.for_values(y_k)
    ops = _Operators(grid)
    x = _interior(eta)
    yi = np.asarray(y_k)[1:-1]
    rhs = x + 0.5 * dt * ops.lap(x) + dt * (
        -ops.dc(_col(m.df(yi), x) * x) + _col(m.dr(yi), x) * x
    )
    if source is not None:
        rhs = rhs + dt * source
    return _pad(ops.implicit(dt).solve(rhs))


def adjoint_step(m: ModelSpec, y_k, p, dt: float, return_smoothed: bool = False):
    """Transpose of :func:`tangent_step` applied to ``p``."""
    grid = Grid.for_values(y_k)
    ops = _Operators(grid)
    q = ops.implicit(dt).solve(_interior(p))
    yi = np.asarray(y_k)[1:-1]
    out = q + 0.5 * dt * ops.lap(q) + dt * (_col(m.df(yi), q) * ops.dc(q) + _col(m.dr(yi), q) * q)
    if return_smoothed:
        return _pad(out), _pad(q)
    return _pad(out)


def solve_tangent(m: ModelSpec, y: Trajectory, v) -> Trajectory:
    """Tangent trajectory ``eta = Dy(u) v``; ``v`` may stack several directions."""
    grid = y.grid
    v = grid.check(v, "v")
    ops = _Operators(grid)
    Y = y.states[:, 1:-1]
    DF, DR = m.df(Y), m.dr(Y)
    states = np.empty((y.mesh.nodes.size,) + v.shape)
    states[0] = v
    x = _interior(v)
    for k, dt in enumerate(y.mesh.dts):
        rhs = x + 0.5 * dt * ops.lap(x) + dt * (
            -ops.dc(_col(DF[k], x) * x) + _col(DR[k], x) * x
        )
        x = ops.implicit(dt).solve(rhs)
        states[k + 1] = _pad(x)
    return Trajectory(states, y.mesh)


def solve_second_variation(m: ModelSpec, y: Trajectory, eta: Trajectory) -> Trajectory:
    """Second variation ``omega = D^2 y(u)(v, v)`` with ``omega(0) = 0``."""
    _check_same_mesh(y.mesh, eta.mesh)
    grid = y.grid
    ops = _Operators(grid)
    Y = y.states[:, 1:-1]
    DF, DR, D2F, D2R = m.df(Y), m.dr(Y), m.d2f(Y), m.d2r(Y)
    states = np.zeros((y.mesh.nodes.size,) + eta.states.shape[1:])
    x = np.zeros_like(_interior(eta.states[0]))
    for k, dt in enumerate(y.mesh.dts):
        e2 = _interior(eta.states[k]) ** 2
        src = -ops.dc(_col(D2F[k], e2) * e2) + _col(D2R[k], e2) * e2
        rhs = x + 0.5 * dt * ops.lap(x) + dt * (
            -ops.dc(_col(DF[k], x) * x) + _col(DR[k], x) * x + src
        )
        x = ops.implicit(dt).solve(rhs)
        states[k + 1] = _pad(x)
    return Trajectory(states, y.mesh)


def solve_adjoint(m: ModelSpec, y: Trajectory, obs: ObservationSet) -> AdjointTrajectory:
    """Backward adjoint sweep from ``p(t_N+) = 0`` with jumps at observation nodes.

    At an observation node ``p(t_i+) - p(t_i-) = H* R^{-1}(H y(t_i) - z_i)``.
    """
    mesh = y.mesh
    obs_idx = mesh.indices_for(obs.times)
    grid = y.grid
    ops = _Operators(grid)
    K = mesh.n_steps
    jumps = np.zeros((K + 1, grid.size))
    if obs.N:
        jumps[obs_idx] = obs.jumps(y.states[obs_idx])
    Y = y.states[:, 1:-1]
    DF, DR = m.df(Y), m.dr(Y)
    left = np.zeros((K + 1, grid.size))
    right = np.zeros((K + 1, grid.size))
    smoothed = np.zeros((K, grid.size))
    left[K] = -jumps[K]
    dts = mesh.dts
    for k in range(K - 1, -1, -1):
        dt = dts[k]
        q = ops.implicit(dt).solve(left[k + 1, 1:-1])
        smoothed[k, 1:-1] = q
        right[k, 1:-1] = q + 0.5 * dt * ops.lap(q) + dt * (DF[k] * ops.dc(q) + DR[k] * q)
        left[k] = right[k] - jumps[k]
    return AdjointTrajectory(left, right, smoothed, mesh)
