"""Uniform Dirichlet grid on [0, 1], discrete norms and the time mesh.

Grid functions are plain float arrays of length ``M + 2`` whose end values
are zero. Norms use the trapezoid rule (which reduces to ``dx * sum`` under
the boundary condition) and the V norm ``||u_x||`` uses forward differences,
so that ``<u, v>_V = <-lap(u), v>`` holds exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import lapack

__all__ = ["Grid", "TimeMesh", "SymTridiag", "advective_dt_cap"]


class SymTridiag:
    """Factored symmetric positive definite tridiagonal matrix (LAPACK pttrf)."""

    def __init__(self, diag: np.ndarray, off: np.ndarray):
        d, e, info = lapack.dpttrf(np.asarray(diag, dtype=float), np.asarray(off, dtype=float))
        if info != 0:
            raise np.linalg.LinAlgError(f"tridiagonal factorisation failed (info={info})")
        self._d, self._e = d, e
        self.diag = np.asarray(diag, dtype=float)
        self.off = np.asarray(off, dtype=float)

    def solve(self, b: np.ndarray) -> np.ndarray:
        x, info = lapack.dpttrs(self._d, self._e, b)
        if info != 0:
            raise np.linalg.LinAlgError(f"tridiagonal solve failed (info={info})")
        return x

    def matvec(self, x: np.ndarray) -> np.ndarray:
        out = self.diag.reshape((-1,) + (1,) * (x.ndim - 1)) * x
        off = self.off.reshape((-1,) + (1,) * (x.ndim - 1))
        out[:-1] += off * x[1:]
        out[1:] += off * x[:-1]
        return out


@dataclass(frozen=True)
class Grid:
    """``M`` interior nodes ``x_j = j / (M + 1)``."""

    M: int

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("grid needs at least one interior node")

    @classmethod
    def for_values(cls, u) -> "Grid":
        return cls(np.shape(u)[-1] - 2)

    @property
    def dx(self) -> float:
        return 1.0 / (self.M + 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.M + 2)

    @property
    def size(self) -> int:
        return self.M + 2

    def zeros(self) -> np.ndarray:
        return np.zeros(self.M + 2)

    def sine(self, n: int) -> np.ndarray:
        u = np.sin(n * np.pi * self.x)
        u[0] = u[-1] = 0.0
        return u

    def check(self, u, name: str = "u") -> np.ndarray:
        """Validate a grid function: shape, finiteness and Dirichlet ends."""
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.M + 2:
            raise ValueError(f"{name} has {u.shape[-1]} nodes, grid needs {self.M + 2}")
        if not np.all(np.isfinite(u)):
            raise ValueError(f"{name} has non-finite entries")
        if np.any(u[..., 0] != 0.0) or np.any(u[..., -1] != 0.0):
            raise ValueError(f"{name} violates the homogeneous Dirichlet condition")
        return u

    # inner products and norms; all accept stacked arrays along leading axes

    def inner(self, u, v):
        return self.dx * np.sum(np.asarray(u) * np.asarray(v), axis=-1)

    def norm(self, u):
        return np.sqrt(self.inner(u, u))

    def inner_V(self, u, v):
        return np.sum(np.diff(u, axis=-1) * np.diff(v, axis=-1), axis=-1) / self.dx

    def norm_V(self, u):
        return np.sqrt(self.inner_V(u, u))

    def sup_norm(self, u):
        return np.max(np.abs(u), axis=-1)

    def l4_norm(self, u):
        """``||u||_{L^4} = ||u**2||**(1/2)``."""
        return np.sqrt(self.norm(np.asarray(u) ** 2))

    def ddx(self, u):
        """Centered first difference with zero ends."""
        u = np.asarray(u)
        out = np.zeros_like(u)
        out[..., 1:-1] = (u[..., 2:] - u[..., :-2]) / (2.0 * self.dx)
        return out

    def laplacian(self, u):
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        out[..., 1:-1] = (u[..., 2:] - 2.0 * u[..., 1:-1] + u[..., :-2]) / self.dx**2
        return out

    def solve_laplacian(self, g):
        """Dirichlet ``lap^{-1} g`` by a tridiagonal solve."""
        g = np.asarray(g, dtype=float)
        neg_lap = _neg_laplacian(self.M)
        out = np.zeros_like(g)
        rhs = -g[..., 1:-1] * self.dx**2
        out[..., 1:-1] = neg_lap.solve(rhs.T).T
        return out


@lru_cache(maxsize=32)
def _neg_laplacian(M: int) -> SymTridiag:
    return SymTridiag(np.full(M, 2.0), np.full(M - 1, -1.0))


def advective_dt_cap(model, grid: Grid, amplitude: float) -> float:
    """``dx / (max|f'| + 1)`` with the max over ``[-amplitude, amplitude]``."""
    ys = np.linspace(-amplitude, amplitude, 401)
    return grid.dx / (float(np.max(np.abs(model.df(ys)))) + 1.0)


@dataclass(frozen=True)
class TimeMesh:
    """Time nodes from 0 with every observation time on a node."""

    nodes: np.ndarray
    obs_indices: tuple = ()
    dt_max: float = np.inf
    _obs_times: tuple = field(default=(), repr=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2 or nodes[0] != 0.0:
            raise ValueError("mesh nodes must be a 1-D array starting at 0")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("mesh nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "obs_indices", tuple(int(i) for i in self.obs_indices))

    @classmethod
    def build(
        cls,
        obs_times=(),
        t_final: float | None = None,
        dt_max: float | None = None,
        dt_cap: float | None = None,
    ) -> "TimeMesh":
        """Piecewise-uniform mesh through ``obs_times`` up to ``t_final``.

        ``dt_max`` defaults to ``T / 1000`` with ``T`` the final time; ``dt_cap``
        (e.g. from :func:`advective_dt_cap`) further limits the spacing.
        """
        obs_times = np.asarray(obs_times, dtype=float).ravel()
        if obs_times.size and (obs_times[0] <= 0 or np.any(np.diff(obs_times) <= 0)):
            raise ValueError("observation times must be positive and strictly increasing")
        T = float(obs_times[-1]) if obs_times.size else 0.0
        if t_final is not None:
            if t_final < T:
                raise ValueError("t_final precedes the last observation time")
            T = float(t_final)
        if T <= 0:
            raise ValueError("mesh needs a positive final time")
        h = T / 1000.0 if dt_max is None else float(dt_max)
        if dt_cap is not None:
            h = min(h, float(dt_cap))
        breaks = np.concatenate([[0.0], obs_times])
        if breaks[-1] < T:
            breaks = np.concatenate([breaks, [T]])
        pieces = [np.array([0.0])]
        obs_idx = []
        for a, b in zip(breaks[:-1], breaks[1:]):
            n = max(1, int(np.ceil((b - a) / h * (1 - 1e-12))))
            seg = a + (b - a) * np.arange(1, n + 1) / n
            seg[-1] = b
            pieces.append(seg)
        nodes = np.concatenate(pieces)
        for t in obs_times:
            obs_idx.append(int(np.flatnonzero(nodes == t)[0]))
        return cls(nodes, tuple(obs_idx), h, tuple(float(t) for t in obs_times))

    @property
    def n_steps(self) -> int:
        return self.nodes.size - 1

    @property
    def t_final(self) -> float:
        return float(self.nodes[-1])

    @property
    def dts(self) -> np.ndarray:
        return np.diff(self.nodes)

    def index_of(self, t: float) -> int:
        hits = np.flatnonzero(np.isclose(self.nodes, t, rtol=0.0, atol=1e-14 * max(1.0, abs(t))))
        if hits.size == 0:
            raise ValueError(f"time {t} is not a mesh node")
        return int(hits[0])

    def indices_for(self, times) -> list[int]:
        return [self.index_of(t) for t in np.asarray(times, dtype=float).ravel()]
