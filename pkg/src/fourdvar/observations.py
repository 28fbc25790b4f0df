from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid

__all__ = ["ObservationSet", "PriorSpec"]


@dataclass(frozen=True)
class ObservationSet:
    """Observations ``z_i`` of ``H y(t_i)`` with ``(H y)_j = <h_j, y>``.

    Parameters
    ----------
    times : array of shape (N,)
        Strictly increasing positive observation times.
    rows : array of shape (q, M + 2)
        Grid functions ``h_j`` defining the observation operator.
    R : array of shape (q, q)
        Symmetric positive definite observation covariance.
    data : array of shape (N, q)
        Observed values.
    D : float, optional
        Bound on ``|z_i|``; defaults to the largest observed norm.
    """

    times: np.ndarray
    rows: np.ndarray
    R: np.ndarray
    data: np.ndarray
    D: float | None = None

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        q = rows.shape[0]
        data = np.asarray(self.data, dtype=float).reshape(times.size, q)
        if times.size and (times[0] <= 0 or np.any(np.diff(times) <= 0)):
            raise ValueError("observation times must be positive and strictly increasing")
        if R.shape != (q, q):
            raise ValueError(f"R must be {q}x{q}")
        if not np.allclose(R, R.T, rtol=1e-12, atol=0.0):
            raise ValueError("R must be symmetric")
        if np.linalg.eigvalsh(R)[0] <= 0:
            raise ValueError("R must be positive definite")
        Grid.for_values(rows).check(rows, "observation rows")
        if not np.all(np.isfinite(data)):
            raise ValueError("observation data must be finite")
        norms = np.linalg.norm(data, axis=1) if times.size else np.zeros(0)
        D = float(norms.max(initial=0.0)) if self.D is None else float(self.D)
        if np.any(norms > D * (1 + 1e-12)):
            raise ValueError("observation data exceed the declared bound D")
        for name, val in (("times", times), ("rows", rows), ("R", R), ("data", data), ("D", D)):
            object.__setattr__(self, name, val)

    @classmethod
    def empty(cls, grid: Grid, rows=None) -> "ObservationSet":
        rows = np.atleast_2d(grid.sine(1) if rows is None else rows)
        return cls(np.zeros(0), rows, np.eye(rows.shape[0]), np.zeros((0, rows.shape[0])))

    @property
    def N(self) -> int:
        return self.times.size

    @property
    def q(self) -> int:
        return self.rows.shape[0]

    @property
    def grid(self) -> Grid:
        return Grid.for_values(self.rows)

    @property
    def R_inv(self) -> np.ndarray:
        return np.linalg.inv(self.R)

    @property
    def R_inv_sqrt(self) -> np.ndarray:
        w, Q = np.linalg.eigh(self.R)
        return (Q / np.sqrt(w)) @ Q.T

    def H(self, y) -> np.ndarray:
        """Apply the observation operator along the last axis."""
        return self.grid.dx * np.asarray(y) @ self.rows.T

    def H_adj(self, w) -> np.ndarray:
        """L2 adjoint: ``H* w = sum_j w_j h_j``."""
        return np.asarray(w) @ self.rows

    def gram(self) -> np.ndarray:
        return self.grid.dx * self.rows @ self.rows.T

    def op_norms(self) -> tuple[float, float]:
        """``(||H||, ||H* R^{-1}||)`` as operators between L2 and R^q."""
        G = self.gram()
        nH = float(np.sqrt(max(np.linalg.eigvalsh(G)[-1], 0.0)))
        Ri = self.R_inv
        nHR = float(np.sqrt(max(np.linalg.eigvalsh(Ri @ G @ Ri)[-1], 0.0)))
        return nH, nHR

    def residuals(self, y_obs) -> np.ndarray:
        """Whitened residuals ``R^{-1/2}(H y(t_i) - z_i)``, shape (N, q)."""
        return (self.H(y_obs) - self.data) @ self.R_inv_sqrt.T

    def jumps(self, y_obs) -> np.ndarray:
        """``H* R^{-1} (H y(t_i) - z_i)`` for each observation, shape (N, M + 2)."""
        return self.H_adj((self.H(y_obs) - self.data) @ self.R_inv.T)

    def with_data(self, data, D=None) -> "ObservationSet":
        return ObservationSet(self.times, self.rows, self.R, data, D)


@dataclass(frozen=True)
class PriorSpec:
    """Gaussian prior ``N(u0, -sigma**2 lap^{-1})``."""

    u0: np.ndarray
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("prior scale sigma must be positive")
        u0 = Grid.for_values(self.u0).check(self.u0, "u0")
        object.__setattr__(self, "u0", u0)
        object.__setattr__(self, "sigma", float(self.sigma))
