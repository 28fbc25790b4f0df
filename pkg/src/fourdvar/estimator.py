"""scikit-learn style wrapper: fit an initial state to time-stamped observations."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .assimilation import Problem, eval_cost
from .grid import Grid, TimeMesh
from .model import make_model
from .observations import ObservationSet, PriorSpec
from .optimize import multistart
from .pde import solve_forward

__all__ = ["VariationalAssimilator", "check_times", "check_observations"]


def check_times(X) -> np.ndarray:
    """Observation times as a strictly increasing positive 1-D array.

    Accepts shape (n,) or (n, 1), the latter being the usual feature matrix.
    """
    X = check_array(X, ensure_2d=False, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError(f"times must have one column, got {X.shape[1]}")
        X = X[:, 0]
    if X[0] <= 0 or np.any(np.diff(X) <= 0):
        raise ValueError("times must be positive and strictly increasing")
    return X


def check_observations(y, n_times: int, n_rows: int) -> np.ndarray:
    y = check_array(y, ensure_2d=False, dtype=float)
    y = y.reshape(n_times, -1)
    if y.shape[1] != n_rows:
        raise ValueError(f"expected {n_rows} observed quantities per time, got {y.shape[1]}")
    return y


class VariationalAssimilator(RegressorMixin, BaseEstimator):
    """Estimate the initial state of a 1-D parabolic PDE by 4D-Var.

    ``fit(X, y)`` takes observation times ``X`` and data ``y`` of shape
    ``(n_times, n_rows)`` and stores the MAP initial state in
    ``initial_state_``. ``predict`` returns the modelled observations at new
    times and ``transform`` the full grid states.

    Parameters
    ----------
    model : str
        ``heat``, ``burgers``, ``bounded_reaction`` or ``linear``.
    model_params : dict, optional
        Keyword parameters of the model.
    n_grid : int
        Number of interior grid nodes.
    rows : array of shape (n_rows, n_grid + 2), optional
        Observation functionals; defaults to the first ``n_modes`` sines.
    n_modes : int
        Number of sine functionals when ``rows`` is not given.
    noise_var : float
        Observation error variance (``R = noise_var * I``).
    sigma : float
        Prior standard deviation.
    prior_mean : array, optional
        Prior mean ``u0`` (defaults to zero).
    dt_max : float, optional
        Largest time step.
    method : str
        ``lbfgs``, ``sobolev_gd`` or ``fixed_point``.
    n_starts : int
        Multistart count; the lowest-cost critical point is kept.
    gtol, max_iter : float, int
        Stopping rule of each run.
    random_state : int, optional
        Seed for the start sampler.
    """

    def __init__(
        self,
        model="heat",
        model_params=None,
        n_grid=63,
        rows=None,
        n_modes=3,
        noise_var=1.0,
        sigma=1.0,
        prior_mean=None,
        dt_max=None,
        method="lbfgs",
        n_starts=1,
        gtol=1e-8,
        max_iter=500,
        random_state=None,
    ):
        self.model = model
        self.model_params = model_params
        self.n_grid = n_grid
        self.rows = rows
        self.n_modes = n_modes
        self.noise_var = noise_var
        self.sigma = sigma
        self.prior_mean = prior_mean
        self.dt_max = dt_max
        self.method = method
        self.n_starts = n_starts
        self.gtol = gtol
        self.max_iter = max_iter
        self.random_state = random_state

    def _grid_and_rows(self):
        grid = Grid(self.n_grid)
        if self.rows is None:
            rows = np.array([grid.sine(n) for n in range(1, self.n_modes + 1)])
        else:
            rows = grid.check(np.atleast_2d(np.asarray(self.rows, dtype=float)), "rows")
        return grid, rows

    def fit(self, X, y):
        times = check_times(X)
        grid, rows = self._grid_and_rows()
        data = check_observations(y, times.size, rows.shape[0])
        model = make_model(self.model, **(self.model_params or {}))
        u0 = grid.zeros() if self.prior_mean is None else grid.check(self.prior_mean, "prior_mean")
        obs = ObservationSet(times, rows, self.noise_var * np.eye(rows.shape[0]), data)
        problem = Problem.build(model, obs, PriorSpec(u0, self.sigma), dt_max=self.dt_max)
        catalog = multistart(
            problem,
            n_starts=self.n_starts,
            seed=self.random_state,
            method=self.method,
            starts=[u0] if self.n_starts == 1 else None,
            gtol=self.gtol,
            max_iter=self.max_iter,
        )
        runs = [r for r in catalog.runs if not isinstance(r, Exception)]
        if not runs:
            raise RuntimeError(f"every run failed: {catalog.failures}")
        best = min(runs, key=lambda r: r.cost)
        self.problem_ = problem
        self.catalog_ = catalog
        self.result_ = best
        self.initial_state_ = best.minimizer
        self.cost_ = eval_cost(best.minimizer, problem)
        self.n_features_in_ = 1
        return self

    def transform(self, X) -> np.ndarray:
        """Grid states ``y(t)`` at the requested times, shape (n_times, n_grid + 2)."""
        check_is_fitted(self, "initial_state_")
        times = check_times(X)
        mesh = TimeMesh.build(times, dt_max=self.problem_.mesh.dt_max)
        return solve_forward(self.problem_.model, self.initial_state_, mesh).at_obs()

    def predict(self, X) -> np.ndarray:
        """Modelled observations ``H y(t)``, shape (n_times, n_rows)."""
        states = self.transform(X)
        return self.problem_.obs.H(states)
