import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fourdvar import Grid, PriorSpec, Problem, make_model, twin_observations

settings.register_profile(
    "repo", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")

MODELS = ("heat", "burgers", "bounded_reaction")


def smooth_field(grid, rng, n_modes=5, scale=0.5):
    coef = scale * rng.standard_normal(n_modes) / np.arange(1, n_modes + 1) ** 2
    return sum(c * grid.sine(n) for n, c in enumerate(coef, start=1))


def twin_problem(kind="burgers", M=31, sigma=0.5, times=(0.05, 0.1), modes=(1, 2), truth=None,
                 dt_max=2e-3, data_offset=0.0, **params):
    grid = Grid(M)
    m = make_model(kind, **params)
    truth = 0.5 * grid.sine(1) + 0.2 * grid.sine(2) if truth is None else truth
    rows = np.array([grid.sine(n) for n in modes])
    obs = twin_observations(m, truth, list(times), rows, dt_max=dt_max)
    if data_offset:
        obs = obs.with_data(obs.data + data_offset)
    return Problem.build(m, obs, PriorSpec(grid.zeros(), sigma), dt_max=dt_max)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def burgers_problem():
    return twin_problem("burgers", data_offset=0.05)
