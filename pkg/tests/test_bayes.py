import numpy as np
import pytest

from conftest import twin_problem
from fourdvar import Grid, KLExpansion, ObservationSet, TimeMesh, eval_cost, log_density_ratio, make_model, pcn_sample, sample_prior
from fourdvar.bayes import posterior_problem_chain


def test_kl_eigenpairs():
    g = Grid(127)
    kl = KLExpansion(g.zeros(), 2.0)
    assert kl.n_modes == 63
    assert np.all(np.diff(kl.eigenvalues) < 0)
    assert kl.eigenvalues[2] == pytest.approx((2.0 / (3 * np.pi)) ** 2)
    phi = kl.eigenfunctions
    gram = g.inner(phi[:, None, :], phi[None, :, :])
    assert np.allclose(gram, np.eye(kl.n_modes), atol=1e-10)


def test_kl_validation():
    g = Grid(15)
    with pytest.raises(ValueError):
        KLExpansion(g.zeros(), 1.0, n_modes=0)
    with pytest.raises(ValueError):
        KLExpansion(g.zeros(), 1.0, n_modes=16)
    with pytest.raises(ValueError):
        KLExpansion(g.zeros(), -1.0)


def test_degenerate_prior_returns_mean(rng):
    g = Grid(31)
    mean = 0.3 * g.sine(2)
    kl = KLExpansion(mean, 0.0)
    assert np.array_equal(sample_prior(kl, rng), mean)
    assert np.array_equal(sample_prior(kl, rng, 4), np.tile(mean, (4, 1)))


def test_coefficients_recover_draw(rng):
    g = Grid(63)
    kl = KLExpansion(g.sine(1), 1.0, 10)
    u = sample_prior(kl, rng)
    c = kl.coefficients(u)
    rebuilt = kl.mean + c @ kl.eigenfunctions
    assert np.allclose(rebuilt, u, atol=1e-12)


def test_truncation_consistency():
    g = Grid(511)
    kl = KLExpansion(g.zeros(), 1.0, 256)
    draws = sample_prior(kl, np.random.default_rng(1), 4000)
    full = np.mean(g.norm(draws) ** 2)
    # projecting onto the first 128 modes gives the 128-mode truncation with the same xi
    head = np.mean(np.sum(kl.coefficients(draws)[:, :128] ** 2, axis=1))
    assert 0 <= full - head < 2 / (128 * np.pi**2)
    assert abs(head - KLExpansion(g.zeros(), 1.0, 128).expected_sq_norm()) < 3 * np.sqrt(1 / 45 / 4000)


def _misfit_setup(rng):
    p = twin_problem("bounded_reaction", data_offset=0.0)
    return p, p.grid.sine(1) * 0.5 + p.grid.sine(2) * 0.2


def test_log_density_ratio_relations(rng):
    p, truth = _misfit_setup(rng)
    assert log_density_ratio(truth, p.obs, p.model, p.mesh) == pytest.approx(0.0, abs=1e-24)
    u = 0.2 * p.grid.sine(3)
    cost = eval_cost(u, p)
    assert log_density_ratio(u, p.obs, p.model, p.mesh) == pytest.approx(-2 * cost.misfit, rel=1e-13)
    # the half-scaled potential plus the prior term is the cost functional
    phi_half = -log_density_ratio(u, p.obs, p.model, p.mesh, misfit_scale=0.5)
    assert phi_half + cost.reg == pytest.approx(cost.total, rel=1e-13)


def test_log_density_ratio_monotone_in_misfit(rng):
    p, truth = _misfit_setup(rng)
    values = []
    for delta in (0.0, 0.1, 0.2, 0.4):
        data = p.obs.data.copy()
        data[0, 0] += delta
        obs = p.obs.with_data(data)
        values.append(log_density_ratio(truth, obs, p.model, p.mesh))
    assert np.all(np.diff(values) < 0)


def test_zero_step_is_identity(rng):
    p, _ = _misfit_setup(rng)
    kl = KLExpansion(p.prior.u0, p.sigma)
    chain = pcn_sample(kl, p.obs, p.model, p.mesh, 0.0, 20, rng)
    assert chain.acceptance_rate == 1.0
    assert np.all(chain.samples == p.prior.u0)


def test_no_observations_accepts_everything(rng):
    g = Grid(31)
    kl = KLExpansion(g.zeros(), 1.0)
    chain = pcn_sample(kl, ObservationSet.empty(g), make_model("burgers"), TimeMesh.build([0.1]), 0.5, 50, rng)
    assert chain.acceptance_rate == 1.0
    assert chain.samples.shape == (50, g.size)
    assert chain.log_potentials.shape == (50,)


def test_chain_bookkeeping(rng):
    p, _ = _misfit_setup(rng)
    chain = posterior_problem_chain(p, 0.5, 30, rng, thin=3)
    assert chain.samples.shape[0] == 30
    assert chain.accepted.size == 90
    assert chain.acceptance_rate == pytest.approx(chain.accepted.mean())
    summary = chain.summary()
    assert summary["thin"] == 3 and len(summary["mean"]) == p.grid.size


def test_invalid_step(rng):
    p, _ = _misfit_setup(rng)
    kl = KLExpansion(p.prior.u0, p.sigma)
    with pytest.raises(ValueError):
        pcn_sample(kl, p.obs, p.model, p.mesh, 1.5, 10, rng)
