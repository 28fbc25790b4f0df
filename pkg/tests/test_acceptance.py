"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the summary lines.
"""

import numpy as np
import pytest

from conftest import smooth_field, twin_problem
from fourdvar import (
    Grid,
    ObservationSet,
    PriorSpec,
    Problem,
    TimeMesh,
    make_model,
    solve_adjoint,
    solve_forward,
    solve_second_variation,
    solve_tangent,
    twin_observations,
)
from fourdvar.assimilation import assemble_hessian, eval_cost, grad_cost, hessian_terms, second_variation_pairing
from fourdvar.bayes import KLExpansion, pcn_sample, sample_prior
from fourdvar.certificates import (
    construct_saddle,
    convexity_certificate,
    sigma_threshold,
    time_threshold,
    verify_apriori_bounds,
)
from fourdvar.cli import run
from fourdvar.config import default_config
from fourdvar.optimize import multistart

MODELS = ("heat", "burgers", "bounded_reaction")


def report(number, title, ok, detail):
    print(f"\n{'PASS' if ok else 'FAIL'} criterion {number:>2} {title}: {detail}")
    assert ok, detail


def _random_problem(rng, kind, M=31, n_obs=None, sigma=None):
    g = Grid(M)
    m = make_model(kind)
    n_obs = n_obs or int(rng.integers(1, 4))
    times = np.sort(rng.uniform(0.01, 0.1, n_obs))
    rows = np.array([g.sine(n) for n in (1, 2, 3)])
    R = np.diag(rng.uniform(0.5, 2.0, 3))
    data = 0.5 * rng.standard_normal((n_obs, 3))
    obs = ObservationSet(times, rows, R, data)
    sigma = float(rng.uniform(0.3, 2.0)) if sigma is None else sigma
    u0 = smooth_field(g, rng, scale=0.2)
    return Problem.build(m, obs, PriorSpec(u0, sigma), dt_max=2e-3)


def _batch_se(x, n_batches=50):
    """Mean and batch-means standard error of a correlated series."""
    b = x[: x.size // n_batches * n_batches].reshape(n_batches, -1).mean(axis=1)
    return float(x.mean()), float(b.std(ddof=1) / np.sqrt(n_batches))


def test_criterion_01_adjoint_gradient():
    rng = np.random.default_rng(101)
    eps, worst = 1e-5, 0.0
    for i in range(20):
        p = _random_problem(rng, MODELS[i % 3])
        g = p.grid
        u, v = smooth_field(g, rng, scale=1.0), smooth_field(g, rng)
        _, gV = grad_cost(u, p)
        fd = (eval_cost(u + eps * v, p).total - eval_cost(u - eps * v, p).total) / (2 * eps)
        exact = float(g.inner_V(gV, v))
        worst = max(worst, abs(fd - exact) / abs(exact))
    report(1, "adjoint gradient vs central difference", worst <= 1e-6, f"max rel err {worst:.2e} (tol 1e-6)")


def test_criterion_02_discrete_duality():
    rng = np.random.default_rng(202)
    worst = 0.0
    for i in range(10):
        p = _random_problem(rng, MODELS[i % 3], n_obs=3)
        g, m = p.grid, p.model
        y = solve_forward(m, smooth_field(g, rng, scale=1.0), p.mesh)
        adj = solve_adjoint(m, y, p.obs)
        eta = solve_tangent(m, y, smooth_field(g, rng))
        right = g.inner(adj.right[:-1], eta.states[:-1])
        left = g.inner(adj.left[1:], eta.states[1:])
        worst = max(worst, float(np.max(np.abs(right - left)) / np.max(np.abs(right))))
    report(2, "<p, eta> constant between observations", worst <= 1e-12, f"max rel drift {worst:.2e} (tol 1e-12)")


def test_criterion_03_heat_closed_forms():
    g = Grid(255)
    m = make_model("heat")
    times = np.array([0.05, 0.1])
    mesh = TimeMesh.build(times, dt_max=1e-4)
    t = mesh.nodes[:, None]
    errs = {}
    for n in (1, 2, 3):
        y = solve_forward(m, g.sine(n), mesh)
        exact = np.exp(-(n**2) * np.pi**2 * t) * g.sine(n)
        errs[f"decay n={n}"] = float(np.max(g.norm(y.states - exact)))
        base = solve_forward(m, smooth_field(g, np.random.default_rng(n)), mesh)
        eta = solve_tangent(m, base, g.sine(n))
        errs[f"tangent n={n}"] = float(np.max(g.norm(eta.states - exact)))
    # H y = <y, sin(pi x)>, zero state, so the jumps are -z_i sin(pi x)
    z = np.array([[0.7], [-0.4]])
    obs = ObservationSet(times, g.sine(1)[None, :], np.eye(1), z)
    p = solve_adjoint(m, solve_forward(m, g.zeros(), mesh), obs)
    amp = sum(z[i, 0] * np.exp(-np.pi**2 * (ti - t)) * (t < ti - 1e-12) for i, ti in enumerate(times))
    errs["adjoint"] = float(np.max(g.norm(p.right - amp * g.sine(1))))
    worst = max(errs.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    report(3, "heat closed forms at M=255", worst <= 1e-3, f"{detail} (tol 1e-3)")


def test_criterion_04_prior_statistics():
    g = Grid(255)
    kl = KLExpansion(g.zeros(), 1.0, g.M)
    n = 10_000
    draws = sample_prior(kl, np.random.default_rng(404), n)
    sq = g.norm(draws) ** 2
    z_norm = abs(sq.mean() - 1 / 6) / (sq.std(ddof=1) / np.sqrt(n))
    c2 = kl.coefficients(draws)[:, :8] ** 2
    target = (1.0 / (np.arange(1, 9) * np.pi)) ** 2
    z_modes = np.abs(c2.mean(axis=0) - target) / (c2.std(axis=0, ddof=1) / np.sqrt(n))
    ok = z_norm <= 3 and np.all(z_modes <= 3)
    report(4, "KL prior statistics", ok, f"|z| of E||u||^2 {z_norm:.2f}, max |z| of mode variances {z_modes.max():.2f} (tol 3)")


def test_criterion_05_convexity_regimes():
    p = twin_problem("burgers", data_offset=0.05)
    g = p.grid
    s_hat, t_hat = sigma_threshold(p), time_threshold(p)
    finite = bool(np.isfinite(s_hat) and np.isfinite(t_hat) and s_hat > 0 and t_hat > 0)
    rng = np.random.default_rng(505)
    unit = KLExpansion(g.zeros(), 1.0)
    rows = []
    for k, frac in enumerate((0.2, 0.4, 0.6, 0.8, 0.95)):
        q = p.replace(prior=PriorSpec(p.prior.u0, frac * s_hat))
        cert = convexity_certificate(q)
        cat = multistart(q, n_starts=20, sampler="prior", seed=k, gtol=1e-8)
        eigs = []
        for _ in range(50):
            w = sample_prior(unit, rng)
            radius = cert.A * rng.uniform() ** (1 / 8)
            eigs.append(assemble_hessian(radius * w / g.norm_V(w), q, 8).min_eigenvalue)
        rows.append((cert.passes, cat.distinct_count, min(eigs)))
    ok = finite and all(c and d == 1 and e >= 0 for c, d, e in rows)
    detail = f"sigma_hat {s_hat:.3g}, T_hat {t_hat:.3g}; " + "; ".join(
        f"passes={c} distinct={d} min_eig={e:.3g}" for c, d, e in rows
    )
    report(5, "Burgers convexity regime", ok, detail)


def test_criterion_06_saddle_construction():
    m = make_model("bounded_reaction")
    lines, ok = [], True
    for q in (1, 2, 3):
        inst = construct_saddle(q, [0.05, 0.1], 1.0, m)
        p = inst.problem
        g = p.grid
        _, gV = grad_cost(g.zeros(), p)
        scale = float(g.norm_V(inst.prior.u0))
        grad_ok = g.norm_V(gV) <= 1e-8 * scale
        cat = multistart(p, n_starts=4, seed=q, gtol=1e-8 * scale, max_iter=300, seed_points=[g.zeros()])
        far = max((float(g.norm_V(c.point)) for c in cat.points), default=0.0)
        ok &= bool(grad_ok and inst.hessian.morse_index >= q and far >= 1e-2)
        lines.append(f"q={q} grad {g.norm_V(gV):.1e} index {inst.hessian.morse_index} farthest {far:.3g}")
    report(6, "saddle construction", ok, "; ".join(lines))


def test_criterion_07_apriori_bounds():
    rng = np.random.default_rng(707)
    worst, where = np.inf, ""
    for i in range(20):
        p = _random_problem(rng, MODELS[i % 3])
        u = smooth_field(p.grid, rng, scale=float(rng.uniform(0.5, 3.0)))
        rep = verify_apriori_bounds(p.model, u, p.obs, p.mesh, tol=1e-8, rng=rng)
        for name, c in rep.checks.items():
            if c.margin < worst:
                worst, where = c.margin, f"{MODELS[i % 3]}/{name}"
    report(7, "a priori bound suite", worst >= 0, f"min margin {worst:.3g} at {where} (tol 1e-8)")


def test_criterion_08_second_variation():
    rng = np.random.default_rng(808)
    slopes, rels = [], []
    for kind in ("burgers", "bounded_reaction"):
        g = Grid(31)
        m = make_model(kind)
        mesh = TimeMesh.build([0.1], dt_max=1e-3)
        u, v = 2 * smooth_field(g, rng), 2 * smooth_field(g, rng)
        y = solve_forward(m, u, mesh)
        omega = solve_second_variation(m, y, solve_tangent(m, y, v))
        eps = np.array([2e-1, 1e-1, 5e-2, 2.5e-2])
        errs = []
        for e in eps:
            fd = (solve_forward(m, u + e * v, mesh).states - 2 * y.states + solve_forward(m, u - e * v, mesh).states) / e**2
            errs.append(float(np.max(g.norm(fd - omega.states))))
        slopes.append(np.polyfit(np.log(eps), np.log(errs), 1)[0])
        for _ in range(3):
            p = _random_problem(rng, kind)
            a, b = smooth_field(p.grid, rng, scale=1.0), smooth_field(p.grid, rng)
            direct = hessian_terms(a, b, p)["nonlinear"]
            paired = second_variation_pairing(a, b, p)
            rels.append(abs(direct - paired) / abs(direct))
    ok = min(slopes) >= 1.9 and max(rels) <= 1e-6
    report(8, "second variation", ok, f"min slope {min(slopes):.2f} (tol 1.9), max pairing rel err {max(rels):.1e} (tol 1e-6)")


def test_criterion_09_pcn():
    g = Grid(127)
    kl = KLExpansion(g.zeros(), 1.0, g.M)
    mesh = TimeMesh.build([0.1], dt_max=1e-3)
    chain = pcn_sample(kl, ObservationSet.empty(g), make_model("burgers"), mesh, 0.6, 20_000, np.random.default_rng(909))
    mean, se = _batch_se(g.norm(chain.samples) ** 2)
    zs = [abs(mean - 1 / 6) / se]
    c = kl.coefficients(chain.samples)[:, :8] ** 2
    for n in range(8):
        mean, se = _batch_se(c[:, n])
        zs.append(abs(mean - (1 / ((n + 1) * np.pi)) ** 2) / se)
    prior_ok = max(zs) <= 3

    g = Grid(63)
    m = make_model("burgers")
    truth = 0.5 * g.sine(1) + 0.2 * g.sine(2)
    rows = np.array([g.sine(n) for n in (1, 2, 3)])
    obs = twin_observations(m, truth, [0.02, 0.05, 0.1], rows, 1e-2 * np.eye(3), dt_max=1e-3)
    p = Problem.build(m, obs, PriorSpec(g.zeros(), 1.0), dt_max=1e-3)
    post = pcn_sample(KLExpansion(g.zeros(), 1.0), obs, m, p.mesh, 0.2, 3000, np.random.default_rng(919))
    err_post = float(g.norm(post.samples[500:].mean(axis=0) - truth))
    err_prior = float(g.norm(p.prior.u0 - truth))
    ok = prior_ok and err_post < err_prior
    report(9, "pCN", ok, f"max |z| prior stats {max(zs):.2f} (tol 3); posterior mean error {err_post:.3g} vs prior {err_prior:.3g}")


def test_criterion_10_determinism(tmp_path):
    cfg = default_config().with_overrides(command="verify", seed=11)
    blobs = []
    for k in range(2):
        status, paths = run(cfg, tmp_path / f"run{k}")
        assert status == 0
        blobs.append(next(pth for pth in paths if pth.name == "verify_report.json").read_bytes())
    report(10, "verify determinism", blobs[0] == blobs[1], f"{len(blobs[0])} bytes, identical={blobs[0] == blobs[1]}")
