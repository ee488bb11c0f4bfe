import math

import numpy as np
import pytest
from scipy.special import erf

from wavemix.toys import (
    GradientSDE,
    OrnsteinUhlenbeck,
    builtin_cubic,
    builtin_doublewell,
    detailed_balance_check,
    gradient_sde_exact_density,
    simulate_toy,
)


def test_cubic_potential_values():
    cubic = builtin_cubic()
    assert cubic.potential(0.0) == 0.0
    assert cubic.potential(1.0) == pytest.approx(5.0 / 12.0, rel=1e-12)
    assert cubic.potential(3.0) == pytest.approx(-9.0 / 4.0, rel=1e-12)
    assert cubic.potential(2.0) == pytest.approx(-2.0 / 3.0, rel=1e-12)


def test_cubic_equilibria():
    pts, stable = builtin_cubic().equilibria()
    np.testing.assert_allclose(pts, [0.0, 1.0, 3.0], atol=1e-9)
    np.testing.assert_array_equal(stable, [True, False, True])


def test_doublewell_barriers():
    dw = builtin_doublewell()
    assert dw.potential(1.0) == pytest.approx(0.25, rel=1e-12)
    assert dw.potential(0.0) == 0.0
    assert dw.potential(2.0) == pytest.approx(0.0, abs=1e-12)
    # barrier from either well is A(1) - A(well) = 1/4, energy cost 1/2
    assert 2 * (dw.potential(1.0) - dw.potential(0.0)) == pytest.approx(0.5)


def test_potential_derivative_matches_drift():
    # the construction-time check enforces A' = b to 1e-10 on a 1000-point grid;
    # cross-check here with an independent central difference
    for model in (builtin_cubic(), builtin_doublewell()):
        u = np.linspace(-5, 8, 100001)
        dA = np.gradient(model.potential(u), u)
        assert np.max(np.abs(dA[1:-1] - model.drift(u)[1:-1])) < 1e-4


def test_exact_density_gaussian():
    # A = u^2/2, eps = 1: density is N(0, 1/2); mu([-1,1]) = erf(1)
    model = GradientSDE((0.0, 1.0), name="quadratic")
    dens = gradient_sde_exact_density(model, eps=1.0)
    assert dens.measure(dens.grid[0], dens.grid[-1]) == pytest.approx(1.0, abs=1e-10)
    assert dens.measure(-1.0, 1.0) == pytest.approx(erf(1.0), abs=1e-6)


def test_exact_density_concentration():
    # mass near the global minimizer u = 3 grows to 1 as eps decreases
    cubic = builtin_cubic()
    masses = [gradient_sde_exact_density(cubic, eps).measure(2.9, 3.1)
              for eps in (0.1, 0.02, 0.005)]
    assert masses[0] < masses[1] < masses[2]
    assert masses[2] > 0.999


def test_nonintegrable_potential_rejected():
    inverted = GradientSDE((0.0, -1.0), name="inverted")
    with pytest.raises(ValueError):
        gradient_sde_exact_density(inverted, eps=0.5)


def test_toy_deterministic_at_equilibrium():
    cubic = builtin_cubic()
    t, paths, _ = simulate_toy(cubic, eps=0.0, dt=1e-3, horizon=1.0, seed=0, u0=3.0)
    assert np.max(np.abs(paths - 3.0)) < 1e-9


def test_ou_stationary_variance():
    ou = OrnsteinUhlenbeck(1.0, 1.0)
    t, paths, _ = simulate_toy(ou, None, dt=0.01, horizon=200.0, seed=1,
                               n_traj=64, record_stride=100)
    tail = paths[:, t > 20]
    var = tail.var()
    n_eff = tail.size / 200  # ~2 units of correlation time per sample
    se = ou.stationary_var * math.sqrt(2 / n_eff)
    assert abs(var - ou.stationary_var) < 3 * se + 0.01


def test_gradient_histogram_matches_density():
    cubic = builtin_cubic()
    eps = 0.5
    t, paths, _ = simulate_toy(cubic, eps, dt=2e-3, horizon=150.0, seed=2,
                               n_traj=16, record_stride=50)
    samples = paths[:, t > 25].ravel()
    dens = gradient_sde_exact_density(cubic, eps)
    edges = np.linspace(-0.8, 4.0, 13)
    counts, _ = np.histogram(samples, edges)
    probs = np.array([dens.measure(a, b) for a, b in zip(edges[:-1], edges[1:])])
    # drop near-empty tail bins, which destabilize the statistic
    keep = probs > 0.01
    counts, probs = counts[keep], probs[keep]
    probs /= probs.sum()
    n = counts.sum()
    # correlation-time correction: roughly one independent sample per 4 units
    n_eff = n * 0.1 / 4.0
    chi2 = np.sum((counts / n - probs) ** 2 / probs) * n_eff
    from scipy.stats import chi2 as chi2_dist
    assert chi2 < chi2_dist.ppf(0.99, keep.sum() - 1)


def test_detailed_balance():
    dw = builtin_doublewell()
    eps = 0.4
    t, paths, _ = simulate_toy(dw, eps, dt=1e-3, horizon=300.0, seed=3,
                               n_traj=12, record_stride=10)
    series = np.concatenate([p[t > 25] for p in paths])
    rep = detailed_balance_check(dw, eps, series)
    assert rep.bins.size >= 3
    assert rep.ok
