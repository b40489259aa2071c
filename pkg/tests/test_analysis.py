import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from tem_sdde.analysis import (
    compare_schemes,
    estimate_moments,
    estimate_strong_error,
    fit_convergence_order,
    strong_error_from_sups,
    sup_differences,
)
from tem_sdde.engine import Ensemble, GridSpec, coupled_paths, simulate_ensemble
from tem_sdde.errors import DegenerateFitError, GridError, InsufficientSampleError
from tem_sdde.model import SIGMOID, TABLE1, constant_segment, constant_volatility


def _const_ensemble(value, n=200, M=10, n_steps=20):
    grid = GridSpec(1.0, M, n_steps)
    states = np.full((n, M + n_steps + 1), float(value))
    return Ensemble(grid, states, "TEM", np.arange(n))


def test_moments_of_constant_paths():
    r = estimate_moments(_const_ensemble(2.0), p=3)
    assert np.allclose(r.estimates, 8.0)
    assert np.all(r.ci_halfwidth == 0)
    inv = estimate_moments(_const_ensemble(0.5), p=2, inverse=True)
    assert np.allclose(inv.estimates, 4.0)


def test_inverse_moments_exclude_nonpositive_paths():
    ens = _const_ensemble(0.5, n=150)
    ens.states[:30, -1] = -0.1
    r = estimate_moments(ens, p=2, inverse=True)
    assert r.excluded == 30 and r.n_paths == 120
    assert r.excluded_fraction == pytest.approx(0.2)


def test_moment_guards():
    with pytest.raises(InsufficientSampleError):
        estimate_moments(_const_ensemble(1.0, n=50), p=2)
    with pytest.raises(ValueError):
        estimate_moments(_const_ensemble(1.0), p=1.5)
    with pytest.raises(ValueError):
        estimate_moments(_const_ensemble(1.0), p=2, inverse=True, rho=4.0)


def test_moments_invariant_under_reordering(rule1, xi):
    grid = GridSpec.from_horizon(1.0, 100, 1.0)
    a = simulate_ensemble(TABLE1, rule1, grid, xi, SIGMOID, 3, range(120))
    b = simulate_ensemble(TABLE1, rule1, grid, xi, SIGMOID, 3, list(reversed(range(120))))
    ra, rb = estimate_moments(a, 2), estimate_moments(b, 2)
    assert np.array_equal(ra.estimates, rb.estimates)


def test_strong_error_zero_for_identical_coupling(rule1, xi):
    grid = GridSpec.from_horizon(1.0, 64, 1.0)
    fine, coarse = coupled_paths(TABLE1, rule1, grid, 0, xi, SIGMOID, 1, range(20))
    pt = estimate_strong_error(fine, coarse)
    assert pt.error == 0.0 and pt.ci_lo == 0.0 and pt.ci_hi == 0.0


def test_strong_error_interval_contains_estimate():
    sups = np.random.default_rng(0).exponential(size=1000)
    pt = strong_error_from_sups(0.1, sups, 2)
    assert pt.ci_lo <= pt.error <= pt.ci_hi
    assert pt.error == pytest.approx(math.sqrt(np.mean(sups**2)), rel=1e-14)
    with pytest.raises(ValueError):
        strong_error_from_sups(0.1, sups, 9)


def _euler(f, x0, delta, n):
    xs = [x0]
    for _ in range(n):
        xs.append(xs[-1] + f(xs[-1]) * delta)
    return np.array(xs)


def _f(x):
    p = TABLE1
    return p.alpha_m1 / x - p.alpha_0 + p.alpha_1 * x - p.alpha_2 * x**2


def test_deterministic_regime_matches_euler_oracle(rule1):
    # start at 1.0 so the path stays inside the clamp bounds even at delta = 1/32
    xi = constant_segment(1.0)
    p = TABLE1.replace(lam=0.0)
    zero = constant_volatility(0.0)
    grid = GridSpec.from_horizon(1.0, 256, 2.0)
    fine, coarse = coupled_paths(p, rule1, grid, 3, xi, zero, 5, range(4))
    pt = estimate_strong_error(fine, coarse)
    oracle = np.max(np.abs(_euler(_f, 1.0, 1 / 32, 64) - _euler(_f, 1.0, 1 / 256, 512)[::8]))
    assert pt.ci_hi - pt.ci_lo < 1e-15
    assert pt.error == pytest.approx(oracle, rel=1e-12)


def test_deterministic_euler_order_is_one(rule1):
    xi = constant_segment(1.0)
    p = TABLE1.replace(lam=0.0)
    zero = constant_volatility(0.0)
    exact = solve_ivp(lambda t, y: _f(y), (0, 2), [1.0], rtol=1e-12, atol=1e-14,
                      dense_output=True)
    points = []
    for M in (64, 128, 256, 512):
        grid = GridSpec.from_horizon(1.0, M, 2.0)
        ens = simulate_ensemble(p, rule1, grid, xi, zero, 0, [0])
        ref = exact.sol(np.arange(grid.n_steps + 1) * grid.delta)[0]
        points.append((grid.delta, float(np.max(np.abs(ens.forward[0] - ref)))))
    report = fit_convergence_order(points)
    assert report.slope == pytest.approx(1.0, abs=0.05)
    assert report.strictly_decreasing


@pytest.mark.parametrize("slope,c", [(0.25, 1.0), (0.5, 7.0), (1.0, 0.01)])
def test_fit_exact_on_power_law(slope, c):
    d = [2.0**-k for k in range(3, 9)]
    report = fit_convergence_order([(x, c * x**slope) for x in d])
    assert report.slope == pytest.approx(slope, rel=1e-10)
    assert report.intercept == pytest.approx(math.log(c), abs=1e-10)
    assert list(report.deltas) == sorted(d, reverse=True)


def test_fit_degenerate_inputs():
    with pytest.raises(DegenerateFitError):
        fit_convergence_order([(0.1, 1.0), (0.05, 0.5)])
    with pytest.raises(DegenerateFitError):
        fit_convergence_order([(0.1, 1.0), (0.05, 0.0), (0.025, 0.2)])
    with pytest.raises(DegenerateFitError):
        fit_convergence_order([(0.1, 1.0), (0.1, 0.5), (0.025, 0.2)])


def test_convergence_csv(tmp_path):
    report = fit_convergence_order([(0.1, 0.3), (0.05, 0.2), (0.025, 0.15)])
    report.write_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "delta,error,ci_lo,ci_hi"
    assert lines[1] == "0.1,0.3,0.3,0.3"


def test_sup_differences_rejects_mismatch(rule1, xi):
    a = simulate_ensemble(TABLE1, rule1, GridSpec.from_horizon(1.0, 64, 1.0), xi, SIGMOID, 1, [0])
    b = simulate_ensemble(TABLE1, rule1, GridSpec.from_horizon(1.0, 64, 2.0), xi, SIGMOID, 1, [0])
    with pytest.raises(GridError):
        sup_differences(a, b)


def test_compare_schemes(rule1, xi):
    grid = GridSpec.from_horizon(1.0, 100, 1.0)
    a = simulate_ensemble(TABLE1, rule1, grid, xi, SIGMOID, 2, range(10))
    same = compare_schemes(a, a)
    assert same.mean == same.rms == same.max == same.mean_sup == 0.0
    b = Ensemble(grid, a.states + 0.5, "TEM", a.path_indices)
    gap = compare_schemes(a, b)
    assert gap.max == pytest.approx(0.5) and gap.mean_sup == pytest.approx(0.5)
    c = simulate_ensemble(TABLE1, rule1, grid, xi, SIGMOID, 2, range(1, 11))
    with pytest.raises(GridError):
        compare_schemes(a, c)
