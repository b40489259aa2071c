import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tem_sdde.engine import (
    GridSpec,
    aggregate_increments,
    bem_step,
    coupled_paths,
    em_step,
    simulate_ensemble,
    simulate_from_increments,
    simulate_path,
    tem_step,
)
from tem_sdde.errors import GridError, ModelDomainError, NonFiniteStateError
from tem_sdde.model import (
    SIGMOID,
    TABLE1,
    TABLE2,
    VolatilityFunction,
    constant_segment,
    constant_volatility,
)
from tem_sdde.noise import NoiseStream
from tem_sdde.truncation import clamp_bounds


def _tem_oracle(p, lower, upper, delta, x, xd, dB, dN, phi):
    c = min(max(x, lower), upper)
    f = p.alpha_m1 / c - p.alpha_0 + p.alpha_1 * c - p.alpha_2 * c**p.rho
    g = 0.0 if x < 0 else min(x, upper) ** p.theta
    h = p.alpha_3 * x if x >= 0 else 0.0
    return x + f * delta + phi(max(xd, 0.0)) * g * dB + h * dN


def test_tem_step_worked_example(rule1):
    # x = 0.2, one jump, no Brownian move: 0.2 + 0.72e-3 + 0.2
    out = tem_step(TABLE1, rule1, 1e-3, 0.2, 0.2, 0.0, 1)
    assert out == pytest.approx(0.40072, rel=1e-12)


def test_tem_step_random_oracle(rule1):
    rng = np.random.default_rng(0)
    phi = lambda y: float(SIGMOID(y))
    for _ in range(200):
        delta = 10 ** rng.uniform(-5, -1)
        b = clamp_bounds(rule1, delta)
        x = rng.uniform(-2, 2 * b.upper)
        xd = rng.uniform(-1, 5)
        dB = rng.normal(0, math.sqrt(delta))
        dN = int(rng.integers(0, 3))
        want = _tem_oracle(TABLE1, b.lower, b.upper, delta, x, xd, dB, dN, phi)
        got = tem_step(TABLE1, rule1, delta, x, xd, dB, dN)
        assert got == pytest.approx(want, rel=1e-12, abs=1e-15)


def _bem_oracle(p, delta, x, xd, dB, dN):
    c = (x - p.alpha_0 * delta + float(SIGMOID(xd)) * max(x, 0.0) ** p.theta * dB
         + (p.alpha_3 * x if x >= 0 else 0.0) * dN)
    roots = np.roots([p.alpha_2 * delta, 1 - p.alpha_1 * delta, -c])
    return max(r.real for r in roots)


def test_bem_step_random_oracle():
    rng = np.random.default_rng(1)
    for _ in range(200):
        delta = 10 ** rng.uniform(-5, -1)
        x = rng.uniform(0.01, 5)
        xd = rng.uniform(-1, 5)
        dB = rng.normal(0, math.sqrt(delta))
        dN = int(rng.integers(0, 3))
        got = bem_step(TABLE2, delta, x, xd, dB, dN)
        want = _bem_oracle(TABLE2, delta, x, xd, dB, dN)
        assert got == pytest.approx(want, rel=1e-10)
        # residual of the implicit equation, independent of the root formula
        c = got - (x + (-TABLE2.alpha_0 + TABLE2.alpha_1 * got - TABLE2.alpha_2 * got**2) * delta
                   + float(SIGMOID(xd)) * x**TABLE2.theta * dB + TABLE2.alpha_3 * x * dN)
        assert abs(c) < 1e-12 * max(1.0, abs(got))


def test_bem_small_step_continuity():
    for delta in (1e-6, 1e-8, 1e-10):
        assert bem_step(TABLE2, delta, 0.3, 0.3, 0.0, 0) == pytest.approx(0.3, abs=10 * delta)


def test_bem_linear_drift_case():
    # alpha_2 -> small: implicit linear solve X = (x - a0 d) / (1 - a1 d)
    p = TABLE2.replace(alpha_2=1e-12)
    got = bem_step(p, 1e-2, 0.5, 0.5, 0.0, 0)
    assert got == pytest.approx((0.5 - 0.3e-2) / (1 - 0.2e-2), rel=1e-9)


def test_bem_rejects_unsupported_models():
    with pytest.raises(ModelDomainError):
        bem_step(TABLE1, 1e-3, 0.2, 0.2, 0.0, 0)
    with pytest.raises(ModelDomainError):
        bem_step(TABLE2.replace(rho=2.5), 1e-3, 0.2, 0.2, 0.0, 0)


def test_tem_nonfinite_raises(rule1):
    bad = VolatilityFunction(lambda y: np.full(np.shape(y), np.inf), 1.0, "broken")
    with pytest.raises(NonFiniteStateError):
        tem_step(TABLE1, rule1, 1e-3, 0.2, 0.2, 0.01, 0, vol=bad)


def test_em_nan_outside_domain():
    assert math.isnan(em_step(TABLE1, 1e-3, -0.1, 0.2, 0.0, 0))


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 50), st.floats(-1, 1), st.integers(0, 4), st.floats(-10, 10))
def test_tem_step_increment_bound(rule1, x, z, dN, xd):
    delta = 1e-3
    pi = rule1.pi(delta)
    dB = z * math.sqrt(delta)
    out = tem_step(TABLE1, rule1, delta, x, xd, dB, dN)
    jump = TABLE1.alpha_3 * max(x, 0.0) * dN
    assert abs(out - x - jump) <= pi * delta + SIGMOID.sigma_bound * pi * abs(dB) + 1e-12


def test_tem_equals_em_without_noise_inside_bounds(rule1):
    zero = constant_volatility(0.0)
    p = TABLE1.replace(lam=0.0)
    grid = GridSpec.from_horizon(1.0, 1000, 2.0)
    a = simulate_ensemble(p, rule1, grid, constant_segment(0.2), zero, 1, range(3), "TEM")
    b = simulate_ensemble(p, rule1, grid, constant_segment(0.2), zero, 1, range(3), "EM")
    bounds = clamp_bounds(rule1, grid.delta)
    assert np.all((a.states >= bounds.lower) & (a.states <= bounds.upper))
    assert np.array_equal(a.states, b.states)


def test_simulate_reproducible_and_order_free(rule1, xi):
    grid = GridSpec.from_horizon(1.0, 100, 2.0)
    a = simulate_ensemble(TABLE1, rule1, grid, xi, SIGMOID, 42, [0, 1, 2, 3])
    b = simulate_ensemble(TABLE1, rule1, grid, xi, SIGMOID, 42, [3, 2, 1, 0]).sorted()
    assert np.array_equal(a.states, b.states)
    single = simulate_path(TABLE1, rule1, grid, xi, SIGMOID, NoiseStream(42, 2))
    assert np.array_equal(single.states, a.states[2])
    assert np.all(a.states[:, : grid.M + 1] == 0.2)
    assert a.forward.shape == (4, grid.n_steps + 1)


def test_coupled_identity_at_zero_refinement(rule1, xi):
    grid = GridSpec.from_horizon(1.0, 64, 1.0)
    fine, coarse = coupled_paths(TABLE1, rule1, grid, 0, xi, SIGMOID, 9, range(5))
    assert np.array_equal(fine.states, coarse.states)


def test_coupled_increments_are_block_sums(rule1, xi):
    grid = GridSpec.from_horizon(1.0, 64, 1.0)
    fine, coarse = coupled_paths(TABLE1, rule1, grid, 2, xi, SIGMOID, 9, range(5))
    assert coarse.grid.M == 16 and coarse.grid.n_steps == 16
    assert np.allclose(coarse.dB, fine.dB.reshape(5, 16, 4).sum(axis=2), rtol=0, atol=1e-15)
    assert np.array_equal(coarse.dN, fine.dN.reshape(5, 16, 4).sum(axis=2))
    assert np.allclose(coarse.dB.sum(axis=1), fine.dB.sum(axis=1), atol=1e-12)


def test_grid_errors(rule1, xi):
    with pytest.raises(GridError):
        GridSpec.from_horizon(1.0, 3, 0.5)
    with pytest.raises(GridError):
        GridSpec(1.0, 0, 1)
    with pytest.raises(GridError):
        GridSpec(1.0, 64, 10).coarsen(4)
    with pytest.raises(GridError):
        aggregate_increments(np.zeros(5), np.zeros(5), 2)
    with pytest.raises(GridError):
        simulate_from_increments(TABLE1, rule1, GridSpec(2.0, 10, 10), xi, SIGMOID,
                                 np.zeros((1, 10)), np.zeros((1, 10)))


def test_path_csv(tmp_path, rule1, xi):
    grid = GridSpec.from_horizon(1.0, 10, 1.0)
    sim = simulate_path(TABLE1, rule1, grid, xi, SIGMOID, NoiseStream(3, 0))
    sim.write_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "k,t,x,dB,dN"
    assert len(lines) == 1 + grid.M + grid.n_steps + 1
    assert lines[1].startswith("-10,-1.0,0.2,,")
    assert lines[-1].endswith(",,")
    k0 = lines[1 + grid.M].split(",")
    assert float(k0[3]) == sim.dB[0]
    assert float(lines[-1].split(",")[2]) == sim.states[-1]
