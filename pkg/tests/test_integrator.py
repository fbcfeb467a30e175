from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from genesol.energy import quadratic_model, regularized_model
from genesol.errors import NonConvergenceError, ParameterError, StabilityWarning
from genesol.integrator import (
    ElasticState,
    discrete_gradient,
    energy,
    manufactured_linear_solution,
    oscillatory_initial_data,
    simulate,
    stability_cap,
    step,
)
from genesol.torus import TorusField, TorusGrid, gradient, integrate


def smooth_state_2d(n=16, amp=0.2):
    grid = TorusGrid((n, n))
    x, y = grid.coordinates()
    tau = 2 * np.pi
    v = np.stack([np.sin(tau * x) * np.cos(tau * y), 0.3 * np.cos(tau * (x + y))])
    F = np.eye(2)[..., None, None] + amp * np.stack(
        [[np.sin(tau * y), 0 * x], [np.cos(tau * x), np.sin(tau * (x - y))]]
    )
    return ElasticState(TorusField(grid, v), TorusField(grid, F))


def l2_error(a, b, grid):
    return np.sqrt(np.sum((a.v.values - b.v.values) ** 2 + (a.F.values - b.F.values) ** 2) * grid.cell_volume)


@pytest.mark.parametrize("model", [quadratic_model(2), regularized_model(2)])
def test_equilibrium_is_fixed_point(model):
    grid = TorusGrid((8, 8))
    F = np.broadcast_to(np.array([[1.2, 0.3], [-0.1, 0.9]])[..., None, None], (2, 2, 8, 8))
    s = ElasticState(TorusField.zeros(grid, (2,)), TorusField(grid, F))
    out = step(model, s, 0.01)
    np.testing.assert_array_equal(out.v.values, 0.0)
    np.testing.assert_array_equal(out.F.values, s.F.values)
    tr = simulate(model, s, 0.01, 3)
    assert np.all(tr.E == tr.E[0])


def test_discrete_gradient_identity():
    model = regularized_model(3, 0.1)
    rng = np.random.default_rng(0)
    for scale in (1.0, 1e-3, 1e-7, 1e-12):
        F = rng.normal(size=(50, 3, 3))
        Fp = F + scale * rng.normal(size=(50, 3, 3))
        dg = discrete_gradient(model, F, Fp)
        lhs = np.einsum("nij,nij->n", dg, Fp - F)
        rhs = model.G(Fp) - model.G(F)
        assert np.max(np.abs(lhs - rhs)) <= 1e-14 * max(1.0, scale)
        # consistency with the midpoint derivative
        assert np.max(np.abs(dg - model.DG(0.5 * (F + Fp)))) <= 10 * scale**2 + 1e-13


def test_discrete_gradient_is_symmetric():
    model = regularized_model(2)
    rng = np.random.default_rng(1)
    F, Fp = rng.normal(size=(2, 20, 2, 2))
    np.testing.assert_allclose(discrete_gradient(model, F, Fp), discrete_gradient(model, Fp, F), atol=1e-14)


def test_linear_wave_conserves_energy_200_steps():
    grid = TorusGrid((64,))
    model = quadratic_model(1)
    s = manufactured_linear_solution(grid, 0.0)
    tr = simulate(model, s, grid.spacing[0] / 4, 200)
    e = tr.energies(model)
    assert abs(e[-1] - e[0]) <= 1e-10


@pytest.mark.parametrize("model", [quadratic_model(1), regularized_model(1)])
def test_inviscid_drift_1000_steps(model):
    grid = TorusGrid((64,))
    s = manufactured_linear_solution(grid, 0.0, amplitude=0.8)
    tr = simulate(model, s, grid.spacing[0] / 4, 1000)
    e = tr.energies(model)
    assert np.max(np.abs(e - e[0])) <= 1e-9
    assert np.all(np.diff(tr.E) <= 1e-10)
    assert np.all(tr.E >= e - 1e-10)


def test_viscous_energy_strictly_decreases_and_matches_dissipation():
    model = regularized_model(2)
    s = smooth_state_2d()
    nu, dt = 0.01, 1 / 64
    tr = simulate(model, s, dt, 40, viscosity=nu)
    e = tr.energies(model)
    assert np.all(np.diff(e) < 0)
    # independent evaluation of nu dt int |grad v_mid|^2 with the field operators
    for n in range(len(tr) - 1):
        vm = TorusField(s.grid, 0.5 * (tr.states[n].v.values + tr.states[n + 1].v.values))
        g = gradient(vm).values
        expected = nu * dt * integrate(TorusField(s.grid, np.sum(g**2, axis=(0, 1))))
        assert abs((e[n] - e[n + 1]) - expected) <= 1e-12
    assert np.all(np.diff(tr.E) <= 0)
    assert np.all(tr.E >= e - 1e-10)


@pytest.mark.parametrize("model", [quadratic_model(2), regularized_model(2)])
def test_reversibility(model):
    s = smooth_state_2d()
    fwd = step(model, s, 1 / 64)
    back = step(model, fwd, -1 / 64)
    assert np.max(np.abs(back.v.values - s.v.values)) <= 1e-8
    assert np.max(np.abs(back.F.values - s.F.values)) <= 1e-8


def test_negative_dt_requires_inviscid():
    with pytest.raises(ParameterError):
        step(quadratic_model(2), smooth_state_2d(), -0.01, viscosity=0.1)
    with pytest.raises(ParameterError):
        step(quadratic_model(2), smooth_state_2d(), 0.0)


def test_simulate_single_step_reproduces_step():
    model = regularized_model(2)
    s = smooth_state_2d()
    tr = simulate(model, s, 0.01, 1, viscosity=0.02)
    direct = step(model, s, 0.01, viscosity=0.02)
    np.testing.assert_array_equal(tr.states[1].v.values, direct.v.values)
    np.testing.assert_array_equal(tr.states[1].F.values, direct.F.values)
    assert tr.E[0] == energy(model, s)
    with pytest.raises(ParameterError):
        simulate(model, s, 0.01, 0)


def test_convergence_order():
    model = quadratic_model(1)
    errs = []
    for n in (32, 64, 128):
        grid = TorusGrid((n,))
        dt = grid.spacing[0] / 4
        tr = simulate(model, manufactured_linear_solution(grid, 0.0), dt, int(round(0.5 / dt)))
        errs.append(l2_error(tr.states[-1], manufactured_linear_solution(grid, 0.5), grid))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9)
    assert errs[0] / errs[1] >= 3.6 and errs[1] / errs[2] >= 3.6


def test_manufactured_solution_properties():
    grid = TorusGrid((32,))
    (x,) = grid.coordinates()
    s0 = manufactured_linear_solution(grid, 0.0, amplitude=0.7)
    np.testing.assert_allclose(s0.v.values[0], 0.7 * np.sin(2 * np.pi * x), atol=1e-15)
    np.testing.assert_array_equal(s0.F.values, 0.0)
    # analytic substitution: v_t = F_x and F_t = v_x
    t, k, c = 0.3, 2 * np.pi, 0.7
    v_t = -c * k * np.sin(k * t) * np.sin(k * x)
    F_x = -c * k * np.sin(k * t) * np.sin(k * x)
    F_t = c * k * np.cos(k * t) * np.cos(k * x)
    v_x = c * k * np.cos(k * t) * np.cos(k * x)
    assert np.all(v_t - F_x == 0) and np.all(F_t - v_x == 0)
    with pytest.raises(ParameterError):
        manufactured_linear_solution(TorusGrid((8, 8)), 0.0)


def test_oscillatory_data():
    grid = TorusGrid((16, 8))
    s = oscillatory_initial_data(grid, 0.0, 4)
    np.testing.assert_array_equal(s.F.values, np.broadcast_to(np.eye(2)[..., None, None], s.F.values.shape))
    s = oscillatory_initial_data(grid, 0.3, 4)
    a = np.eye(2) + 0.3 * np.diag([1.0, 0.0])
    b = np.eye(2) - 0.3 * np.diag([1.0, 0.0])
    cells = s.F.cellwise()
    is_a = np.all(cells == a, axis=(1, 2))
    is_b = np.all(cells == b, axis=(1, 2))
    assert np.all(is_a | is_b) and is_a.sum() == is_b.sum()
    block_mean = s.F.values[:, :, :4].mean(axis=(2, 3))
    np.testing.assert_allclose(block_mean, 0.5 * (a + b), atol=1e-15)
    np.testing.assert_array_equal(s.v.values, 0.0)
    for bad in (3, 5, 1, 32):
        with pytest.raises(ParameterError):
            oscillatory_initial_data(grid, 0.3, bad)


def test_dt_above_cap_warns_and_substeps():
    model = quadratic_model(1)
    grid = TorusGrid((16,))
    s = manufactured_linear_solution(grid, 0.0)
    cap = stability_cap(model, grid)
    with pytest.warns(StabilityWarning):
        big = step(model, s, 2.5 * cap)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        small = s
        for _ in range(3):
            small = step(model, small, 2.5 * cap / 3)
    np.testing.assert_allclose(big.v.values, small.v.values, atol=1e-13)
    assert big.t == pytest.approx(2.5 * cap)


def test_nonconvergence_reports_residual():
    model = regularized_model(2)
    with pytest.raises(NonConvergenceError) as info:
        step(model, smooth_state_2d(), 1 / 64, maxiter=0)
    assert info.value.residual > 1e-11
    with pytest.raises(NonConvergenceError) as info:
        simulate(model, smooth_state_2d(), 1 / 64, 2, maxiter=0)
    assert info.value.step_index == 0


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**16), amp=st.floats(0.01, 1.0))
def test_energy_conservation_property(seed, amp):
    rng = np.random.default_rng(seed)
    grid = TorusGrid((8, 8))
    v = amp * rng.normal(size=(2, 8, 8))
    F = np.eye(2)[..., None, None] + amp * rng.normal(size=(2, 2, 8, 8))
    s = ElasticState(TorusField(grid, v), TorusField(grid, F))
    model = regularized_model(2)
    tr = simulate(model, s, 0.02, 5)
    e = tr.energies(model)
    assert np.max(np.abs(e - e[0])) <= 1e-12 * max(1.0, e[0])
