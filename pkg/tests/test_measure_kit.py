from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from genesol.errors import ConditioningError, DomainError, InfeasibleError, ParameterError
from genesol.measure_kit import (
    DefectField,
    InterfaceData,
    build_varifold,
    gaussian_measure,
    match_moments,
    recover_defect,
    surrogate_norm,
)
from genesol.torus import TorusField, TorusGrid, gradient


def square(y):
    return np.sum(y**2, axis=-1)


def half_square(y):
    return 0.5 * np.sum(y**2, axis=-1)


def zero_map(y):
    return np.zeros(y.shape[:-1] + (1,))


def check_moments(res, eta, g, mean, g_target, target):
    w, atoms = res.weights, res.atoms
    assert np.all(w > 0)
    assert abs(w.sum() - 1) <= 1e-12
    assert np.max(np.abs(w @ atoms - mean)) <= 1e-10
    assert np.max(np.abs(w @ np.asarray(g(atoms)).reshape(len(w), -1) - g_target)) <= 1e-10
    assert abs(w @ eta(atoms) + res.gamma - target) <= 1e-8
    assert res.gamma >= 0


# ---------------------------------------------------------------------------
# moment matching


def test_dirac_case():
    mean = np.array([0.4, -1.2])
    res = match_moments(half_square, lambda y: y**3, mean, mean**3, 0.0, 3)
    assert res.weights.tolist() == [1.0]
    np.testing.assert_array_equal(res.atoms[0], mean)
    assert res.gamma == 0.0


def test_symmetric_scalar_two_atoms():
    res = match_moments(square, zero_map, [0.0], [0.0], 1.0, 3)
    order = np.argsort(res.atoms[:, 0])
    np.testing.assert_allclose(res.atoms[order, 0], [-1.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(res.weights[order], [0.5, 0.5], atol=1e-12)
    assert res.gamma == 0.0
    assert max(res.residuals.values()) <= 1e-10


def test_linear_elastic_smoke():
    # g = DG for G = |F|^2/2 is the identity, so any defect goes to gamma or spread
    F = np.array([1.0, 0.2, -0.3, 0.9])
    res = match_moments(half_square, lambda y: y, F, F, 0.7, 8)
    check_moments(res, half_square, lambda y: y, F, F, half_square(F) + 0.7)


def test_linear_g_with_unreachable_target_goes_infeasible():
    F = np.array([1.0, 0.0])
    with pytest.raises(InfeasibleError) as info:
        match_moments(half_square, lambda y: y, F, F + 0.1, 0.0, 8)
    assert info.value.residual > 1e-10


def test_nonlinear_g_with_witness_atoms():
    rng = np.random.default_rng(0)
    ys = rng.normal(size=(6, 2))
    w = np.full(6, 1 / 6)

    def g(y):
        return y + 0.1 * y**3

    mean = w @ ys
    gt = w @ g(ys)
    slack = w @ half_square(ys) - half_square(mean) - np.linalg.norm(gt - g(mean))
    res = match_moments(half_square, g, mean, gt, max(slack, 0.0) + 0.25, 10, extra_atoms=ys)
    check_moments(res, half_square, g, mean, gt,
                  half_square(mean) + np.linalg.norm(gt - g(mean)) + max(slack, 0.0) + 0.25)


def test_match_moments_preconditions():
    with pytest.raises(ParameterError):
        match_moments(square, zero_map, [0.0], [0.0], -1.0, 3)
    with pytest.raises(ParameterError):
        match_moments(square, zero_map, [0.0], [0.0], 1.0, 2)


@settings(max_examples=25, deadline=None)
@given(m=st.floats(-2, 2), surplus=st.floats(0, 5))
def test_scalar_moment_property(m, surplus):
    res = match_moments(square, zero_map, [m], [0.0], surplus, 3)
    check_moments(res, square, zero_map, [m], [0.0], m * m + surplus)


# ---------------------------------------------------------------------------
# defect recovery


def sine_basis(grid, modes):
    x, y = grid.coordinates()
    out = []
    for (kx, ky, comp) in modes:
        psi = np.zeros((2,) + grid.extent)
        psi[comp] = np.sin(2 * np.pi * (kx * x + ky * y))
        out.append(gradient(TorusField(grid, psi)))
    return out


def test_zero_residuals_give_zero_defect():
    grid = TorusGrid((8, 8))
    d = recover_defect([0.0, 0.0], sine_basis(grid, [(1, 0, 0), (0, 1, 1)]))
    assert np.all(d.R.values == 0) and np.all(d.raw.values == 0)


def test_single_mode_closed_form():
    grid = TorusGrid((16, 16))
    (b,) = sine_basis(grid, [(1, 1, 0)])
    r = 0.37
    d = recover_defect([r], [b])
    # normal equation oracle: R = -r b / <b, b>
    bb = np.sum(b.values**2) * grid.cell_volume
    np.testing.assert_allclose(d.raw.values, -r * b.values / bb, atol=1e-14)


@pytest.mark.parametrize("kind", ["L2", "trace_d"])
def test_round_trip_and_minimality(kind):
    rng = np.random.default_rng(3)
    grid = TorusGrid((8, 8, 8))
    x, y, z = grid.coordinates()
    basis = []
    for k, comp in [((1, 0, 0), 0), ((0, 1, 0), 1), ((1, 1, 0), 2), ((0, 1, 1), 0)]:
        psi = np.zeros((3,) + grid.extent)
        psi[comp] = np.cos(2 * np.pi * (k[0] * x + k[1] * y + k[2] * z))
        basis.append(gradient(TorusField(grid, psi)))
    r = rng.normal(size=len(basis))
    dvals = rng.normal(size=(3,) + grid.extent)
    director = TorusField(grid, dvals / np.linalg.norm(dvals, axis=0))
    kw = dict(director=director, k=1.5) if kind == "trace_d" else {}
    d = recover_defect(r, basis, norm_kind=kind, **kw)
    pair = np.array([-np.sum(d.raw.values * b.values) * grid.cell_volume for b in basis])
    assert np.max(np.abs(pair - r)) <= 1e-10
    base = surrogate_norm(d.raw, kind, **kw)
    B = np.array([b.values.ravel() for b in basis])
    for _ in range(5):
        noise = rng.normal(size=d.raw.values.shape).ravel()
        # remove the components seen by the constraints
        null = noise - B.T @ np.linalg.lstsq(B.T, noise, rcond=None)[0]
        pert = TorusField(grid, d.raw.values + 0.1 * null.reshape(d.raw.values.shape))
        pair = np.array([-np.sum(pert.values * b.values) * grid.cell_volume for b in basis])
        assert np.max(np.abs(pair - r)) <= 1e-10
        assert surrogate_norm(pert, kind, **kw) > base
    assert d.projection_distance >= 0
    lam = np.linalg.eigvalsh(np.moveaxis(d.R.values, (0, 1), (-2, -1)))
    assert lam.min() >= -1e-10


def test_dependent_basis_rejected():
    grid = TorusGrid((8, 8))
    b = sine_basis(grid, [(1, 0, 0)])
    with pytest.raises(ConditioningError):
        recover_defect([1.0, 1.0], b + b)


# ---------------------------------------------------------------------------
# varifolds


def test_rank_one_defect_gives_antipodal_pair():
    grid = TorusGrid((4, 4, 4))
    n = np.array([1.0, 2.0, 2.0]) / 3.0
    c = 2.5
    R = c * np.outer(n, n)[..., None, None, None] * np.ones(grid.extent)
    V = build_varifold(DefectField.from_matrix(TorusField(grid, R)))
    assert len(V) == 2 * grid.size
    cell0 = V.cells == 0
    dirs = V.directions[cell0]
    np.testing.assert_allclose(np.abs(dirs @ n), 1.0, atol=1e-12)
    np.testing.assert_allclose(dirs[0], -dirs[1], atol=1e-15)
    np.testing.assert_allclose(V.masses[cell0], c / 2 * grid.cell_volume, atol=1e-15)
    np.testing.assert_allclose(V.normalized_defect_weights()[cell0], 0.5, atol=1e-12)


def test_zero_defect_gives_empty_varifold():
    grid = TorusGrid((4, 4))
    V = build_varifold(TorusField.zeros(grid, (2, 2)))
    assert len(V) == 0 and V.total_mass() == 0


def test_non_psd_defect_rejected():
    grid = TorusGrid((4, 4))
    R = np.zeros((2, 2) + grid.extent)
    R[0, 0] = -1.0
    with pytest.raises(DomainError):
        build_varifold(TorusField(grid, R))


def stripe_interface(grid):
    x = grid.coordinates()[0]
    return InterfaceData.from_indicator(TorusField(grid, (x < 0.5).astype(float)))


def test_mass_accounting_and_first_moment():
    rng = np.random.default_rng(5)
    grid = TorusGrid((8, 8))
    A = rng.normal(size=(2, 2) + grid.extent)
    R = np.einsum("ik...,jk...->ij...", A, A)
    iface = stripe_interface(grid)
    V = build_varifold(TorusField(grid, R), iface)
    total = np.sum(np.trace(R)) * grid.cell_volume + iface.masses.sum()
    assert abs(V.total_mass() - total) <= 1e-12
    defect_only = build_varifold(TorusField(grid, R))
    assert np.max(np.abs(defect_only.first_moment())) <= 1e-12
    # interface cells reproduce grad chi
    g = gradient(iface.chi).cellwise() * grid.cell_volume
    np.testing.assert_allclose(V.first_moment(), g, atol=1e-12)


def test_interface_validation():
    grid = TorusGrid((4, 4))
    with pytest.raises(ParameterError):
        InterfaceData.from_indicator(TorusField(grid, np.full(grid.extent, 0.5)))
    iface = stripe_interface(grid)
    np.testing.assert_allclose(np.linalg.norm(iface.normals, axis=1), 1.0)
    assert np.all(iface.masses > 0)
    assert abs(iface.vector_measure().sum(axis=0)).max() <= 1e-12


# ---------------------------------------------------------------------------
# Gaussian construction


def test_gaussian_zero_covariance():
    A = np.arange(9.0).reshape(3, 3)
    mu = gaussian_measure(A, np.zeros((3, 3)), 50, seed=1)
    assert np.all(mu.states == A)
    np.testing.assert_allclose(mu.weights.sum(), 1.0)


def test_gaussian_monte_carlo_moments():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(3, 3))
    C = rng.normal(size=(3, 3))
    B = C @ C.T / 3
    mu = gaussian_measure(A, B, 100_000, seed=7)
    first = mu.weights @ mu.states.reshape(len(mu.weights), -1)
    assert np.max(np.abs(first.reshape(3, 3) - A)) <= 0.02
    second = np.einsum("n,nki,nkj->ij", mu.weights, mu.states, mu.states)
    assert np.max(np.abs(second - (A.T @ A + B))) <= 0.05
    iso = gaussian_measure(np.zeros((3, 3)), np.eye(3), 100_000, seed=11)
    assert np.max(np.abs(np.einsum("n,nki,nkj->ij", iso.weights, iso.states, iso.states) - np.eye(3))) <= 0.05


def test_gaussian_is_seeded():
    a = gaussian_measure(np.eye(3), np.eye(3), 10, seed=3)
    b = gaussian_measure(np.eye(3), np.eye(3), 10, seed=3)
    np.testing.assert_array_equal(a.states, b.states)


def test_gaussian_rejects_indefinite_covariance():
    with pytest.raises(DomainError):
        gaussian_measure(np.eye(3), np.diag([1.0, -1.0, 1.0]), 10)
    with pytest.raises(ParameterError):
        gaussian_measure(np.eye(3), np.eye(3), 0)
