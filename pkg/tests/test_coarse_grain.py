from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from genesol.coarse_grain import (
    YoungMeasureField,
    block_cells,
    coarsen,
    measure_moment,
    merge_atoms,
)
from genesol.energy import quadratic_model, regularized_model
from genesol.errors import ParameterError
from genesol.integrator import ElasticState, energy, oscillatory_initial_data
from genesol.torus import TorusField, TorusGrid, integrate


def eta(model, v, F):
    return 0.5 * np.sum(v**2, axis=-1) + model.G(F)


def random_state(grid, seed):
    rng = np.random.default_rng(seed)
    d = grid.dim
    return ElasticState(
        TorusField(grid, rng.normal(size=(d,) + grid.extent)),
        TorusField(grid, np.eye(d)[(...,) + (None,) * d] + 0.5 * rng.normal(size=(d, d) + grid.extent)),
    )


def loop_block_mean(values, block, coarse_extent):
    # explicit loops over coarse cells and their fine members
    comp = values.shape[: values.ndim - len(coarse_extent)]
    out = np.zeros(comp + tuple(coarse_extent))
    for idx in np.ndindex(*coarse_extent):
        members = [
            tuple(i * block + o for i, o in zip(idx, off))
            for off in np.ndindex(*(block,) * len(coarse_extent))
        ]
        acc = sum(values[(...,) + m] for m in members)
        out[(...,) + idx] = acc / len(members)
    return out


def test_block_one_is_identity():
    grid = TorusGrid((8, 6))
    model = regularized_model(2)
    s = random_state(grid, 0)
    c = coarsen(model, s, 1)
    np.testing.assert_array_equal(c.mean.v.values, s.v.values)
    np.testing.assert_array_equal(c.mean.F.values, s.F.values)
    assert np.all(c.measure.atom_counts == 1)
    np.testing.assert_array_equal(c.measure.weights, 1.0)
    np.testing.assert_array_equal(c.defect.values, 0.0)
    np.testing.assert_array_equal(c.surplus.values, 0.0)


def test_mean_matches_loop_oracle():
    grid = TorusGrid((8, 12))
    model = regularized_model(2)
    s = random_state(grid, 1)
    c = coarsen(model, s, 2)
    np.testing.assert_allclose(c.mean.v.values, loop_block_mean(s.v.values, 2, (4, 6)), atol=1e-14)
    np.testing.assert_allclose(c.mean.F.values, loop_block_mean(s.F.values, 2, (4, 6)), atol=1e-14)


def test_block_cells_order():
    grid = TorusGrid((8, 8))
    f = TorusField(grid, np.arange(64.0).reshape(8, 8))
    b = block_cells(f, 2)
    # coarse cell (0, 1) holds fine cells (0,2), (0,3), (1,2), (1,3)
    np.testing.assert_array_equal(b[1], [2, 3, 10, 11])


def test_two_value_oscillation():
    grid = TorusGrid((32, 16))
    model = regularized_model(2)
    s = oscillatory_initial_data(grid, 0.3, 4)
    a = np.diag([1.3, 1.0])
    b = np.diag([0.7, 1.0])
    c = coarsen(model, s, 4)
    mid = 0.5 * (a + b)
    np.testing.assert_allclose(c.mean.F.cellwise(), np.broadcast_to(mid, (32, 2, 2)), atol=1e-15)
    for cell in range(c.grid.size):
        w, v, F = c.measure.cell(cell)
        assert np.isclose(w[np.all(F == a, axis=(1, 2))].sum(), 0.5)
        assert np.isclose(w[np.all(F == b, axis=(1, 2))].sum(), 0.5)
    R = 0.5 * (model.DG(a) + model.DG(b)) - model.DG(mid)
    np.testing.assert_allclose(c.defect.cellwise(), np.broadcast_to(R, (32, 2, 2)), atol=1e-15)
    e = measure_moment(c.measure, lambda v, F: eta(model, v, F)).values
    np.testing.assert_allclose(e, 0.5 * (model.G(a) + model.G(b)), atol=1e-15)
    merged = merge_atoms(c.measure)
    assert np.all(merged.atom_counts == 2)
    np.testing.assert_allclose(np.sort(merged.cell(0)[0]), [0.5, 0.5], atol=1e-15)


@pytest.mark.parametrize("block", [2, 4])
def test_moment_identities(block):
    grid = TorusGrid((16, 16))
    model = regularized_model(2)
    s = random_state(grid, block)
    c = coarsen(model, s, block)
    one = measure_moment(c.measure, lambda v, F: np.ones(len(v))).values
    assert np.max(np.abs(one - 1)) <= 1e-12
    assert np.max(np.abs(measure_moment(c.measure, lambda v, F: v).values - c.mean.v.values)) <= 1e-12
    assert np.max(np.abs(measure_moment(c.measure, lambda v, F: F).values - c.mean.F.values)) <= 1e-12
    dg = measure_moment(c.measure, lambda v, F: model.DG(F)).values
    dg_mean = np.moveaxis(model.DG(np.moveaxis(c.mean.F.values, (0, 1), (-2, -1))), (-2, -1), (0, 1))
    assert np.max(np.abs(dg - dg_mean - c.defect.values)) <= 1e-12
    e_nu = integrate(measure_moment(c.measure, lambda v, F: eta(model, v, F)))
    assert abs(e_nu - energy(model, c.mean) - integrate(c.surplus)) <= 1e-12
    # the coarse energy of the measure equals the fine energy
    assert abs(e_nu - energy(model, s)) <= 1e-12
    assert c.surplus.values.min() >= -1e-12


def test_quadratic_model_has_no_defect():
    grid = TorusGrid((8, 8))
    c = coarsen(quadratic_model(2), random_state(grid, 7), 2)
    assert np.max(np.abs(c.defect.values)) <= 1e-15
    assert c.surplus.values.min() > 0


def test_divisibility_enforced():
    grid = TorusGrid((12,))
    s = ElasticState(TorusField.zeros(grid, (1,)), TorusField.zeros(grid, (1, 1)))
    with pytest.raises(ParameterError):
        coarsen(quadratic_model(1), s, 5)
    with pytest.raises(ParameterError):
        coarsen(quadratic_model(1), s, 0)


def test_measure_validation():
    grid = TorusGrid((4,))
    v = np.zeros((4, 1))
    F = np.zeros((4, 1, 1))
    with pytest.raises(ParameterError):
        YoungMeasureField(grid, [1, 1, 1, 0.5], v, F, np.arange(5))
    with pytest.raises(ParameterError):
        YoungMeasureField(grid, np.ones(4), v, F, np.arange(5), gamma=[0, 0, -1, 0])
    m = YoungMeasureField(grid, np.ones(4), v, F, np.arange(5), gamma=[0, 0, 2, 0])
    assert m.gamma[2] == 2


def test_merge_keeps_distinct_atoms():
    grid = TorusGrid((4,))
    cells = [([0.25, 0.25, 0.5], [[0.0], [1e-12], [1.0]], np.zeros((3, 1, 1)))] * 4
    m = YoungMeasureField.from_cells(grid, cells)
    merged = merge_atoms(m)
    assert np.all(merged.atom_counts == 2)
    w, v, _ = merged.cell(0)
    np.testing.assert_allclose(w, [0.5, 0.5])
    np.testing.assert_allclose(measure_moment(merged, lambda v, F: v).values,
                               measure_moment(m, lambda v, F: v).values, atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**16), scale=st.floats(0.01, 10.0))
def test_jensen_surplus(seed, scale):
    rng = np.random.default_rng(seed)
    grid = TorusGrid((8, 8))
    s = ElasticState(
        TorusField(grid, scale * rng.normal(size=(2, 8, 8))),
        TorusField(grid, scale * rng.normal(size=(2, 2, 8, 8))),
    )
    model = regularized_model(2, 0.1)
    c = coarsen(model, s, 2)
    assert c.surplus.values.min() >= -1e-12
