"""
Block averaging of fine states into measure-valued data
=======================================================

A fine state is grouped into blocks of ``block**dim`` cells. Each block
becomes one coarse cell carrying

* the mean state ``(v_bar, F_bar)``,
* the empirical measure with one equally weighted atom per fine cell,
* the defect ``R = <nu, DG(S)> - DG(F_bar)``,
* the energy surplus ``<nu, eta> - eta(v_bar, F_bar)`` with
  ``eta(s, S) = |s|^2 / 2 + G(S)``.

Atoms of all cells are stored in flat arrays with offsets, so moments of
arbitrary functions are evaluated in one vectorised call followed by a
segmented sum.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .integrator import ElasticState
from .torus import TorusField

__all__ = [
    "YoungMeasureField",
    "CoarseData",
    "coarsen",
    "coarsen_trajectory",
    "measure_moment",
    "merge_atoms",
    "block_cells",
]

WEIGHT_TOL = 1e-12
MERGE_TOL = 1e-10


class YoungMeasureField:
    """Per-cell atomic probability measures on state space.

    Parameters
    ----------
    grid : TorusGrid
        Coarse grid; one measure per cell in C order.
    weights : array_like, shape (natoms,)
        Positive atom weights, concatenated over cells.
    v_atoms : array_like, shape (natoms, d)
    F_atoms : array_like, shape (natoms, d, d)
    offsets : array_like of int, shape (ncells + 1,)
        Atoms of cell ``c`` are ``offsets[c]:offsets[c + 1]``.
    gamma : array_like, shape (ncells,), optional
        Nonnegative singular mass per cell. Defaults to zero.
    """

    def __init__(self, grid, weights, v_atoms, F_atoms, offsets, gamma=None):
        weights = np.asarray(weights, dtype=float)
        v_atoms = np.asarray(v_atoms, dtype=float)
        F_atoms = np.asarray(F_atoms, dtype=float)
        offsets = np.asarray(offsets, dtype=np.int64)
        d = grid.dim
        n = weights.shape[0]
        if v_atoms.shape != (n, d) or F_atoms.shape != (n, d, d):
            raise ShapeError("atom arrays must have shapes (n, d) and (n, d, d)")
        if offsets.shape != (grid.size + 1,) or offsets[0] != 0 or offsets[-1] != n:
            raise ShapeError("offsets must delimit every cell of the grid")
        if np.any(np.diff(offsets) < 1):
            raise ParameterError("every cell needs at least one atom")
        if np.any(weights <= 0) or np.any(weights > 1 + WEIGHT_TOL):
            raise ParameterError("atom weights must lie in (0, 1]")
        sums = np.add.reduceat(weights, offsets[:-1])
        if np.max(np.abs(sums - 1.0)) > WEIGHT_TOL:
            raise ParameterError("weights must sum to one in every cell")
        gamma = np.zeros(grid.size) if gamma is None else np.asarray(gamma, dtype=float).ravel()
        if gamma.shape != (grid.size,) or np.any(gamma < 0):
            raise ParameterError("gamma must be a nonnegative value per cell")
        for a in (weights, v_atoms, F_atoms, offsets, gamma):
            a.setflags(write=False)
        self.grid = grid
        self.weights = weights
        self.v_atoms = v_atoms
        self.F_atoms = F_atoms
        self.offsets = offsets
        self.gamma = gamma

    @classmethod
    def from_cells(cls, grid, cells, gamma=None):
        """Build from a list of ``(weights, v_atoms, F_atoms)`` per cell."""
        if len(cells) != grid.size:
            raise ShapeError(f"expected {grid.size} cells, got {len(cells)}")
        counts = [len(np.atleast_1d(w)) for w, _, _ in cells]
        offsets = np.concatenate([[0], np.cumsum(counts)])
        d = grid.dim
        w = np.concatenate([np.atleast_1d(np.asarray(c[0], dtype=float)) for c in cells])
        v = np.concatenate([np.asarray(c[1], dtype=float).reshape(-1, d) for c in cells])
        F = np.concatenate([np.asarray(c[2], dtype=float).reshape(-1, d, d) for c in cells])
        return cls(grid, w, v, F, offsets, gamma)

    @classmethod
    def dirac(cls, state):
        """Point masses at the values of a state."""
        grid = state.grid
        n = grid.size
        return cls(grid, np.ones(n), state.v.cellwise(), state.F.cellwise(), np.arange(n + 1))

    @property
    def atom_counts(self):
        return np.diff(self.offsets)

    def cell(self, index):
        """``(weights, v_atoms, F_atoms)`` of one cell."""
        sl = slice(self.offsets[index], self.offsets[index + 1])
        return self.weights[sl], self.v_atoms[sl], self.F_atoms[sl]

    def cell_index(self):
        """Owning cell of every atom."""
        return np.repeat(np.arange(self.grid.size), self.atom_counts)

    def __len__(self):
        return self.grid.size

    def __repr__(self):
        return f"YoungMeasureField(cells={self.grid.size}, atoms={self.weights.size})"


@dataclass(frozen=True)
class CoarseData:
    """Coarse-grained description of one fine state.

    Attributes
    ----------
    mean : ElasticState
        Block averages on the coarse grid.
    measure : YoungMeasureField
    defect : TorusField
        Matrix field ``<nu, DG> - DG(F_bar)``.
    surplus : TorusField
        Scalar field ``<nu, eta> - eta(mean)``.
    """

    mean: ElasticState
    measure: YoungMeasureField
    defect: TorusField
    surplus: TorusField

    @property
    def grid(self):
        return self.mean.grid

    @property
    def t(self):
        return self.mean.t


def block_cells(field, block):
    """Group fine cells into coarse blocks.

    Returns an array of shape ``(ncoarse, block**dim) + component_shape``;
    coarse cells and the cells inside each block are both in C order.
    """
    grid = field.grid
    coarse = grid.coarsen(block)
    r = field.rank
    comp = field.component_shape
    d = grid.dim
    shape = comp + sum(((n, block) for n in coarse.extent), ())
    v = field.values.reshape(shape)
    outer = [r + 2 * a for a in range(d)]
    inner = [r + 2 * a + 1 for a in range(d)]
    v = np.transpose(v, outer + inner + list(range(r)))
    return v.reshape((coarse.size, block**d) + comp)


def _eta(model, v, F):
    return 0.5 * np.sum(v**2, axis=-1) + model.G(F)


def measure_moment(measure, f):
    """Per-cell expectation ``sum_j w_j f(s_j, S_j)``.

    Parameters
    ----------
    measure : YoungMeasureField
    f : callable
        ``f(v, F)`` with ``v`` of shape ``(n, d)`` and ``F`` of shape
        ``(n, d, d)``, returning an array with leading axis ``n``.

    Returns
    -------
    TorusField
        Field of the moment; its rank follows the output of ``f``.
    """
    vals = np.asarray(f(measure.v_atoms, measure.F_atoms), dtype=float)
    if vals.shape[:1] != measure.weights.shape:
        raise ShapeError("f must return one value per atom")
    w = measure.weights.reshape((-1,) + (1,) * (vals.ndim - 1))
    cells = np.add.reduceat(w * vals, measure.offsets[:-1], axis=0)
    return TorusField.from_cellwise(measure.grid, cells)


def coarsen(model, fine, block):
    """Coarse-grain a fine state by ``block``-wide averaging.

    Parameters
    ----------
    model : ConvexElasticModel
    fine : ElasticState
    block : int
        Must divide every extent.

    Returns
    -------
    CoarseData
    """
    block = int(block)
    grid = fine.grid
    coarse = grid.coarsen(block)
    vb = block_cells(fine.v, block)
    Fb = block_cells(fine.F, block)
    k = vb.shape[1]
    d = grid.dim
    v_mean = vb.mean(axis=1)
    F_mean = Fb.mean(axis=1)
    mean = ElasticState(
        TorusField.from_cellwise(coarse, v_mean), TorusField.from_cellwise(coarse, F_mean), fine.t
    )
    measure = YoungMeasureField(
        coarse,
        np.full(coarse.size * k, 1.0 / k),
        vb.reshape(-1, d),
        Fb.reshape(-1, d, d),
        np.arange(coarse.size + 1) * k,
    )
    defect = model.DG(Fb).mean(axis=1) - model.DG(F_mean)
    surplus = _eta(model, vb, Fb).mean(axis=1) - _eta(model, v_mean, F_mean)
    return CoarseData(
        mean, measure, TorusField.from_cellwise(coarse, defect), TorusField.from_cellwise(coarse, surplus)
    )


def coarsen_trajectory(model, traj, block):
    """Coarsen every node of a trajectory."""
    return [coarsen(model, s, block) for s in traj.states]


def merge_atoms(measure, tol=MERGE_TOL):
    """Merge atoms of one cell whose states differ by at most ``tol``.

    Merged atoms are replaced by their weighted average, so the first
    moment is preserved up to rounding.
    """
    cells = []
    for c in range(measure.grid.size):
        w, v, F = measure.cell(c)
        x = np.concatenate([v, F.reshape(len(w), -1)], axis=1)
        label = -np.ones(len(w), dtype=int)
        groups = []
        for i in range(len(w)):
            if label[i] >= 0:
                continue
            close = (label < 0) & (np.max(np.abs(x - x[i]), axis=1) <= tol)
            label[close] = len(groups)
            groups.append(np.flatnonzero(close))
        gw = np.array([w[g].sum() for g in groups])
        gv = np.array([w[g] @ v[g] for g in groups]) / gw[:, None]
        gF = np.array([np.tensordot(w[g], F[g], axes=1) for g in groups]) / gw[:, None, None]
        cells.append((gw, gv, gF))
    return YoungMeasureField.from_cells(measure.grid, cells, measure.gamma)
