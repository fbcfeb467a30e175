"""
Periodic grids and central-difference operators
===============================================

Fields live on a uniform cell-centred grid of the flat torus in one to
three dimensions. Values are stored component-major: a scalar field has
shape ``extent``, a vector field ``(n,) + extent`` and a matrix field
``(n, m) + extent``.

Derivatives use the second-order central stencil

.. math::

    (D_a f)_i = \\frac{f_{i + e_a} - f_{i - e_a}}{2 h_a},

which is skew-adjoint with respect to the cell-volume inner product. The
discrete summation-by-parts identity

.. math::

    \\sum_{\\text{cells}} (f \\cdot \\operatorname{div} G
    + \\nabla f : G) \\, |K| = 0

therefore holds to rounding error, and distinct stencils commute, so the
curl of a gradient vanishes identically.

Index conventions: ``gradient(f)[i, j] = d f_i / d x_j`` and the
divergence of a matrix field is taken row-wise,
``divergence(A)[i] = sum_j d A_ij / d x_j``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError, RankError, ShapeError

__all__ = [
    "LEVI_CIVITA",
    "TorusGrid",
    "TorusField",
    "gradient",
    "divergence",
    "laplacian",
    "curl",
    "cross",
    "cross_matrix",
    "integrate",
    "shift",
    "inner",
]


def _levi_civita():
    eps = np.zeros((3, 3, 3))
    for (i, j, k), sign in {(0, 1, 2): 1, (1, 2, 0): 1, (2, 0, 1): 1,
                            (0, 2, 1): -1, (2, 1, 0): -1, (1, 0, 2): -1}.items():
        eps[i, j, k] = sign
    return eps


#: Levi-Civita symbol as a dense ``(3, 3, 3)`` array.
LEVI_CIVITA = _levi_civita()


@dataclass(frozen=True)
class TorusGrid:
    """Uniform cell-centred grid on a periodic box.

    Parameters
    ----------
    extent : tuple of int
        Number of cells per axis; one to three axes, each at least 4.
    period : float or tuple of float, optional
        Side length per axis. Default 1.
    """

    extent: tuple
    period: tuple = 1.0

    def __post_init__(self):
        extent = tuple(int(n) for n in np.atleast_1d(self.extent))
        if not 1 <= len(extent) <= 3:
            raise ParameterError(f"grid dimension must be 1, 2 or 3, got {len(extent)}")
        if any(n < 4 for n in extent):
            raise ParameterError(f"every extent must be >= 4, got {extent}")
        period = np.broadcast_to(np.asarray(self.period, dtype=float), (len(extent),))
        if not np.all(np.isfinite(period)) or np.any(period <= 0):
            raise ParameterError(f"periods must be positive, got {tuple(period)}")
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "period", tuple(float(p) for p in period))

    @property
    def dim(self):
        return len(self.extent)

    @property
    def spacing(self):
        """Cell width per axis."""
        return tuple(p / n for p, n in zip(self.period, self.extent))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def volume(self):
        return float(np.prod(self.period))

    @property
    def size(self):
        """Total number of cells."""
        return int(np.prod(self.extent))

    def coordinates(self):
        """Cell-centre coordinates, one array of shape ``extent`` per axis."""
        axes = [(np.arange(n) + 0.5) * h for n, h in zip(self.extent, self.spacing)]
        return np.meshgrid(*axes, indexing="ij")

    def coarsen(self, block):
        """Grid whose cells are ``block``-wide groups of this grid's cells."""
        if block < 1 or any(n % block for n in self.extent):
            raise ParameterError(f"block {block} must divide every extent {self.extent}")
        return TorusGrid(tuple(n // block for n in self.extent), self.period)


class TorusField:
    """Immutable sampled field on a :class:`TorusGrid`.

    Parameters
    ----------
    grid : TorusGrid
    values : array_like
        Array of shape ``component_shape + grid.extent`` with at most two
        component axes.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid, values):
        values = np.array(values, dtype=float)
        ncomp = values.ndim - grid.dim
        if ncomp < 0 or ncomp > 2 or values.shape[ncomp:] != grid.extent:
            raise ShapeError(
                f"values of shape {values.shape} do not fit grid extent {grid.extent}"
            )
        if not np.all(np.isfinite(values)):
            raise ParameterError("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    def __setattr__(self, name, value):
        raise AttributeError("TorusField is immutable")

    @property
    def rank(self):
        """0 for scalars, 1 for vectors, 2 for matrices."""
        return self.values.ndim - self.grid.dim

    @property
    def component_shape(self):
        return self.values.shape[: self.rank]

    def cellwise(self):
        """Values reshaped to ``(ncells,) + component_shape`` (a copy)."""
        v = np.moveaxis(self.values, range(self.rank), range(-self.rank, 0)) if self.rank else self.values
        return v.reshape((self.grid.size,) + self.component_shape)

    @classmethod
    def from_cellwise(cls, grid, cells):
        """Inverse of :meth:`cellwise`."""
        cells = np.asarray(cells, dtype=float)
        comp = cells.shape[1:]
        v = cells.reshape(grid.extent + comp)
        v = np.moveaxis(v, range(grid.dim, grid.dim + len(comp)), range(len(comp)))
        return cls(grid, v)

    @classmethod
    def zeros(cls, grid, component_shape=()):
        return cls(grid, np.zeros(tuple(component_shape) + grid.extent))

    def __repr__(self):
        return f"TorusField(rank={self.rank}, components={self.component_shape}, extent={self.grid.extent})"


def _diff(values, grid, axis_offset, a):
    h = grid.spacing[a]
    ax = axis_offset + a
    return (np.roll(values, -1, axis=ax) - np.roll(values, 1, axis=ax)) / (2.0 * h)


def gradient(f):
    """Central-difference gradient, appending one derivative axis.

    Parameters
    ----------
    f : TorusField
        Scalar or vector field.

    Returns
    -------
    TorusField
        Vector field ``(dim,)`` for scalar input, matrix field
        ``(n, dim)`` with entries ``d f_i / d x_j`` for vector input.
    """
    if f.rank > 1:
        raise RankError("gradient of a matrix field is not supported")
    r = f.rank
    parts = [_diff(f.values, f.grid, r, a) for a in range(f.grid.dim)]
    return TorusField(f.grid, np.stack(parts, axis=r))


def divergence(f):
    """Central-difference divergence, contracting the last component axis.

    Parameters
    ----------
    f : TorusField
        Vector field with ``dim`` components, or matrix field with
        ``dim`` columns (row-wise divergence).

    Returns
    -------
    TorusField
        Field of one lower rank.
    """
    if f.rank == 0:
        raise RankError("divergence of a scalar field is not supported")
    if f.component_shape[-1] != f.grid.dim:
        raise ShapeError("last component axis must have length equal to the grid dimension")
    r = f.rank
    out = 0.0
    for a in range(f.grid.dim):
        out = out + _diff(f.values[(slice(None),) * (r - 1) + (a,)], f.grid, r - 1, a)
    return TorusField(f.grid, out)


def laplacian(f):
    """Wide-stencil Laplacian ``divergence(gradient(f))`` for scalar or vector ``f``."""
    return divergence(gradient(f))


def curl(f):
    """Central-difference curl on a three-dimensional grid.

    For a vector field ``(curl f)_i = sum eps_ijk d_j f_k``; for a matrix
    field the curl acts on rows, ``(curl A)_ij = sum eps_jkl d_k A_il``.
    """
    if f.grid.dim != 3:
        raise DimensionError("curl requires a three-dimensional grid")
    if f.rank not in (1, 2) or f.component_shape[-1] != 3:
        raise RankError("curl needs a vector or matrix field with three columns")
    if f.rank == 1:
        # g[k, j] = d_j f_k
        g = gradient(f).values
        return TorusField(f.grid, np.einsum("ijk,kj...->i...", LEVI_CIVITA, g))
    dA = np.stack([_diff(f.values, f.grid, 2, a) for a in range(3)], axis=0)
    # dA[k, i, l] = d_k A_il
    return TorusField(f.grid, np.einsum("jkl,kil...->ij...", LEVI_CIVITA, dA))


def _values(x):
    return x.values if isinstance(x, TorusField) else np.asarray(x, dtype=float)


def cross(a, b):
    """Pointwise cross product of two three-component vector fields."""
    grid = a.grid if isinstance(a, TorusField) else b.grid
    va, vb = _values(a), _values(b)
    if va.shape[0] != 3 or vb.shape[0] != 3:
        raise RankError("cross product needs three-component vectors")
    return TorusField(grid, np.einsum("ikl,k...,l...->i...", LEVI_CIVITA, va, vb))


def cross_matrix(a, A):
    """Pointwise product ``(a x A)_ij = sum eps_ikl a_k A_lj``."""
    grid = a.grid if isinstance(a, TorusField) else A.grid
    va, vA = _values(a), _values(A)
    if va.shape[0] != 3 or vA.shape[0] != 3:
        raise RankError("cross product needs three-row operands")
    return TorusField(grid, np.einsum("ikl,k...,lj...->ij...", LEVI_CIVITA, va, vA))


def integrate(f):
    """Midpoint quadrature of a scalar field over the torus."""
    if f.rank != 0:
        raise RankError("integrate expects a scalar field")
    return float(np.sum(f.values) * f.grid.cell_volume)


def inner(f, g):
    """L2 inner product of two fields of equal shape, summed over components."""
    if f.values.shape != g.values.shape:
        raise ShapeError("fields must have identical shapes")
    return float(np.sum(f.values * g.values) * f.grid.cell_volume)


def shift(f, cells, axis=0):
    """Translate a field by a whole number of cells along one axis."""
    return TorusField(f.grid, np.roll(f.values, cells, axis=f.rank + axis))
