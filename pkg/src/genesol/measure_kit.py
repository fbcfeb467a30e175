"""
Finite constructions of measures and defects
============================================

Four constructive counterparts of existence statements about generalized
solutions:

* :func:`match_moments` finds an atomic probability measure with prescribed
  mean, prescribed expectation of a nonlinear map ``g`` and prescribed
  energy, the energy gap going to a singular mass ``gamma``;
* :func:`recover_defect` finds the least-norm matrix field ``R`` whose
  pairings with a finite family of gradients match given residuals;
* :func:`build_varifold` splits a PSD defect into symmetric pairs of
  direction atoms and appends interface atoms;
* :func:`gaussian_measure` samples matrices with given mean and second
  moment.

Moment matching works on a finite candidate set and solves for the weights
with nonnegative least squares, so a failure means "infeasible on this
candidate set", which is reported with the best residual.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq, least_squares, nnls

from .errors import ConditioningError, DomainError, InfeasibleError, ParameterError, ShapeError
from .torus import TorusField, gradient

__all__ = [
    "AtomicMeasure",
    "MomentMatch",
    "DefectField",
    "InterfaceData",
    "Varifold",
    "match_moments",
    "recover_defect",
    "surrogate_norm",
    "build_varifold",
    "gaussian_measure",
]

MOMENT_TOL = 1e-10
ENERGY_TOL = 1e-8
SYM_TOL = 1e-12
PSD_TOL = 1e-10
WEIGHT_DROP = 1e-14


class AtomicMeasure(NamedTuple):
    """Weights and atom locations of a discrete probability measure."""

    weights: np.ndarray
    states: np.ndarray


class MomentMatch(NamedTuple):
    """Result of :func:`match_moments`.

    Attributes
    ----------
    weights : ndarray, shape (k,)
    atoms : ndarray, shape (k, n)
    gamma : float
        Singular mass absorbing the energy not carried by the atoms.
    residuals : dict
        Max-norm residuals of the normalization, mean, ``g`` and energy
        conditions.
    """

    weights: np.ndarray
    atoms: np.ndarray
    gamma: float
    residuals: dict


# ---------------------------------------------------------------------------
# moment matching


def _as_rows(values, k):
    return np.asarray(values, dtype=float).reshape(k, -1)


def _pair_radius(eta, mean, e, target):
    """Smallest ``t > 0`` with ``(eta(mean + t e) + eta(mean - t e)) / 2 = target``."""

    def gap(t):
        return 0.5 * (eta(mean + t * e) + eta(mean - t * e)) - target

    if gap(0.0) >= 0:
        return None
    hi = 1.0
    for _ in range(200):
        if gap(hi) > 0:
            return brentq(gap, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        hi *= 2.0
    return None


def _solve_weights(cands, eta_vals, g_vals, mean, g_target, target, with_gamma):
    n = mean.size
    k = cands.shape[0]
    rows = [np.ones((1, k)), cands.T, g_vals.T, eta_vals[None, :]]
    A = np.vstack(rows)
    b = np.concatenate([[1.0], mean, g_target, [target]])
    if with_gamma:
        gcol = np.zeros((A.shape[0], 1))
        gcol[-1] = 1.0
        A = np.hstack([A, gcol])
    scale = np.maximum(1.0, np.max(np.abs(A), axis=1))
    x, _ = nnls(A / scale[:, None], b / scale, maxiter=50 * A.shape[1])
    w = x[:k]
    gamma = float(x[k]) if with_gamma else 0.0
    return w, gamma


def _residuals(w, atoms, gamma, eta, g, mean, g_target, target):
    k = len(w)
    return {
        "normalization": abs(w.sum() - 1.0),
        "mean": float(np.max(np.abs(w @ atoms - mean))),
        "g": float(np.max(np.abs(w @ _as_rows(g(atoms), k) - g_target), initial=0.0)),
        "energy": abs(float(w @ eta(atoms)) + gamma - target),
    }


def match_moments(eta, g, mean, g_target, surplus, atom_budget, dual_norm=None,
                  extra_atoms=None, tol=MOMENT_TOL, energy_tol=ENERGY_TOL):
    """Atomic measure with prescribed first, ``g`` and energy moments.

    Finds weights ``w_j >= 0`` summing to one and ``gamma >= 0`` with

    * ``sum_j w_j y_j = mean``,
    * ``sum_j w_j g(y_j) = g_target``,
    * ``sum_j w_j eta(y_j) + gamma = eta(mean) + |g_target - g(mean)|_* + surplus``.

    Parameters
    ----------
    eta : callable
        Convex energy, ``eta(y)`` for ``y`` of shape ``(..., n)``.
    g : callable
        Nonlinear map, ``g(y)`` of shape ``(..., m)``.
    mean : array_like, shape (n,)
    g_target : array_like, shape (m,)
    surplus : float
        Nonnegative extra energy.
    atom_budget : int
        Maximum number of atoms, at least 3.
    dual_norm : callable, optional
        Norm applied to ``g_target - g(mean)``; Euclidean by default.
    extra_atoms : array_like, shape (k, n), optional
        Additional candidates, e.g. the atoms of a known feasible measure.
    tol, energy_tol : float, optional
        Acceptance tolerances for the moment and energy conditions.

    Returns
    -------
    MomentMatch

    Raises
    ------
    ParameterError
        For negative surplus or a budget below 3.
    InfeasibleError
        If no measure on the candidate set meets the tolerances.

    Notes
    -----
    Candidates are tried in order of increasing size: the Dirac mass at
    the mean, one symmetric pair ``mean +- t e_i`` per axis whose energy
    equals the target, then a pool made of the mean, all pairs, a
    least-squares preimage ``y1`` of ``g_target`` with its reflection and
    radial scalings ``mean + rho (y1 - mean)``, and ``extra_atoms``. Each
    set is solved without the ``gamma`` column before any set is solved
    with it.
    """
    if surplus < 0:
        raise ParameterError("surplus must be nonnegative")
    if atom_budget < 3:
        raise ParameterError("atom_budget must be at least 3")
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    n = mean.size
    g_target = np.atleast_1d(np.asarray(g_target, dtype=float)).ravel()
    dual_norm = np.linalg.norm if dual_norm is None else dual_norm
    g_mean = _as_rows(g(mean[None]), 1)[0]
    if g_mean.shape != g_target.shape:
        raise ShapeError("g_target does not match the output of g")
    eta_mean = float(eta(mean[None])[0])
    target = eta_mean + float(dual_norm(g_target - g_mean)) + float(surplus)

    def eta1(y):
        return float(eta(np.asarray(y)[None])[0])

    pairs = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        t = _pair_radius(eta1, mean, e, target)
        if t is not None:
            pairs.append(np.array([mean + t * e, mean - t * e]))

    try:
        y1 = least_squares(lambda y: _as_rows(g(y[None]), 1)[0] - g_target, mean,
                           xtol=1e-15, ftol=1e-15, gtol=1e-15).x
    except ValueError:
        y1 = mean.copy()
    pool = [mean[None]] + pairs + [y1[None], (2 * mean - y1)[None]]
    direction = y1 - mean
    if np.linalg.norm(direction) > 0:
        rho = np.array([-3.0, -2.0, -0.5, 0.5, 2.0, 3.0])
        pool.append(mean + rho[:, None] * direction)
    if extra_atoms is not None:
        pool.append(np.asarray(extra_atoms, dtype=float).reshape(-1, n))
    stages = [mean[None]] + [np.vstack([mean[None], p]) for p in pairs] + [np.vstack(pool)]

    best = np.inf
    for with_gamma in (False, True):
        for cands in stages:
            cands = np.unique(cands, axis=0)
            eta_vals = np.asarray(eta(cands), dtype=float)
            g_vals = _as_rows(g(cands), len(cands))
            w, gamma = _solve_weights(cands, eta_vals, g_vals, mean, g_target, target, with_gamma)
            keep = w > WEIGHT_DROP
            w, atoms = w[keep], cands[keep]
            if w.size == 0:
                continue
            w = w / w.sum()
            res = _residuals(w, atoms, gamma, eta, g, mean, g_target, target)
            worst = max(res["normalization"], res["mean"], res["g"])
            best = min(best, max(worst, res["energy"]))
            if worst <= tol and res["energy"] <= energy_tol and w.size <= atom_budget:
                return MomentMatch(w, atoms, gamma, res)
    raise InfeasibleError(f"no measure within tolerance on the candidate set (best residual {best:.3e})", best)


# ---------------------------------------------------------------------------
# defect recovery


def _sym_field(values):
    return 0.5 * (values + np.swapaxes(values, 0, 1))


def _psd_project(values):
    cells = np.moveaxis(_sym_field(values), (0, 1), (-2, -1))
    lam, V = np.linalg.eigh(cells)
    out = np.einsum("...ik,...k,...jk->...ij", V, np.maximum(lam, 0.0), V)
    return np.moveaxis(out, (-2, -1), (0, 1))


def _director_metric_inverse(values, director, k):
    # inverse of B -> B + k (d.B d) d (x) d
    d = director.values
    dBd = np.einsum("i...,ij...,j...->...", d, values, d)
    dd = np.einsum("i...,j...->ij...", d, d)
    return values - (k / (1.0 + k)) * dBd * dd


def _director_metric(values, director, k):
    d = director.values
    dBd = np.einsum("i...,ij...,j...->...", d, values, d)
    dd = np.einsum("i...,j...->ij...", d, d)
    return values + k * dBd * dd


@dataclass(frozen=True)
class DefectField:
    """Symmetric positive semidefinite matrix field.

    Attributes
    ----------
    R : TorusField
        The PSD defect.
    raw : TorusField or None
        Unprojected least-norm solution, when produced by
        :func:`recover_defect`.
    projection_distance : float
        L2 distance between ``raw`` and ``R``.
    norm_kind : str
        One of ``"L2"``, ``"Lp_dual"``, ``"trace_d"``.
    params : dict
        ``p`` for ``Lp_dual``; ``k`` for ``trace_d``.
    """

    R: TorusField
    raw: TorusField = None
    projection_distance: float = 0.0
    norm_kind: str = "L2"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        v = self.R.values
        if self.R.rank != 2 or v.shape[0] != v.shape[1]:
            raise ShapeError("a defect is a square matrix field")
        if np.max(np.abs(v - np.swapaxes(v, 0, 1)), initial=0.0) > SYM_TOL:
            raise DomainError("defect must be symmetric")
        lam = np.linalg.eigvalsh(np.moveaxis(v, (0, 1), (-2, -1)))
        if lam.min() < -PSD_TOL:
            raise DomainError(f"defect has eigenvalue {lam.min():.3e} < 0")

    @classmethod
    def from_matrix(cls, R):
        """Wrap a symmetric PSD matrix field."""
        return cls(R)

    @classmethod
    def projected(cls, R):
        """PSD projection of the symmetric part of any matrix field.

        The L2 distance to the input is kept in ``projection_distance``.
        """
        grid = R.grid
        proj = _psd_project(R.values)
        dist = float(np.sqrt(np.sum((R.values - proj) ** 2) * grid.cell_volume))
        return cls(TorusField(grid, proj), R, dist)

    def trace(self):
        """Scalar field ``tr R``."""
        return TorusField(self.R.grid, np.trace(self.R.values, axis1=0, axis2=1))


def surrogate_norm(R, norm_kind="L2", director=None, k=0.0):
    """Squared Hilbert surrogate norm used by :func:`recover_defect`."""
    v = R.values
    if norm_kind == "trace_d":
        v = _director_metric(v, director, k)
    return float(np.sum(R.values * v) * R.grid.cell_volume)


def recover_defect(residuals, basis, norm_kind="L2", director=None, k=0.0, p=2.0, rcond=1e-12):
    """Least-norm matrix field with prescribed pairings.

    Solves ``<-R, basis_j> = residuals_j`` for all ``j`` with minimal
    surrogate norm, then projects the symmetric part onto the PSD cone.

    Parameters
    ----------
    residuals : array_like, shape (J,)
    basis : sequence of TorusField
        Matrix fields, typically gradients of test fields.
    norm_kind : {"L2", "Lp_dual", "trace_d"}
        ``L2`` and ``Lp_dual`` use the L2 inner product; ``trace_d`` uses
        ``<A, B + k (d.B d) d (x) d>``, which is the director trace
        functional on rank-one PSD matrices along ``d``.
    director : TorusField, optional
        Unit vector field, required for ``trace_d``.
    k : float, optional
    p : float, optional
        Recorded for ``Lp_dual``.
    rcond : float, optional
        Relative eigenvalue threshold of the Gram matrix.

    Returns
    -------
    DefectField

    Raises
    ------
    ConditioningError
        If the basis is linearly dependent.
    """
    if norm_kind not in ("L2", "Lp_dual", "trace_d"):
        raise ParameterError(f"unknown norm kind {norm_kind!r}")
    if norm_kind == "trace_d" and director is None:
        raise ParameterError("trace_d needs a director field")
    r = np.atleast_1d(np.asarray(residuals, dtype=float))
    if len(basis) != r.size or r.size == 0:
        raise ShapeError("need one residual per basis field")
    grid = basis[0].grid
    B = np.array([b.values for b in basis])
    if norm_kind == "trace_d":
        PB = np.array([_director_metric_inverse(b, director, k) for b in B])
    else:
        PB = B
    flat = B.reshape(len(B), -1)
    gram = flat @ PB.reshape(len(B), -1).T * grid.cell_volume
    lam = np.linalg.eigvalsh(0.5 * (gram + gram.T))
    if lam.max() <= 0 or lam.min() <= rcond * lam.max():
        raise ConditioningError("basis gradients are linearly dependent")
    c = np.linalg.solve(gram, r)
    raw = -np.tensordot(c, PB, axes=1)
    proj = _psd_project(raw)
    dist = float(np.sqrt(np.sum((raw - proj) ** 2) * grid.cell_volume))
    params = {"k": float(k)} if norm_kind == "trace_d" else ({"p": float(p)} if norm_kind == "Lp_dual" else {})
    return DefectField(TorusField(grid, proj), TorusField(grid, raw), dist, norm_kind, params)


# ---------------------------------------------------------------------------
# varifolds


@dataclass(frozen=True)
class InterfaceData:
    """Indicator function with its discrete normal and surface mass.

    Attributes
    ----------
    chi : TorusField
        Scalar field with values in ``{0, 1}``.
    cells : ndarray of int
        Flat indices of cells where the discrete gradient is nonzero.
    normals : ndarray, shape (k, d)
        Unit vectors ``grad chi / |grad chi|``.
    masses : ndarray, shape (k,)
        ``|grad chi|`` times the cell volume.
    """

    chi: TorusField
    cells: np.ndarray
    normals: np.ndarray
    masses: np.ndarray

    @classmethod
    def from_indicator(cls, chi):
        if chi.rank != 0:
            raise ShapeError("chi must be a scalar field")
        if not np.all((chi.values == 0) | (chi.values == 1)):
            raise ParameterError("chi must take values in {0, 1}")
        g = gradient(chi).cellwise()
        size = np.linalg.norm(g, axis=1)
        cells = np.flatnonzero(size > 0)
        return cls(chi, cells, g[cells] / size[cells, None], size[cells] * chi.grid.cell_volume)

    def vector_measure(self):
        """``grad chi`` times the cell volume at the interface cells."""
        return self.normals * self.masses[:, None]


@dataclass(frozen=True)
class Varifold:
    """Atoms on cells times the unit sphere.

    Attributes
    ----------
    grid : TorusGrid
    cells : ndarray of int, shape (k,)
    directions : ndarray, shape (k, d)
    masses : ndarray, shape (k,)
    interface : ndarray of bool, shape (k,)
        True for atoms copied from interface data.
    """

    grid: object
    cells: np.ndarray
    directions: np.ndarray
    masses: np.ndarray
    interface: np.ndarray

    def __post_init__(self):
        if np.any(self.masses < 0):
            raise ParameterError("varifold masses must be nonnegative")
        if self.directions.size and np.max(np.abs(np.linalg.norm(self.directions, axis=1) - 1)) > 1e-12:
            raise ParameterError("varifold directions must be unit vectors")

    def __len__(self):
        return len(self.masses)

    def total_mass(self):
        return float(self.masses.sum())

    def first_moment(self):
        """Per-cell sum of ``mass * direction``, shape ``(ncells, d)``."""
        out = np.zeros((self.grid.size, self.grid.dim))
        np.add.at(out, self.cells, self.masses[:, None] * self.directions)
        return out

    def normalized_defect_weights(self, threshold=1e-14):
        """Defect atom masses divided by the defect mass of their cell.

        Cells whose defect mass is at most ``threshold`` get weight 0.
        """
        dm = np.zeros(self.grid.size)
        sel = ~self.interface
        np.add.at(dm, self.cells[sel], self.masses[sel])
        out = np.zeros_like(self.masses)
        tot = dm[self.cells[sel]]
        out[sel] = np.where(tot > threshold, self.masses[sel] / np.where(tot > threshold, tot, 1.0), 0.0)
        return out


def build_varifold(defect, interface=None, drop=1e-13):
    """Varifold from a PSD defect and optional interface data.

    Each cell with ``R = sum_i lam_i e_i (x) e_i`` contributes atoms
    ``(+e_i, lam_i |K| / 2)`` and ``(-e_i, lam_i |K| / 2)``; eigenvalues at
    most ``drop`` times the largest one of the cell are skipped. Interface
    cells contribute ``(normal, mass)``.

    Parameters
    ----------
    defect : DefectField or TorusField
    interface : InterfaceData, optional

    Returns
    -------
    Varifold

    Raises
    ------
    DomainError
        If the defect is not symmetric PSD within tolerance.
    """
    if isinstance(defect, TorusField):
        defect = DefectField.from_matrix(defect)
    R = defect.R
    grid = R.grid
    cells = np.moveaxis(R.values, (0, 1), (-2, -1)).reshape(grid.size, grid.dim, grid.dim)
    lam, V = np.linalg.eigh(cells)
    lam = np.maximum(lam, 0.0)
    top = lam.max(axis=1, keepdims=True)
    keep = (lam > drop * top) & (lam > 0)
    ci, ei = np.nonzero(keep)
    dirs = V[ci, :, ei]
    m = 0.5 * lam[ci, ei] * grid.cell_volume
    cell_ids = [np.repeat(ci, 2)]
    directions = [np.stack([dirs, -dirs], axis=1).reshape(-1, grid.dim)]
    masses = [np.repeat(m, 2)]
    flags = [np.zeros(2 * len(ci), dtype=bool)]
    if interface is not None:
        if interface.chi.grid != grid:
            raise ShapeError("interface and defect must share a grid")
        cell_ids.append(interface.cells)
        directions.append(interface.normals)
        masses.append(interface.masses)
        flags.append(np.ones(len(interface.cells), dtype=bool))
    return Varifold(
        grid,
        np.concatenate(cell_ids).astype(np.int64),
        np.concatenate(directions).reshape(-1, grid.dim),
        np.concatenate(masses),
        np.concatenate(flags),
    )


# ---------------------------------------------------------------------------
# Gaussian construction


def _psd_sqrt(B):
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ShapeError("covariance must be a square matrix")
    if np.max(np.abs(B - B.T)) > SYM_TOL * max(1.0, np.max(np.abs(B))):
        raise DomainError("covariance must be symmetric")
    lam, V = np.linalg.eigh(B)
    if lam.min() < -PSD_TOL * max(1.0, lam.max()):
        raise DomainError(f"covariance has eigenvalue {lam.min():.3e} < 0")
    return (V * np.sqrt(np.maximum(lam, 0.0))) @ V.T


def gaussian_measure(mean_grad, covariance, sample_count, seed=0):
    """Equally weighted Gaussian matrix samples.

    Atoms are ``S_j = A + d**-0.5 * Xi_j @ B**0.5`` with standard normal
    ``Xi_j``, so that ``E[S] = A`` and ``E[S^T S] = A^T A + B``.

    Parameters
    ----------
    mean_grad : array_like, shape (d, d)
    covariance : array_like, shape (d, d)
        Symmetric positive semidefinite.
    sample_count : int
    seed : int, optional

    Returns
    -------
    AtomicMeasure
    """
    if sample_count < 1:
        raise ParameterError("sample_count must be positive")
    A = np.asarray(mean_grad, dtype=float)
    root = _psd_sqrt(covariance)
    d = A.shape[0]
    if root.shape != A.shape:
        raise ShapeError("mean and covariance must have the same shape")
    xi = np.random.default_rng(seed).standard_normal((int(sample_count), d, d))
    S = A + (xi @ root) / np.sqrt(d)
    return AtomicMeasure(np.full(int(sample_count), 1.0 / sample_count), S)
