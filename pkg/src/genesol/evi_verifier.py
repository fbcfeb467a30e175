"""
Residuals of generalized solution concepts on discrete data
===========================================================

Every inequality checked here has the shape

.. math::

    \\Big[E - \\int b\\Big]_s^t + \\int_s^t \\Big( \\int b \\,\\partial_t\\theta
    + \\int c \\,\\theta + w\\,\\theta + D \\Big) \\, d\\tau \\le 0

for a separable test function ``theta(t) * phi(x)`` with a nonnegative
profile ``theta``: ``b`` pairs the state with ``phi``, ``c`` collects the
flux pairings, ``w`` is the weight term and ``D`` a test-independent
dissipation. Time integrals use the trapezoidal rule on the trajectory
nodes and ``theta`` is piecewise linear, so the residual for node pair
``s < t`` is ``Q[t] - Q[s]`` for one cumulative series ``Q``. The maximum
over all pairs then costs one pass with a running minimum.

Spatial pairings use the grid quadrature and the central-difference
operators of :mod:`genesol.torus`; by summation by parts the flux pairings
of the discrete-gradient scheme are reproduced exactly, so residuals on
solver output measure the time discretization only.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .energy import (
    d_norm_primal,
    leslie_stress_eval,
    negative_part,
    oseen_frank_eval,
    polyconvex_kinematics,
    sigma_eval,
    unit_director,
    zeta_eval,
)
from .errors import DimensionError, DomainError, ParameterError, ShapeError
from .torus import LEVI_CIVITA, TorusField, curl, divergence, gradient

__all__ = [
    "TestMode",
    "TestFunctionBasis",
    "ViolationReport",
    "LiquidCrystalData",
    "RelativeEnergyReport",
    "trig_modes",
    "hat_profiles",
    "ramp_profiles",
    "constant_profile",
    "elastic_basis",
    "polyconvex_basis",
    "liquid_crystal_basis",
    "divergence_defect",
    "residual_series",
    "max_increase",
    "evi_residual_elastic",
    "residual_table_elastic",
    "linear_weak_residual",
    "evi_residual_polyconvex",
    "evi_residual_liquid_crystal",
    "mvs_residual_elastic",
    "compatibility_check",
    "relative_energy",
    "assemble_q",
]

DIV_FREE_TOL = 1e-12
UNIFORM_TOL = 1e-9


# ---------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class TestMode:
    """Spatial part of a test function.

    Attributes
    ----------
    label : str
    fields : dict
        Component-major arrays keyed by the slot they fill, e.g. ``"phi"``
        and ``"Psi"``; missing slots are zero.
    """

    __test__ = False

    label: str
    fields: dict


@dataclass(frozen=True)
class TestFunctionBasis:
    """Spatial modes times nonnegative temporal profiles.

    Attributes
    ----------
    modes : list of TestMode
    profiles : ndarray, shape (P, N)
        Profile values at the trajectory nodes, all nonnegative.
    profile_labels : list of str
    signs : tuple of int
        Signs applied to every spatial mode.
    """

    __test__ = False

    modes: list
    profiles: np.ndarray
    profile_labels: list
    signs: tuple = (1, -1)

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.profiles, dtype=float))
        if np.any(p < 0):
            raise ParameterError("profiles must be nonnegative")
        if len(self.profile_labels) != p.shape[0]:
            raise ShapeError("one label per profile")
        object.__setattr__(self, "profiles", p)

    def __len__(self):
        return len(self.modes) * self.profiles.shape[0] * len(self.signs)


def _wavevectors(grid, max_index):
    rng = range(-max_index, max_index + 1)
    out = []
    for k in np.ndindex(*(len(rng),) * grid.dim):
        k = np.array(k) - max_index
        nz = np.flatnonzero(k)
        if nz.size == 0 or k[nz[0]] < 0:
            continue
        if np.any(2 * np.abs(k) >= np.array(grid.extent)):
            continue
        out.append(k)
    out.sort(key=lambda k: (np.abs(k).sum(), tuple(-k)))
    return out


def _phase(grid, k):
    x = grid.coordinates()
    return sum(2 * np.pi * kj * xj / L for kj, xj, L in zip(k, x, grid.period))


def _symbol(grid, k):
    # central-difference symbol of d/dx_j on exp(i k.x)
    return np.array([np.sin(2 * np.pi * kj * h / L) / h for kj, h, L in zip(k, grid.spacing, grid.period)])


def trig_modes(grid, component_shape, max_index=3, divergence_free=False,
               include_constant=True, max_modes=None):
    """Low-index trigonometric fields.

    Parameters
    ----------
    grid : TorusGrid
    component_shape : tuple
        ``()`` for scalars, ``(n,)`` for vectors, ``(n, m)`` for matrices.
    max_index : int, optional
        Largest wave number per axis.
    divergence_free : bool, optional
        Vector modes only: amplitudes orthogonal to the discrete wave
        vector, so the discrete divergence vanishes.
    include_constant : bool, optional
        Add one constant field per component.
    max_modes : int, optional
        Truncate the list.

    Returns
    -------
    list of (label, ndarray)
    """
    comp = tuple(component_shape)
    units = [np.zeros(comp) for _ in range(int(np.prod(comp)))]
    for i, u in enumerate(units):
        u.flat[i] = 1.0
    out = []
    if divergence_free:
        if comp != (grid.dim,):
            raise ShapeError("divergence-free modes are vector fields of the grid dimension")
        if include_constant:
            out += [(f"const e{i}", u[(...,) + (None,) * grid.dim] * np.ones(grid.extent))
                    for i, u in enumerate(units)]
        for k in _wavevectors(grid, max_index):
            ks = _symbol(grid, k)
            _, _, vt = np.linalg.svd(ks[None, :])
            ph = _phase(grid, k)
            for j, a in enumerate(vt[1:]):
                for name, wave in (("cos", np.cos(ph)), ("sin", np.sin(ph))):
                    out.append((f"{name}{tuple(int(x) for x in k)} a{j}", np.multiply.outer(a, wave)))
    else:
        if include_constant:
            out += [(f"const c{i}", u[(...,) + (None,) * grid.dim] * np.ones(grid.extent))
                    for i, u in enumerate(units)]
        for k in _wavevectors(grid, max_index):
            ph = _phase(grid, k)
            for name, wave in (("cos", np.cos(ph)), ("sin", np.sin(ph))):
                for i, u in enumerate(units):
                    out.append((f"{name}{tuple(int(x) for x in k)} c{i}", np.multiply.outer(u, wave)))
    if max_modes is not None:
        out = out[:max_modes]
    return out


def divergence_defect(values, grid):
    """``int |div phi|^2`` for a vector mode."""
    dv = divergence(TorusField(grid, values)).values
    return float(np.sum(dv**2) * grid.cell_volume)


def hat_profiles(times, centers=None, half_width=None):
    """Piecewise-linear hats.

    With the defaults there is one hat per node, equal to 1 at that node
    and 0 at all others. ``centers`` and ``half_width`` select hats of a
    fixed physical width, evaluated at ``times``.
    """
    times = np.asarray(times, dtype=float)
    if centers is None and half_width is None:
        return np.eye(times.size), [f"hat@{i}" for i in range(times.size)]
    centers = times if centers is None else np.atleast_1d(np.asarray(centers, dtype=float))
    if half_width is None or half_width <= 0:
        raise ParameterError("half_width must be positive")
    prof = np.maximum(0.0, 1.0 - np.abs(times[None, :] - centers[:, None]) / half_width)
    return prof, [f"hat@{c:.6g}~{half_width:.3g}" for c in centers]


def ramp_profiles(n):
    """Profiles equal to 1 up to node ``j`` and 0 from node ``j + 1``."""
    prof = np.tril(np.ones((n, n)))[: n - 1]
    return prof, [f"ramp@{j}" for j in range(n - 1)]


def constant_profile(n):
    return np.ones((1, n)), ["const"]


def elastic_basis(grid, times, max_index=3, include_hats=True, max_modes=None):
    """Vector ``phi`` and matrix ``Psi`` modes with constant and hat profiles."""
    d = grid.dim
    modes = [TestMode("phi " + lab, {"phi": v}) for lab, v in trig_modes(grid, (d,), max_index, max_modes=max_modes)]
    modes += [TestMode("Psi " + lab, {"Psi": v}) for lab, v in trig_modes(grid, (d, d), max_index, max_modes=max_modes)]
    return TestFunctionBasis(modes, *_default_profiles(times, include_hats))


def polyconvex_basis(grid, times, max_index=1, include_hats=True, max_modes=None):
    """Modes for the slots ``phi``, ``Psi``, ``Xi`` and ``phis``."""
    modes = []
    for slot, comp in (("phi", (3,)), ("Psi", (3, 3)), ("Xi", (3, 3)), ("phis", ())):
        modes += [TestMode(f"{slot} {lab}", {slot: v})
                  for lab, v in trig_modes(grid, comp, max_index, max_modes=max_modes)]
    return TestFunctionBasis(modes, *_default_profiles(times, include_hats))


def liquid_crystal_basis(grid, times, max_index=1, include_hats=True, max_modes=None):
    """Divergence-free ``phi`` modes and vector ``zeta`` and ``psi`` modes."""
    modes = [TestMode(f"phi {lab}", {"phi": v})
             for lab, v in trig_modes(grid, (3,), max_index, divergence_free=True, max_modes=max_modes)]
    for slot in ("zeta", "psi"):
        modes += [TestMode(f"{slot} {lab}", {slot: v})
                  for lab, v in trig_modes(grid, (3,), max_index, max_modes=max_modes)]
    return TestFunctionBasis(modes, *_default_profiles(times, include_hats))


def _default_profiles(times, include_hats):
    prof, labels = constant_profile(len(times))
    if include_hats:
        hp, hl = hat_profiles(times)
        prof, labels = np.vstack([prof, hp]), labels + hl
    return prof, labels


# ---------------------------------------------------------------------------
# reports


@dataclass
class ViolationReport:
    """Maximal residuals over a test basis.

    Attributes
    ----------
    kind : str
    labels : list of str
        One label per test function.
    values : ndarray
        Largest residual over node pairs for each test function.
    s_index, t_index : ndarray of int
        Node pair attaining each value.
    times : ndarray
    max_violation : float
        ``max(0, max(values))``.
    location : dict
        Label and times of the largest value.
    tolerances : dict
    extra : dict
        Additional diagnostics, e.g. per-equation maxima.
    """

    kind: str
    labels: list
    values: np.ndarray
    s_index: np.ndarray
    t_index: np.ndarray
    times: np.ndarray
    max_violation: float = 0.0
    location: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.size:
            i = int(np.argmax(self.values))
            self.max_violation = max(0.0, float(self.values[i]))
            self.location = {
                "label": self.labels[i],
                "s": float(self.times[self.s_index[i]]),
                "t": float(self.times[self.t_index[i]]),
                "value": float(self.values[i]),
            }

    def to_dict(self):
        return {
            "kind": self.kind,
            "max_violation": self.max_violation,
            "location": self.location,
            "tolerances": self.tolerances,
            "extra": self.extra,
            "table": [
                {"test": lab, "value": float(v), "s": float(self.times[s]), "t": float(self.times[t])}
                for lab, v, s, t in zip(self.labels, self.values, self.s_index, self.t_index)
            ],
        }


def residual_series(E, dt, b, c, w, profiles, D=None):
    """Cumulative series whose increments are the residuals.

    Parameters
    ----------
    E : ndarray, shape (N,)
    dt : float
    b, c, w : ndarray, shape (N,)
        Boundary pairing, flux pairing and weight per node.
    profiles : ndarray, shape (P, N)
    D : ndarray, shape (N,), optional
        Test-independent integrand.

    Returns
    -------
    ndarray, shape (P, N)
        ``Q`` with residual ``Q[:, t] - Q[:, s]`` for ``s < t``.
    """
    th = np.atleast_2d(profiles)
    inc = (0.5 * (th[:, 1:] - th[:, :-1]) * (b[:-1] + b[1:])
           + 0.5 * dt * (th[:, :-1] * (c + w)[:-1] + th[:, 1:] * (c + w)[1:]))
    if D is not None:
        inc = inc + 0.5 * dt * (D[:-1] + D[1:])
    Q = np.empty(th.shape)
    Q[:, 0] = 0.0
    np.cumsum(inc, axis=1, out=Q[:, 1:])
    return Q + E[None, :] - th * b[None, :]


def max_increase(Q):
    """Largest ``Q[t] - Q[s]`` over ``s < t`` for every row.

    Returns
    -------
    values, s_index, t_index : ndarray
    """
    Q = np.atleast_2d(Q)
    run = np.minimum.accumulate(Q[:, :-1], axis=1)
    gain = Q[:, 1:] - run
    t = np.argmax(gain, axis=1)
    vals = gain[np.arange(len(Q)), t]
    t = t + 1
    s = np.array([int(np.argmin(Q[i, :ti])) for i, ti in enumerate(t)])
    return vals, s, t


def _uniform_dt(times):
    times = np.asarray(times, dtype=float)
    if times.size < 2:
        raise ShapeError("need at least two time nodes")
    steps = np.diff(times)
    if np.max(np.abs(steps - steps[0])) > UNIFORM_TOL * max(1.0, abs(steps[0])):
        raise ShapeError("time nodes must be uniform")
    return float(steps[0])


def _pair(a, b, cv):
    # a: (N, comp..., cells), b: (comp..., cells) -> (N,)
    return np.tensordot(a, b, axes=b.ndim) * cv


def _workers(workers):
    return 1 if workers is None else max(1, int(workers))


def _evaluate(kind, basis, E, times, pieces, tolerances, workers=None, D=None):
    """Run the series for every mode and sign.

    ``pieces(mode, sign)`` returns ``(b, c, w)`` arrays over nodes.
    """
    dt = _uniform_dt(times)

    def one(mode):
        rows = []
        for sign in basis.signs:
            b, c, w = pieces(mode, sign)
            Q = residual_series(E, dt, b, c, w, basis.profiles, D)
            v, s, t = max_increase(Q)
            rows.append((sign, v, s, t))
        return mode, rows

    if _workers(workers) > 1:
        with ThreadPoolExecutor(_workers(workers)) as ex:
            results = list(ex.map(one, basis.modes))
    else:
        results = [one(m) for m in basis.modes]
    labels, vals, ss, ts = [], [], [], []
    for mode, rows in results:
        for sign, v, s, t in rows:
            for j, pl in enumerate(basis.profile_labels):
                labels.append(f"{'+' if sign > 0 else '-'}{mode.label} x {pl}")
            vals.append(v)
            ss.append(s)
            ts.append(t)
    cat = (lambda x: np.concatenate(x)) if vals else (lambda x: np.zeros(0, dtype=int))
    return ViolationReport(kind, labels, cat(vals), cat(ss), cat(ts), np.asarray(times), tolerances=tolerances)


# ---------------------------------------------------------------------------
# convex elasticity


def _stack(traj, name):
    return np.array([getattr(s, name).values for s in traj.states])


def _cells_last(values, ncomp, lead=1):
    # move component axes after the grid axes, keeping ``lead`` leading axes
    src = list(range(lead, lead + ncomp))
    dst = list(range(-ncomp, 0))
    return np.moveaxis(values, src, dst)


def _comps_first(values, ncomp, lead=1):
    src = list(range(-ncomp, 0))
    dst = list(range(lead, lead + ncomp))
    return np.moveaxis(values, src, dst)


def _energies(model, V, F, cv):
    G = model.G(_cells_last(F, 2))
    return (0.5 * np.sum(V**2, axis=tuple(range(1, V.ndim))) + np.sum(G, axis=tuple(range(1, G.ndim)))) * cv


def _elastic_pieces(model, traj, weight_constant):
    C = model.M / model.m if weight_constant is None else float(weight_constant)
    if C <= 0:
        raise ParameterError("weight_constant must be positive")
    grid = traj.grid
    n = len(traj)
    cv = grid.cell_volume
    V = _stack(traj, "v")
    F = _stack(traj, "F")
    DG = _comps_first(model.DG(_cells_last(F, 2)), 2)
    gap = _energies(model, V, F, cv) - traj.E

    def pieces(mode, sign):
        b = np.zeros(n)
        c = np.zeros(n)
        w = np.zeros(n)
        phi = mode.fields.get("phi")
        Psi = mode.fields.get("Psi")
        if phi is not None:
            gphi = gradient(TorusField(grid, phi)).values
            b += _pair(V, phi, cv)
            c -= _pair(DG, gphi, cv)
            w += C * np.sqrt(np.sum(gphi**2) * cv) * gap
        if Psi is not None:
            b += _pair(F, Psi, cv)
            c -= _pair(V, divergence(TorusField(grid, Psi)).values, cv)
        return sign * b, sign * c, w

    return C, pieces


def evi_residual_elastic(model, traj, basis, weight_constant=None, workers=None):
    """Energy-variational residual for the convex wave system.

    For a test pair ``(phi, Psi)`` and nodes ``s < t`` evaluates

    ``[E - int v.phi + F:Psi]_s^t + int_s^t int v.phi_t + F:Psi_t
    - int_s^t int DG(F):grad phi + v.div Psi
    + int_s^t C ||grad phi||_2 (energy - E)``.

    Parameters
    ----------
    model : ConvexElasticModel
    traj : Trajectory
    basis : TestFunctionBasis
        Modes with ``"phi"`` and/or ``"Psi"`` slots.
    weight_constant : float, optional
        ``C``; defaults to ``model.M / model.m``.
    workers : int, optional
        Threads used over modes.

    Returns
    -------
    ViolationReport
    """
    C, pieces = _elastic_pieces(model, traj, weight_constant)
    if basis.profiles.shape[1] != len(traj):
        raise ShapeError("profiles and trajectory have different node counts")
    return _evaluate("evi_elastic", basis, traj.E, traj.times, pieces,
                     {"weight_constant": C}, workers)


def residual_table_elastic(model, traj, mode, profile, sign=1, weight_constant=None):
    """All node-pair residuals of one elastic test function.

    Returns
    -------
    ndarray, shape (N, N)
        Entry ``[s, t]`` is the residual on ``[t_s, t_t]``; only ``s < t``
        is meaningful.
    """
    _, pieces = _elastic_pieces(model, traj, weight_constant)
    b, c, w = pieces(mode, sign)
    Q = residual_series(traj.E, _uniform_dt(traj.times), b, c, w, profile)[0]
    return Q[None, :] - Q[:, None]


def linear_weak_residual(model, traj, mode, profile):
    """Weak-form part of the elastic residual.

    Returns the ``(N, N)`` array of
    ``-[int v.phi + F:Psi]_s^t + int_s^t int v.phi_t + F:Psi_t
    - int_s^t int DG(F):grad phi + v.div Psi``. Scaling the test function
    by ``1 / alpha`` and the residual by ``alpha`` recovers it as
    ``alpha -> 0``.
    """
    _, pieces = _elastic_pieces(model, traj, 1.0)
    b, c, _ = pieces(mode, 1)
    zero = np.zeros(len(traj))
    Q = residual_series(zero, _uniform_dt(traj.times), b, c, zero, profile)[0]
    return Q[None, :] - Q[:, None]


# ---------------------------------------------------------------------------
# polyconvex elasticity


def evi_residual_polyconvex(model, traj, basis, weight_constant=1.0, workers=None):
    """Energy-variational residual for polyconvex elastodynamics.

    The trajectory carries ``v = y_t`` and ``F = grad y`` on a
    three-dimensional grid; ``Z = cof F`` and ``w = det F`` are derived.
    Test slots are ``"phi"`` (vector), ``"Psi"`` and ``"Xi"`` (matrices)
    and ``"phis"`` (scalar). The weight is
    ``C ||grad phi||_{L^p} (energy - E)`` with ``p = model.p``.
    """
    grid = traj.grid
    if grid.dim != 3:
        raise DimensionError("the polyconvex residual needs a three-dimensional grid")
    times = traj.times
    if basis.profiles.shape[1] != len(times):
        raise ShapeError("profiles and trajectory have different node counts")
    C = float(weight_constant)
    if C <= 0:
        raise ParameterError("weight_constant must be positive")
    cv = grid.cell_volume
    V = _stack(traj, "v")
    F = _stack(traj, "F")
    Fc = _cells_last(F, 2)
    cof, det, _, _ = polyconvex_kinematics(Fc)
    Z = _comps_first(cof, 2)
    zeta = _comps_first(zeta_eval(model, Fc), 2)
    vxF = np.einsum("ikl,nk...,nlj...->nij...", LEVI_CIVITA, V, F)
    cofTv = np.einsum("nki...,nk...->ni...", Z, V)
    energy = (0.5 * np.sum(V**2, axis=(1, 2, 3, 4)) + np.sum(sigma_eval(model, Fc), axis=(1, 2, 3))) * cv
    gap = energy - traj.E
    p = model.p

    def pieces(mode, sign):
        n = len(times)
        b = np.zeros(n)
        c = np.zeros(n)
        w = np.zeros(n)
        f = mode.fields
        if "phi" in f:
            g = gradient(TorusField(grid, f["phi"])).values
            b += _pair(V, f["phi"], cv)
            c -= _pair(zeta, g, cv)
            w += C * (np.sum(np.sqrt(np.sum(g**2, axis=(0, 1))) ** p) * cv) ** (1.0 / p) * gap
        if "Psi" in f:
            b += _pair(F, f["Psi"], cv)
            c -= _pair(V, divergence(TorusField(grid, f["Psi"])).values, cv)
        if "Xi" in f:
            b += _pair(Z, f["Xi"], cv)
            # the row curl is self-adjoint, so Z_t = curl(v x F) pairs with a plus sign
            c += _pair(vxF, curl(TorusField(grid, f["Xi"])).values, cv)
        if "phis" in f:
            b += _pair(det, f["phis"], cv)
            c -= _pair(cofTv, gradient(TorusField(grid, f["phis"])).values, cv)
        return sign * b, sign * c, w

    return _evaluate("evi_polyconvex", basis, traj.E, times, pieces,
                     {"weight_constant": C, "p": p}, workers)


# ---------------------------------------------------------------------------
# liquid crystals


@dataclass(frozen=True)
class LiquidCrystalData:
    """Velocity, director and auxiliary energy at uniform nodes.

    Attributes
    ----------
    grid : TorusGrid
        Three-dimensional grid.
    times : ndarray, shape (N,)
    v, d : ndarray, shape (N, 3) + extent
    E : ndarray, shape (N,)
    q : ndarray, optional
        Same shape as ``d``; assembled from ``d`` when omitted.
    g : ndarray, optional
        External force per node, same shape as ``v``.
    """

    grid: object
    times: np.ndarray
    v: np.ndarray
    d: np.ndarray
    E: np.ndarray
    q: np.ndarray = None
    g: np.ndarray = None

    def __post_init__(self):
        if self.grid.dim != 3:
            raise DimensionError("liquid-crystal data live on a three-dimensional grid")
        n = len(self.times)
        shape = (n, 3) + self.grid.extent
        for name in ("v", "d", "q", "g"):
            a = getattr(self, name)
            if a is not None and np.shape(a) != shape:
                raise ShapeError(f"{name} must have shape {shape}")
        if np.shape(self.E) != (n,):
            raise ShapeError("one auxiliary energy per node")


def assemble_q(model, d, grid):
    """``dF/dd - div dF/dGrad`` for one director field of shape ``(3,) + extent``."""
    Gd = gradient(TorusField(grid, d)).values
    _, dG, dd, _ = oseen_frank_eval(model, _cells_last(d, 1, 0), _cells_last(Gd, 2, 0))
    return _comps_first(dd, 1, 0) - divergence(TorusField(grid, _comps_first(dG, 2, 0))).values


def _check_director(d):
    n = np.linalg.norm(d, axis=1)
    if np.max(np.abs(n - 1.0)) > 1e-8:
        raise DomainError(f"director off the unit sphere by {np.max(np.abs(n - 1.0)):.3e}")


def evi_residual_liquid_crystal(model, data, basis, workers=None):
    """Energy-variational residual for the Ericksen-Leslie model.

    Test slots: ``"phi"`` (divergence-free vector), ``"zeta"`` and
    ``"psi"`` (vectors). The test-independent part contains the Leslie
    dissipation, ``||d x q||^2`` and ``-<g, v>``.

    Raises
    ------
    DomainError
        If ``|d| != 1`` beyond ``1e-8`` or a ``phi`` mode is not
        divergence-free.
    """
    grid = data.grid
    times = np.asarray(data.times, dtype=float)
    if basis.profiles.shape[1] != len(times):
        raise ShapeError("profiles and data have different node counts")
    _check_director(data.d)
    cv = grid.cell_volume
    n = len(times)
    k = model.k
    lam = model.lam
    V, d = data.v, data.d
    q = np.array([assemble_q(model, d[i], grid) for i in range(n)]) if data.q is None else data.q
    Gd = np.array([gradient(TorusField(grid, d[i])).values for i in range(n)])
    Dv = np.array([gradient(TorusField(grid, V[i])).values for i in range(n)])
    dc, Gdc, Dvc, qc, Vc = (_cells_last(d, 1), _cells_last(Gd, 2), _cells_last(Dv, 2),
                            _cells_last(q, 1), _cells_last(V, 1))
    dc = unit_director(dc)
    dens, dF_dGrad, dF_dd, _ = oseen_frank_eval(model, dc, Gdc)
    TE, TL = leslie_stress_eval(model, dc, Dvc, qc, Gd=Gdc)
    axes = tuple(range(1, 4))
    energy = (0.5 * np.sum(Vc**2, axis=axes + (4,)) + np.sum(dens, axis=axes)) * cv
    gap = energy - data.E
    Ds = 0.5 * (Dvc + np.swapaxes(Dvc, -1, -2))
    Dsd = np.einsum("...ij,...j->...i", Ds, dc)
    dDsd = np.einsum("...i,...i->...", dc, Dsd)
    dxq = np.cross(dc, qc)
    diss = ((model.mu1 + lam**2) * np.sum(dDsd**2, axis=axes)
            + model.mu4 * np.sum(Ds**2, axis=axes + (4, 5))
            + (model.mu5 + model.mu6 - lam**2) * np.sum(Dsd**2, axis=axes + (4,))
            + np.sum(dxq**2, axis=axes + (4,))) * cv
    if data.g is not None:
        diss = diss - np.sum(data.g * V, axis=(1,) + tuple(range(2, 5))) * cv
    flux_phi = _comps_first(np.einsum("...i,...j->...ij", Vc, Vc) + TE - TL, 2)
    skw = 0.5 * (Dvc - np.swapaxes(Dvc, -1, -2))
    Pd = lambda a: a - dc * np.einsum("...i,...i->...", dc, a)[..., None]
    director_rate = (np.einsum("...ij,...j->...i", Gdc, Vc) - np.einsum("...ij,...j->...i", skw, dc)
                     + Pd(lam * Dsd + qc))
    director_rate = _comps_first(director_rate, 1)
    dF_dd_f = _comps_first(dF_dd, 1)
    dF_dGrad_f = _comps_first(dF_dGrad, 2)

    def pieces(mode, sign):
        b = np.zeros(n)
        c = np.zeros(n)
        f = mode.fields
        gphi = np.zeros((3, 3) + grid.extent)
        psi = np.zeros((3,) + grid.extent)
        if "phi" in f:
            if divergence_defect(f["phi"], grid) > DIV_FREE_TOL:
                raise DomainError(f"mode {mode.label} is not divergence-free")
            gphi = gradient(TorusField(grid, f["phi"])).values
            b += _pair(V, f["phi"], cv)
            c += _pair(flux_phi, gphi, cv)
            if data.g is not None:
                c += _pair(data.g, f["phi"], cv)
        if "zeta" in f:
            b += _pair(d, f["zeta"], cv)
            c -= _pair(director_rate, f["zeta"], cv)
        if "psi" in f:
            psi = f["psi"]
            gpsi = gradient(TorusField(grid, psi)).values
            c -= _pair(q, psi, cv) - _pair(dF_dd_f, psi, cv) - _pair(dF_dGrad_f, gpsi, cv)
        b, c = sign * b, sign * c
        Gp = _cells_last(gphi, 2, 0)[None]
        u = np.einsum("...ij,...j->...i", Gp, dc) + _cells_last(psi, 1, 0)[None]
        A = sign * (Gp + k * dc[..., :, None] * u[..., None, :])
        nrm = d_norm_primal(dc, k, negative_part(A)).reshape(n, -1).max(axis=1)
        w = 2.0 * nrm * gap
        return b, c, w

    return _evaluate("evi_liquid_crystal", basis, np.asarray(data.E, dtype=float), times, pieces,
                     {"k": k}, workers, D=diss)


# ---------------------------------------------------------------------------
# measure-valued formulation


def mvs_residual_elastic(model, coarse, basis, times=None, initial_energy=None):
    """Residuals of the measure-valued formulation.

    Equalities (absolute residuals) for vector modes ``phi`` and matrix
    modes ``Psi`` with profiles vanishing at the final node:

    ``int v0.phi(0) + int int v.phi_t - int int <nu, DG(S)>:grad phi``,
    ``int F0:Psi(0) + int int F:Psi_t - int int v.div Psi``.

    Energy inequality for every profile vanishing at the final node
    (violation is the negative part):

    ``int theta_t (int <nu, eta> + gamma) + theta(0) E0 >= 0``.

    Parameters
    ----------
    model : ConvexElasticModel
    coarse : list of CoarseData
        One per uniform time node.
    basis : TestFunctionBasis
    times : array_like, optional
        Defaults to the times of the coarse means.
    initial_energy : float, optional
        ``E0``; defaults to the energy of the mean initial state.

    Returns
    -------
    ViolationReport
        ``extra`` holds the maxima of each equation and of the energy
        violation.
    """
    from .coarse_grain import measure_moment

    grid = coarse[0].grid
    times = np.array([c.t for c in coarse]) if times is None else np.asarray(times, dtype=float)
    dt = _uniform_dt(times)
    n = len(coarse)
    if basis.profiles.shape[1] != n:
        raise ShapeError("profiles and data have different node counts")
    cv = grid.cell_volume
    V = np.array([c.mean.v.values for c in coarse])
    F = np.array([c.mean.F.values for c in coarse])
    nuDG = np.array([measure_moment(c.measure, lambda v, S: model.DG(S)).values for c in coarse])

    def eta(v, S):
        return 0.5 * np.sum(v**2, axis=-1) + model.G(S)

    e = np.array([np.sum(measure_moment(c.measure, eta).values) * cv + np.sum(c.measure.gamma) * cv
                  for c in coarse])
    if initial_energy is None:
        initial_energy = float(np.sum(eta(coarse[0].mean.v.cellwise(), coarse[0].mean.F.cellwise())) * cv)
    th = basis.profiles[basis.profiles[:, -1] == 0]
    tl = [l for l, p in zip(basis.profile_labels, basis.profiles) if p[-1] == 0]
    dth = th[:, 1:] - th[:, :-1]

    def weak(a, f):
        return (th[:, 0] * a[0] + dth @ (0.5 * (a[:-1] + a[1:]))
                - 0.5 * dt * (th[:, :-1] @ f[:-1] + th[:, 1:] @ f[1:]))

    labels, vals, ss, ts = [], [], [], []
    eq_max = {"momentum": 0.0, "deformation": 0.0, "energy": 0.0}
    for mode in basis.modes:
        if "phi" in mode.fields:
            phi = mode.fields["phi"]
            r = weak(_pair(V, phi, cv), _pair(nuDG, gradient(TorusField(grid, phi)).values, cv))
            key = "momentum"
        elif "Psi" in mode.fields:
            Psi = mode.fields["Psi"]
            r = weak(_pair(F, Psi, cv), _pair(V, divergence(TorusField(grid, Psi)).values, cv))
            key = "deformation"
        else:
            continue
        eq_max[key] = max(eq_max[key], float(np.max(np.abs(r), initial=0.0)))
        labels += [f"{key} {mode.label} x {l}" for l in tl]
        vals.append(np.abs(r))
        ss.append(np.zeros(len(r), dtype=int))
        ts.append(np.full(len(r), n - 1))
    en = dth @ (0.5 * (e[:-1] + e[1:])) + th[:, 0] * initial_energy
    viol = np.maximum(0.0, -en)
    eq_max["energy"] = float(np.max(viol, initial=0.0))
    labels += [f"energy x {l}" for l in tl]
    vals.append(viol)
    ss.append(np.zeros(len(viol), dtype=int))
    ts.append(np.full(len(viol), n - 1))
    rep = ViolationReport("mvs_elastic", labels, np.concatenate(vals), np.concatenate(ss),
                          np.concatenate(ts), times, tolerances={})
    rep.extra = {"equation_max": eq_max, "initial_energy": initial_energy,
                 "measure_energy": e.tolist()}
    return rep


# ---------------------------------------------------------------------------
# varifold compatibility


def _probes(grid, count):
    out = [np.ones(grid.size)]
    for k in _wavevectors(grid, max(grid.extent)):
        if len(out) >= count:
            break
        ph = _phase(grid, k).ravel()
        out += [np.cos(ph), np.sin(ph)]
    return out[:count]


def compatibility_check(varifold, interface=None, probe_count=8):
    """Largest mismatch between the varifold first moment and ``grad chi``.

    For probes ``psi`` (the constant 1 and low trigonometric modes)
    evaluates ``|sum psi mass direction - sum_interface psi mass normal|``.
    """
    grid = varifold.grid
    mom = varifold.first_moment()
    ref = np.zeros_like(mom)
    if interface is not None:
        np.add.at(ref, interface.cells, interface.vector_measure())
    diff = mom - ref
    return max(float(np.linalg.norm(psi @ diff)) for psi in _probes(grid, probe_count))


# ---------------------------------------------------------------------------
# relative energy


@dataclass
class RelativeEnergyReport:
    """Relative energy per node and an exponential growth rate.

    ``rate`` is the smallest ``lam`` with
    ``values[n] + floor <= (values[0] + floor) exp(lam t_n)`` for all nodes.
    """

    times: np.ndarray
    values: np.ndarray
    rate: float
    floor: float


def relative_energy(model, traj, reference, floor=None):
    """Bregman distance of the energy between two trajectories.

    ``int |v - v~|^2 / 2 + G(F) - G(F~) - DG(F~):(F - F~)`` at every node.

    Parameters
    ----------
    model : ConvexElasticModel
    traj : Trajectory
    reference : Trajectory or sequence of ElasticState
        Same grid and node count.
    floor : float, optional
        Added before taking logarithms; defaults to ``1e-14 (1 + energy)``.
    """
    ref = reference.states if hasattr(reference, "states") else list(reference)
    if len(ref) != len(traj.states):
        raise ShapeError("reference must have one state per node")
    cv = traj.grid.cell_volume
    vals = []
    for s, r in zip(traj.states, ref):
        if s.grid != r.grid:
            raise ShapeError("reference lives on a different grid")
        F = _cells_last(s.F.values, 2, 0)
        Fr = _cells_last(r.F.values, 2, 0)
        dens = (0.5 * np.sum((s.v.values - r.v.values) ** 2, axis=0)
                + model.G(F) - model.G(Fr) - np.sum(model.DG(Fr) * (F - Fr), axis=(-2, -1)))
        vals.append(float(np.sum(dens) * cv))
    vals = np.array(vals)
    times = traj.times
    if floor is None:
        floor = 1e-14 * (1.0 + abs(traj.E[0]))
    rate = 0.0
    if len(vals) > 1:
        t = times[1:] - times[0]
        rate = float(np.max(np.log((vals[1:] + floor) / (vals[0] + floor)) / np.where(t > 0, t, np.inf)))
    return RelativeEnergyReport(times, vals, max(rate, 0.0), floor)
