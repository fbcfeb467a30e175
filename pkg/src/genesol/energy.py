"""
Energy densities and stress algebra
===================================

Pointwise models used by the integrator and the verifiers:

* :class:`ConvexElasticModel` -- stored energy ``G(F)`` of the elastic wave
  system with Hessian bounds ``m <= D2G <= M``.
* :class:`PolyconvexModel` -- energy ``G(F, Z, w)`` in the deformation
  gradient, its cofactor and its determinant.
* :class:`LiquidCrystalModel` -- Oseen-Frank and Leslie coefficients of
  the director model, with the anisotropic matrix norm ``|.|_d``.

All evaluators accept stacks of inputs: a matrix argument of shape
``(..., n, n)`` yields outputs with the same leading shape.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConstraintError, DomainError, EvaluationError, ParameterError
from .torus import LEVI_CIVITA

__all__ = [
    "ConvexElasticModel",
    "quadratic_model",
    "regularized_model",
    "convex_eval",
    "estimate_convexity_constants",
    "default_weight",
    "PolyconvexModel",
    "polyconvex_kinematics",
    "polyconvex_example_G",
    "sigma_eval",
    "zeta_eval",
    "strict_convexity_margin",
    "growth_ratio",
    "LiquidCrystalModel",
    "unit_director",
    "oseen_frank_eval",
    "frank_density",
    "null_lagrangian",
    "leslie_stress_eval",
    "d_norm",
    "d_norm_primal",
    "negative_part",
    "DIRECTOR_TOL",
]

#: Tolerance on ``| |d| - 1 |`` below which directors are renormalised.
DIRECTOR_TOL = 1e-8


def _fro2(A):
    return np.einsum("...ij,...ij->...", A, A)


# ---------------------------------------------------------------------------
# convex elastic energies


@dataclass(frozen=True)
class ConvexElasticModel:
    """Convex stored energy with analytic derivatives.

    Parameters
    ----------
    name : str
        Identifier written to files and reports.
    dim : int
        Matrix size ``d`` of the deformation gradient.
    G, DG, D2G : callable
        Energy, gradient and Hessian, vectorised over leading axes.
        ``D2G(F)[..., i, j, k, l] = d^2 G / dF_ij dF_kl``.
    m, M : float
        Lower and upper Hessian eigenvalue bounds.
    params : dict
        Model parameters, recorded for provenance.
    """

    name: str
    dim: int
    G: Callable
    DG: Callable
    D2G: Callable
    m: float
    M: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.m <= self.M:
            raise ParameterError(f"need 0 < m <= M, got m={self.m}, M={self.M}")


def quadratic_model(dim=1):
    """``G(F) = |F|^2 / 2``, for which the wave system is linear."""
    eye = np.eye(dim * dim).reshape(dim, dim, dim, dim)
    return ConvexElasticModel(
        name="quadratic",
        dim=dim,
        G=lambda F: 0.5 * _fro2(F),
        DG=lambda F: np.array(F, dtype=float),
        D2G=lambda F: np.broadcast_to(eye, np.shape(F)[:-2] + eye.shape).copy(),
        m=1.0,
        M=1.0,
    )


def regularized_model(dim=1, delta=0.1):
    """``G(F) = |F|^2 / 2 + delta (sqrt(1 + |F|^2) - 1)``.

    The Hessian eigenvalues lie in ``[1, 1 + delta]``.
    """
    if delta < 0:
        raise ParameterError("delta must be nonnegative")
    eye = np.eye(dim * dim).reshape(dim, dim, dim, dim)

    def G(F):
        n2 = _fro2(F)
        return 0.5 * n2 + delta * (np.sqrt(1.0 + n2) - 1.0)

    def DG(F):
        s = np.sqrt(1.0 + _fro2(F))
        return F * (1.0 + delta / s)[..., None, None]

    def D2G(F):
        F = np.asarray(F, dtype=float)
        s = np.sqrt(1.0 + _fro2(F))[..., None, None, None, None]
        outer = np.einsum("...ij,...kl->...ijkl", F, F)
        return eye * (1.0 + delta / s) - delta * outer / s**3

    return ConvexElasticModel(
        name="regularized", dim=dim, G=G, DG=DG, D2G=D2G, m=1.0, M=1.0 + delta,
        params={"delta": float(delta)},
    )


def convex_eval(model, F):
    """Evaluate ``(G, DG, D2G)`` at ``F``."""
    F = np.asarray(F, dtype=float)
    return model.G(F), model.DG(F), model.D2G(F)


def estimate_convexity_constants(model, sample_count, radius, seed=0):
    """Sample Hessian eigenvalues over a ball of matrices.

    Parameters
    ----------
    model : ConvexElasticModel
    sample_count : int
        Number of random matrices, drawn uniformly from the Frobenius ball;
        the origin is always included as well.
    radius : float
        Radius of the ball.
    seed : int, optional
        Seed of the sampling generator.

    Returns
    -------
    m_hat, M_hat : float
        Smallest and largest sampled eigenvalue.
    """
    if sample_count < 1:
        raise ParameterError("sample_count must be at least 1")
    if not radius > 0:
        raise ParameterError("radius must be positive")
    n = model.dim * model.dim
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(sample_count, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    r = radius * rng.random(sample_count) ** (1.0 / n)
    F = np.concatenate([np.zeros((1, n)), dirs * r[:, None]]).reshape(-1, model.dim, model.dim)
    H = model.D2G(F).reshape(-1, n, n)
    if not np.all(np.isfinite(H)):
        raise EvaluationError("Hessian evaluation produced non-finite values")
    eig = np.linalg.eigvalsh(0.5 * (H + np.swapaxes(H, 1, 2)))
    return float(eig.min()), float(eig.max())


def default_weight(model, sample_count=200, radius=10.0, margin=0.1, seed=0):
    """EVI weight ``(1 + margin) M_hat / m_hat`` from sampled constants."""
    m_hat, M_hat = estimate_convexity_constants(model, sample_count, radius, seed)
    return (1.0 + margin) * M_hat / m_hat


# ---------------------------------------------------------------------------
# polyconvex energies


def polyconvex_kinematics(F):
    """Cofactor, determinant and their derivatives of ``3 x 3`` matrices.

    Returns
    -------
    cof : ndarray
        ``cof_ia = 1/2 eps_ijk eps_abc F_jb F_kc``.
    det : ndarray
        ``(cof : F) / 3``.
    Ddet : ndarray
        Derivative of the determinant, equal to ``cof``.
    Dcof : ndarray
        ``Dcof[..., i, a, j, b] = sum_kc eps_ijk eps_abc F_kc``.
    """
    F = np.asarray(F, dtype=float)
    eps = LEVI_CIVITA
    cof = 0.5 * np.einsum("ijk,abc,...jb,...kc->...ia", eps, eps, F, F)
    det = np.einsum("...ia,...ia->...", cof, F) / 3.0
    Dcof = np.einsum("ijk,abc,...kc->...iajb", eps, eps, F)
    return cof, det, cof.copy(), Dcof


@dataclass(frozen=True)
class PolyconvexModel:
    """Energy ``Gp(F, Z, w)`` with partial derivatives.

    Attributes
    ----------
    p, q, r : float
        Growth exponents in ``F``, ``Z`` and ``w``.
    gamma : float
        Strong-convexity modulus of ``Gp`` on ``R^9 x R^9 x R``.
    growth_ok : bool
        False when the ``F``-growth falls short of ``p > 4``.
    """

    name: str
    Gp: Callable
    dF: Callable
    dZ: Callable
    dw: Callable
    p: float
    q: float
    r: float
    gamma: float
    growth_ok: bool
    params: dict = field(default_factory=dict)


def polyconvex_example_G(alpha, beta):
    """``alpha |F|^6 + |F|^2 + beta |Z|^3 + |Z|^2 + w^2``."""
    if alpha < 0 or beta < 0:
        raise ParameterError("alpha and beta must be nonnegative")

    def Gp(F, Z, w):
        f2, z2 = _fro2(F), _fro2(Z)
        return alpha * f2**3 + f2 + beta * z2**1.5 + z2 + np.square(w)

    def dF(F, Z, w):
        return (6.0 * alpha * _fro2(F) ** 2 + 2.0)[..., None, None] * F

    def dZ(F, Z, w):
        return (3.0 * beta * np.sqrt(_fro2(Z)) + 2.0)[..., None, None] * Z

    def dw(F, Z, w):
        return 2.0 * np.asarray(w, dtype=float)

    return PolyconvexModel(
        name="example",
        Gp=Gp, dF=dF, dZ=dZ, dw=dw,
        p=6.0 if alpha > 0 else 2.0,
        q=3.0 if beta > 0 else 2.0,
        r=2.0,
        gamma=2.0,
        growth_ok=alpha > 0,
        params={"alpha": float(alpha), "beta": float(beta)},
    )


def sigma_eval(model, F):
    """``sigma(F) = Gp(F, cof F, det F)``."""
    cof, det, _, _ = polyconvex_kinematics(F)
    return model.Gp(np.asarray(F, dtype=float), cof, det)


def zeta_eval(model, F):
    """Gradient of ``sigma`` assembled from the partials of ``Gp``.

    ``zeta_ia = dGp/dF_ia + sum dGp/dZ_kc eps_ijk eps_abc F_jb
    + cof_ia dGp/dw``, evaluated at ``(F, cof F, det F)``.
    """
    F = np.asarray(F, dtype=float)
    cof, det, _, _ = polyconvex_kinematics(F)
    gF = model.dF(F, cof, det)
    gZ = model.dZ(F, cof, det)
    gw = np.asarray(model.dw(F, cof, det))
    zterm = np.zeros_like(F)
    for i in range(3):
        for j in range(3):
            for k in range(3):
                if LEVI_CIVITA[i, j, k] == 0:
                    continue
                for a in range(3):
                    for b in range(3):
                        for c in range(3):
                            s = LEVI_CIVITA[i, j, k] * LEVI_CIVITA[a, b, c]
                            if s:
                                zterm[..., i, a] += s * gZ[..., k, c] * F[..., j, b]
    return gF + zterm + cof * gw[..., None, None]


def strict_convexity_margin(model, segments=100, scale=2.0, seed=0):
    """Smallest normalised midpoint gap over random segments.

    For each pair of points ``x, y`` in ``(F, Z, w)`` space returns
    ``((Gp(x) + Gp(y))/2 - Gp(mid)) / (|x - y|^2 / 8)``; strong convexity
    with modulus ``gamma`` means every value is at least ``gamma``.
    """
    rng = np.random.default_rng(seed)
    x = rng.normal(scale=scale, size=(segments, 19))
    y = rng.normal(scale=scale, size=(segments, 19))

    def ev(u):
        return model.Gp(u[:, :9].reshape(-1, 3, 3), u[:, 9:18].reshape(-1, 3, 3), u[:, 18])

    gap = 0.5 * (ev(x) + ev(y)) - ev(0.5 * (x + y))
    return float(np.min(gap / (np.sum((x - y) ** 2, axis=1) / 8.0)))


def growth_ratio(model, radii=(0.1, 1.0, 10.0, 100.0), per_radius=50, seed=0):
    """Sampled ratio of the derivative bound to the energy growth.

    Returns the maximum over samples of
    ``(|dF|^(p/(p-1)) + |dZ|^(p/(p-2)) + |dw|^(p/(p-3)))
    / (|F|^p + |Z|^q + |w|^r + 1)``.
    """
    p, q, r = model.p, model.q, model.r
    if p <= 3:
        raise ParameterError("growth bound needs p > 3")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for rad in radii:
        F = rng.normal(size=(per_radius, 3, 3)) * rad
        Z = rng.normal(size=(per_radius, 3, 3)) * rad
        w = rng.normal(size=per_radius) * rad
        num = (np.sqrt(_fro2(model.dF(F, Z, w))) ** (p / (p - 1))
               + np.sqrt(_fro2(model.dZ(F, Z, w))) ** (p / (p - 2))
               + np.abs(model.dw(F, Z, w)) ** (p / (p - 3)))
        den = np.sqrt(_fro2(F)) ** p + np.sqrt(_fro2(Z)) ** q + np.abs(w) ** r + 1.0
        worst = max(worst, float(np.max(num / den)))
    return worst


# ---------------------------------------------------------------------------
# liquid crystals


@dataclass(frozen=True)
class LiquidCrystalModel:
    """Frank constants ``K1 < K3`` and Leslie coefficients.

    Parameters
    ----------
    K1, K3 : float
        Splay/twist and bend constants; ``K2 = K1`` and ``K4 = 0``.
    lam : float
        Reactive parameter.
    mu1, mu4, mu5, mu6 : float
        Leslie viscosities with ``mu4 > 0``, ``mu5 + mu6 - lam^2 >= 0`` and
        ``mu1 + lam^2 >= 0``.
    """

    K1: float = 1.0
    K3: float = 2.0
    lam: float = 0.0
    mu1: float = 1.0
    mu4: float = 1.0
    mu5: float = 1.0
    mu6: float = 1.0

    def __post_init__(self):
        if not 0 < self.K1 < self.K3:
            raise ParameterError("Frank constants must satisfy 0 < K1 < K3")
        if self.mu4 <= 0:
            raise ParameterError("mu4 must be positive")
        if self.mu5 + self.mu6 - self.lam**2 < 0:
            raise ParameterError("need mu5 + mu6 - lam^2 >= 0")
        if self.mu1 + self.lam**2 < 0:
            raise ParameterError("need mu1 + lam^2 >= 0")

    @property
    def k(self):
        return self.K3 - self.K1


def unit_director(d, tol=DIRECTOR_TOL):
    """Renormalise ``d`` if it is unit within ``tol``, otherwise raise."""
    d = np.asarray(d, dtype=float)
    n = np.linalg.norm(d, axis=-1)
    if np.any(np.abs(n - 1.0) > tol):
        raise ConstraintError(f"director off the unit sphere by {np.max(np.abs(n - 1.0)):.3e}")
    return d / n[..., None]


def null_lagrangian(Gd):
    """``tr(Gd^2) - (tr Gd)^2``, a divergence that integrates to zero on the torus."""
    tr = np.trace(Gd, axis1=-2, axis2=-1)
    return np.einsum("...ij,...ji->...", Gd, Gd) - tr**2


def frank_density(model, d, Gd, K4=0.0):
    """Oseen-Frank density in splay, twist and bend form.

    ``K1/2 (div d)^2 + K1/2 (d . curl d)^2 + K3/2 |d x curl d|^2
    + K4/2 (tr(Gd^2) - (div d)^2)`` with ``Gd[i, j] = d d_i / d x_j``.
    """
    d = unit_director(d)
    Gd = np.asarray(Gd, dtype=float)
    div = np.trace(Gd, axis1=-2, axis2=-1)
    curl = np.einsum("ijk,...kj->...i", LEVI_CIVITA, Gd)
    twist = np.einsum("...i,...i->...", d, curl)
    bend = np.cross(d, curl)
    return (0.5 * model.K1 * div**2 + 0.5 * model.K1 * twist**2
            + 0.5 * model.K3 * np.einsum("...i,...i->...", bend, bend)
            + 0.5 * K4 * null_lagrangian(Gd))


def oseen_frank_eval(model, d, Gd):
    """Reduced Oseen-Frank energy and its derivatives.

    Parameters
    ----------
    model : LiquidCrystalModel
    d : array_like, shape (..., 3)
        Unit director.
    Gd : array_like, shape (..., 3, 3)
        Director gradient, ``Gd[i, j] = d d_i / d x_j``.

    Returns
    -------
    F : ndarray
        ``K1/2 |Gd|^2 + k/2 |Gd d|^2``.
    dF_dGrad : ndarray
        ``K1 Gd + k (Gd d) (x) d``.
    dF_dd : ndarray
        ``k Gd^T Gd d``.
    both_forms : tuple of ndarray
        ``(full, reduced)``. ``full`` is the splay/twist/bend density with
        the null Lagrangian ``tr(Gd^2) - (div d)^2`` added at weight
        ``K1``; this term integrates to zero on the torus and makes the two
        forms agree pointwise whenever ``Gd^T d = 0``.
    """
    d = unit_director(d)
    Gd = np.asarray(Gd, dtype=float)
    Gdd = np.einsum("...ij,...j->...i", Gd, d)
    reduced = 0.5 * model.K1 * _fro2(Gd) + 0.5 * model.k * np.einsum("...i,...i->...", Gdd, Gdd)
    dF_dGrad = model.K1 * Gd + model.k * np.einsum("...i,...j->...ij", Gdd, d)
    dF_dd = model.k * np.einsum("...ki,...k->...i", Gd, Gdd)
    full = frank_density(model, d, Gd, K4=model.K1)
    return reduced, dF_dGrad, dF_dd, (full, reduced)


def _sym(A):
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def _skw(A):
    return 0.5 * (A - np.swapaxes(A, -1, -2))


def leslie_stress_eval(model, d, Dv, q, Gd=None):
    """Ericksen and Leslie stresses.

    Parameters
    ----------
    model : LiquidCrystalModel
    d : array_like, shape (..., 3)
    Dv : array_like, shape (..., 3, 3)
        Velocity gradient.
    q : array_like, shape (..., 3)
        Variational derivative of the Frank energy.
    Gd : array_like, optional
        Director gradient; needed only for the Ericksen stress.

    Returns
    -------
    TE : ndarray or None
        ``Gd^T Gd (K1 I + k d (x) d)``; None when ``Gd`` is not given.
    TL : ndarray
        Leslie stress.
    """
    d = unit_director(d)
    Dv = np.asarray(Dv, dtype=float)
    q = np.asarray(q, dtype=float)
    lam = model.lam
    Ds = _sym(Dv)
    Dsd = np.einsum("...ij,...j->...i", Ds, d)
    dDsd = np.einsum("...i,...i->...", d, Dsd)
    dd = np.einsum("...i,...j->...ij", d, d)
    Pq = q - np.einsum("...i,...->...i", d, np.einsum("...i,...i->...", d, q))
    TL = ((model.mu1 + lam**2) * dDsd[..., None, None] * dd
          + model.mu4 * Ds
          + (model.mu5 + model.mu6 - lam**2) * _sym(np.einsum("...i,...j->...ij", d, Dsd))
          - lam * _sym(np.einsum("...i,...j->...ij", d, Pq))
          - _skw(np.einsum("...i,...j->...ij", d, q)))
    TE = None
    if Gd is not None:
        Gd = np.asarray(Gd, dtype=float)
        eye = np.eye(3)
        TE = np.einsum("...ki,...kj->...ij", Gd, Gd) @ (model.K1 * eye + model.k * dd)
    return TE, TL


# ---------------------------------------------------------------------------
# director-weighted matrix norm

_GOLDEN = 0.5 * (np.sqrt(5.0) - 1.0)


def _spectral_norm(A):
    return np.linalg.norm(A, ord=2, axis=(-2, -1))


def d_norm_primal(d, k, A, tol=1e-12):
    """Primal director norm, vectorised over leading axes.

    ``|A|_d^2 = max(inf_lam |A - lam d (x) d|_2^2, d.A d / (k + 1))``; the
    infimum is a convex scalar problem solved by golden-section search on
    ``[-2|A|_2, 2|A|_2]``.
    """
    if k < 0:
        raise ParameterError("k must be nonnegative")
    d = unit_director(d)
    A = np.asarray(A, dtype=float)
    d = np.broadcast_to(d, A.shape[:-1])
    dd = np.einsum("...i,...j->...ij", d, d)
    dAd = np.einsum("...i,...ij,...j->...", d, A, d)

    def obj(lam):
        return _spectral_norm(A - lam[..., None, None] * dd)

    bound = 2.0 * _spectral_norm(A)
    lo, hi = -bound, bound
    scale = np.maximum(bound, 1.0)
    for _ in range(200):
        if np.all(hi - lo <= tol * scale):
            break
        x1 = hi - _GOLDEN * (hi - lo)
        x2 = lo + _GOLDEN * (hi - lo)
        left = obj(x1) <= obj(x2)
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
    inf = np.minimum.reduce([obj(0.5 * (lo + hi)), obj(dAd), obj(np.zeros_like(dAd))])
    return np.sqrt(np.maximum(inf**2, dAd / (k + 1.0)))


def d_norm(d, k, A, require_dual=False):
    """Director norm of a ``3 x 3`` matrix and its dual on the PSD cone.

    Parameters
    ----------
    d : array_like, shape (3,)
        Unit director.
    k : float
        Anisotropy ``K3 - K1 >= 0``.
    A : array_like, shape (3, 3)
    require_dual : bool, optional
        Raise :class:`DomainError` when the dual is undefined.

    Returns
    -------
    primal : float
    dual_psd : float or None
        ``sqrt(tr A + k d.A d)`` for symmetric positive semidefinite ``A``;
        None otherwise.
    """
    A = np.asarray(A, dtype=float)
    primal = float(d_norm_primal(d, k, A))
    d = unit_director(d)
    psd = np.allclose(A, A.T, atol=1e-12) and np.linalg.eigvalsh(_sym(A)).min() >= -1e-12
    if not psd:
        if require_dual:
            raise DomainError("the dual director norm is defined only for symmetric PSD matrices")
        return primal, None
    return primal, float(np.sqrt(max(np.trace(A) + k * d @ A @ d, 0.0)))


def negative_part(A):
    """Negative part of the symmetric part of ``A`` by eigendecomposition."""
    w, V = np.linalg.eigh(_sym(np.asarray(A, dtype=float)))
    return np.einsum("...ik,...k,...jk->...ij", V, np.minimum(w, 0.0), V)
