"""Asymptotic covariances of the plain and EL-weighted MDF estimators.

Notation
--------
``w(z) = vecs((z - mu0)(z - mu0)' - Sigma0)`` is the influence of one
observation on the sample covariance. The plain estimator behaves like
``theta0 + A mean(w)`` with ``A = (Delta' H Delta)^-1 Delta' H``, so its
asymptotic covariance is ``V0 = A Var(w) A'``.

The EL-weighted estimator projects ``w`` off the span of
``v(z) = g(z) + E(g_dot) Psi(z)``, ``Psi(z) = A w(z)``, where ``g`` is the
constraint and ``g_dot`` its derivative in ``theta`` (through the stage-one
residuals). With ``c = E(w v')``::

    D = Var(w) - c Var(v)^-1 c'
    V = A D A'

When ``g_dot`` is non-zero the reweighting itself still uses the estimated
constraint, whose values are close to ``g`` rather than ``v``. Linearising the
two-stage estimator as implemented gives
``w - C M^-1 v`` with ``C = E(w g')`` and ``M = E(g g')``; its covariance is
returned by :func:`pipeline_d_matrix`. It coincides with ``D`` when
``g_dot = 0`` (known medians) and need not be below ``Var(w)`` otherwise.

``H0`` is scaled so that the Hessian of the ML discrepancy in ``vecs``
coordinates at ``Sigma0`` equals ``2 H0``; the quadratic form
``vecs(E)' H0 vecs(E)`` is ``tr(Sigma0^-1 E Sigma0^-1 E) / 2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import numkit
from .constraints import SideInfoSpec, edf_scalar
from .errors import IllConditioned, NotLocallyIdentified
from .sem_model import DataMatrix, SemSpec, jacobian_delta, structured_sigma

__all__ = [
    "AsymptoticInputs",
    "w_fn",
    "h0_matrix",
    "sandwich_map",
    "v0_matrix",
    "psi_fn",
    "v_fn",
    "d_matrix",
    "v_matrix",
    "pipeline_d_matrix",
    "pipeline_v_matrix",
    "projection_variance",
    "constraint_jacobian",
    "plugin_inputs",
]

GDOT_STEP = 1e-5


def w_fn(z, mu0, Sigma0) -> np.ndarray:
    """``vecs((z - mu0)(z - mu0)' - Sigma0)``; ``z`` may be one point or ``n`` rows."""
    z = np.asarray(z, dtype=float)
    mu0 = np.asarray(mu0, dtype=float)
    Sigma0 = np.asarray(Sigma0, dtype=float)
    single = z.ndim == 1
    Zc = np.atleast_2d(z) - mu0
    outer = Zc[:, :, None] * Zc[:, None, :] - Sigma0
    W = numkit.vecs_many(outer)
    return W[0] if single else W


def h0_matrix(Sigma0) -> np.ndarray:
    """``D' (Sigma0^-1 kron Sigma0^-1) D / 2`` with ``D`` the duplication matrix."""
    Si = numkit.inv_pd(numkit.check_symmetric(Sigma0))
    D = numkit.duplication_matrix(Si.shape[0])
    H = 0.5 * D.T @ numkit.kron(Si, Si) @ D
    return (H + H.T) / 2


def sandwich_map(Delta, H) -> np.ndarray:
    """``A = (Delta' H Delta)^-1 Delta' H``, the linear map from ``s - sigma`` to ``theta``."""
    Delta = np.asarray(Delta, dtype=float)
    H = np.asarray(H, dtype=float)
    M = Delta.T @ H @ Delta
    sv = np.linalg.svd(Delta, compute_uv=False)
    if sv.size < Delta.shape[1] or sv[-1] <= 1e-10 * sv[0]:
        raise NotLocallyIdentified("Delta is rank deficient")
    return np.linalg.solve((M + M.T) / 2, Delta.T @ H)


def _cov(X, Y=None) -> np.ndarray:
    """Centred cross moment ``n^-1 sum (x_j - xbar)(y_j - ybar)'``."""
    Xc = X - X.mean(axis=0)
    Yc = Xc if Y is None else Y - Y.mean(axis=0)
    C = Xc.T @ Yc / X.shape[0]
    return (C + C.T) / 2 if Y is None else C


@dataclass(frozen=True)
class AsymptoticInputs:
    """Population quantities (or their plug-in estimates) used by the formulas.

    ``c_matrix`` is ``E(w v')`` of shape ``(p(p+1)/2, m)``; ``gdot`` is
    ``E(d g / d theta')`` of shape ``(m, q)``; ``c_wg = E(w g')`` and
    ``m_gg = E(g g')`` (uncentred) describe the constraint actually used for
    reweighting. Everything after ``var_w`` may be ``None`` when only ``V0``
    is needed.
    """

    mu0: np.ndarray
    Sigma0: np.ndarray
    Delta0: np.ndarray
    H0: np.ndarray
    var_w: np.ndarray
    c_matrix: Optional[np.ndarray] = None
    var_v: Optional[np.ndarray] = None
    gdot: Optional[np.ndarray] = None
    c_wg: Optional[np.ndarray] = None
    m_gg: Optional[np.ndarray] = None

    @property
    def A(self) -> np.ndarray:
        return sandwich_map(self.Delta0, self.H0)


def v0_matrix(inputs: AsymptoticInputs) -> np.ndarray:
    """``A Var(w) A'``."""
    A = inputs.A
    V = A @ inputs.var_w @ A.T
    return (V + V.T) / 2


def psi_fn(w_vals, inputs: AsymptoticInputs) -> np.ndarray:
    """``Psi(z) = A w(z)`` for rows of ``w`` values."""
    return np.asarray(w_vals, dtype=float) @ inputs.A.T


def v_fn(g_vals, w_vals, gdot, inputs: AsymptoticInputs) -> np.ndarray:
    """``v(z) = g(z) + E(g_dot) Psi(z)`` for rows of ``g`` and ``w`` values."""
    return np.asarray(g_vals, dtype=float) + psi_fn(w_vals, inputs) @ np.asarray(gdot).T


def d_matrix(inputs: AsymptoticInputs) -> np.ndarray:
    """``Var(w) - c Var(v)^-1 c'``.

    Raises :class:`IllConditioned` when ``Var(v)`` is singular.
    """
    if inputs.c_matrix is None or inputs.var_v is None:
        raise ValueError("c_matrix and var_v are required")
    c = np.asarray(inputs.c_matrix, dtype=float)
    red = c @ numkit.solve_pd(inputs.var_v, c.T)
    D = inputs.var_w - red
    return (D + D.T) / 2


def v_matrix(inputs: AsymptoticInputs) -> np.ndarray:
    """``A D A'``, the asymptotic covariance of the EL-weighted estimator."""
    A = inputs.A
    V = A @ d_matrix(inputs) @ A.T
    return (V + V.T) / 2


def pipeline_d_matrix(inputs: AsymptoticInputs) -> np.ndarray:
    """Covariance of ``w - C M^-1 v``, the linearised EL-weighted covariance estimate.

    Expands to ``Var(w) - K c' - c K' + K Var(v) K'`` with ``K = C M^-1``.
    """
    if inputs.c_wg is None or inputs.m_gg is None:
        raise ValueError("c_wg and m_gg are required")
    K = numkit.solve_pd(inputs.m_gg, np.asarray(inputs.c_wg).T).T
    c = np.asarray(inputs.c_matrix, dtype=float)
    D = inputs.var_w - K @ c.T - c @ K.T + K @ inputs.var_v @ K.T
    return (D + D.T) / 2


def pipeline_v_matrix(inputs: AsymptoticInputs) -> np.ndarray:
    """``A D_pipeline A'``."""
    A = inputs.A
    V = A @ pipeline_d_matrix(inputs) @ A.T
    return (V + V.T) / 2


def projection_variance(psi_vals, u_vals):
    """Empirical variance of ``psi`` before and after projecting off ``u``.

    Returns ``(Sigma_full, Sigma_reduced)`` with ``Sigma_full`` the centred
    covariance of ``psi`` and ``Sigma_reduced = Sigma_full - C W^-1 C'``,
    ``C = n^-1 sum (psi_j - psibar) u_j'`` and ``W = n^-1 sum u_j u_j'``.
    """
    P = np.asarray(psi_vals, dtype=float)
    U = np.asarray(u_vals, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if U.ndim == 1:
        U = U[:, None]
    n = P.shape[0]
    if U.shape[0] != n:
        raise ValueError("psi and u must have the same number of rows")
    full = _cov(P)
    C = (P - P.mean(axis=0)).T @ U / n
    W = U.T @ U / n
    try:
        red = C @ numkit.solve_pd((W + W.T) / 2, C.T)
    except IllConditioned as exc:
        raise IllConditioned("empirical second moment of u is singular", exc.pivot) from None
    reduced = full - (red + red.T) / 2
    return full, reduced


def constraint_jacobian(data: DataMatrix, spec: SemSpec, theta, side: SideInfoSpec,
                        step: float = GDOT_STEP) -> np.ndarray:
    """``n^-1 sum_j d g(Z_j; theta) / d theta'`` by central differences.

    The residual distribution function is frozen at ``theta`` as a
    kernel-smoothed EDF, so the constraint is smooth in ``theta`` and the
    difference quotient estimates the density-weighted derivative. Known-median
    constraints do not depend on ``theta``.
    """
    from .mdf_fit import build_constraints
    theta = np.asarray(theta, dtype=float)
    if side.kind == "medians":
        m = len(side.medians)
        return np.zeros((m, theta.size))
    from .sem_model import residuals
    eps = residuals(spec, theta, data) @ side.direction(spec.d)
    F = edf_scalar(eps).smoothed
    cols = []
    for k in range(theta.size):
        h = step * max(1.0, abs(theta[k]))
        tp, tm = theta.copy(), theta.copy()
        tp[k] += h
        tm[k] -= h
        gp = build_constraints(data, spec, tp, side, F=F).rows.mean(axis=0)
        gm = build_constraints(data, spec, tm, side, F=F).rows.mean(axis=0)
        cols.append((gp - gm) / (2 * h))
    return np.column_stack(cols)


def plugin_inputs(data: DataMatrix, spec: SemSpec, theta,
                  side: Optional[SideInfoSpec] = None, theta_constraint=None,
                  constraint_rows=None) -> AsymptoticInputs:
    """Plug-in estimates of every population moment at a fitted ``theta``.

    ``theta_constraint`` is the parameter at which the constraints are built
    (the stage-one estimate in the EL pipeline); it defaults to ``theta``.
    ``constraint_rows`` overrides the constraint evaluation.
    """
    from .mdf_fit import build_constraints
    theta = np.asarray(theta, dtype=float)
    Z = data.Z
    mu0 = Z.mean(axis=0)
    Sigma0 = structured_sigma(spec, theta)
    Delta0 = jacobian_delta(spec, theta)
    H0 = h0_matrix(Sigma0)
    W = w_fn(Z, mu0, Sigma0)
    var_w = _cov(W)
    if side is None:
        return AsymptoticInputs(mu0, Sigma0, Delta0, H0, var_w)
    th_c = theta if theta_constraint is None else np.asarray(theta_constraint, dtype=float)
    G = (np.asarray(getattr(constraint_rows, "rows", constraint_rows), dtype=float)
         if constraint_rows is not None
         else build_constraints(data, spec, th_c, side).rows)
    gdot = constraint_jacobian(data, spec, th_c, side)
    base = AsymptoticInputs(mu0, Sigma0, Delta0, H0, var_w)
    V = v_fn(G, W, gdot, base)
    n = Z.shape[0]
    Wc = W - W.mean(axis=0)
    c = Wc.T @ (V - V.mean(axis=0)) / n
    c_wg = Wc.T @ G / n
    m_gg = G.T @ G / n
    return AsymptoticInputs(mu0, Sigma0, Delta0, H0, var_w, c, _cov(V), gdot, c_wg,
                            (m_gg + m_gg.T) / 2)
