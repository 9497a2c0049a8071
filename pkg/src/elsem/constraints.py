"""Constraint matrices for two kinds of side information.

``independence``
    The error ``a' eps`` is independent of the covariates ``X``. Encoded by the
    Kronecker product of cosine bases evaluated at the (estimated) probability
    integral transforms of the residual and of ``X``.
``medians``
    The marginal medians of ``X`` are known.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special

from .el_core import ConstraintMatrix

__all__ = [
    "SideInfoSpec",
    "ScalarEdf",
    "MultivariateEdf",
    "trig_basis",
    "edf_scalar",
    "edf_multivariate",
    "independence_constraints",
    "median_constraints",
]

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class SideInfoSpec:
    """What is known beyond the covariance structure.

    Parameters
    ----------
    kind : {"independence", "medians"}
    m : int
        Number of cosine terms per factor (independence); the constraint has
        ``m**2`` components.
    a : sequence of float, optional
        Direction for the scalar error ``a' eps``. Defaults to ``(1, ..., 1)/sqrt(d)``.
    medians : sequence of float, optional
        Known marginal medians of ``X`` (medians kind).
    """

    kind: str = "independence"
    m: int = 1
    a: Optional[Sequence[float]] = None
    medians: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.kind not in ("independence", "medians"):
            raise ValueError(f"unknown side-information kind {self.kind!r}")
        if int(self.m) < 1:
            raise ValueError("m must be at least 1")
        if self.a is not None:
            a = np.asarray(self.a, dtype=float)
            if not np.linalg.norm(a) > 0:
                raise ValueError("direction a must be non-zero")
        if self.medians is not None and not np.all(np.isfinite(np.asarray(self.medians, float))):
            raise ValueError("medians must be finite")

    def direction(self, d: int) -> np.ndarray:
        if self.a is None:
            return np.full(d, 1.0 / np.sqrt(d))
        a = np.asarray(self.a, dtype=float)
        if a.size != d:
            raise ValueError(f"direction a has length {a.size}, residuals have {d} columns")
        return a

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "m": int(self.m),
            "a": None if self.a is None else [float(x) for x in self.a],
            "medians": None if self.medians is None else [float(x) for x in self.medians],
        }


def trig_basis(t, m: int) -> np.ndarray:
    """``sqrt(2) (cos(pi t), ..., cos(m pi t))``.

    Scalar ``t`` gives shape ``(m,)``; an array of ``n`` points gives ``(n, m)``.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > 1) or not np.all(np.isfinite(t_arr)):
        raise ValueError("trig_basis is defined on [0, 1]")
    k = np.arange(1, int(m) + 1)
    return SQRT2 * np.cos(np.pi * np.multiply.outer(t_arr, k))


class ScalarEdf:
    """Rank-based distribution function ``#{x_i <= t} / (n + 1)``."""

    def __init__(self, sample):
        x = np.asarray(sample, dtype=float).ravel()
        if x.size == 0:
            raise ValueError("EDF needs a non-empty sample")
        self.sorted = np.sort(x)
        self.n = x.size
        self.denominator = self.n + 1

    def counts(self, t) -> np.ndarray:
        return np.searchsorted(self.sorted, np.asarray(t, dtype=float), side="right")

    def __call__(self, t):
        return self.counts(t) / self.denominator

    def interpolated(self, t):
        """Piecewise-linear version through ``(x_(k), k/(n+1))``, clipped to [0, 1].

        Continuous in ``t``; used where derivatives with respect to the
        evaluation point are needed.
        """
        levels = np.arange(1, self.n + 1) / self.denominator
        return np.interp(np.asarray(t, dtype=float), self.sorted, levels, left=0.0,
                         right=self.n / self.denominator)

    def bandwidth(self) -> float:
        """Normal-reference bandwidth ``0.9 min(sd, IQR/1.34) n^(-1/5)``."""
        sd = float(np.std(self.sorted, ddof=1)) if self.n > 1 else 0.0
        q75, q25 = np.percentile(self.sorted, [75, 25])
        spread = min(sd, (q75 - q25) / 1.34) or sd or 1.0
        return 0.9 * spread * self.n ** -0.2

    def smoothed(self, t, bandwidth: Optional[float] = None):
        """Gaussian-kernel smoothed distribution function ``n^-1 sum Phi((t - x_i)/h)``.

        Differentiable in ``t`` with a well-behaved derivative (a kernel density
        estimate), unlike the step or interpolated versions whose slopes at the
        sample points are inverse spacings.
        """
        h = self.bandwidth() if bandwidth is None else float(bandwidth)
        t_arr = np.asarray(t, dtype=float)
        flat = t_arr.reshape(-1)
        out = np.empty(flat.size)
        for s in range(0, flat.size, 1024):
            out[s:s + 1024] = special.ndtr(
                (flat[s:s + 1024, None] - self.sorted[None, :]) / h).mean(axis=1)
        return out.reshape(t_arr.shape)


class MultivariateEdf:
    """``G_n(x) = n^-1 #{i : X_i <= x componentwise}``."""

    _CHUNK = 2048

    def __init__(self, sample):
        X = np.asarray(sample, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[1] < 1 or X.shape[0] == 0:
            raise ValueError("EDF needs a non-empty sample with d >= 1")
        self.sample = X
        self.n, self.d = X.shape
        self.denominator = self.n

    def counts(self, x) -> np.ndarray:
        pts = np.asarray(x, dtype=float)
        single = pts.ndim == 0 or (pts.ndim == 1 and self.d > 1)
        pts = pts.reshape(-1, 1) if self.d == 1 else np.atleast_2d(pts)
        out = np.empty(pts.shape[0], dtype=int)
        for s in range(0, pts.shape[0], self._CHUNK):
            block = pts[s:s + self._CHUNK]
            le = np.all(self.sample[None, :, :] <= block[:, None, :], axis=2)
            out[s:s + self._CHUNK] = le.sum(axis=1)
        return out[0] if single else out

    def __call__(self, x):
        return self.counts(x) / self.denominator


def edf_scalar(sample) -> ScalarEdf:
    return ScalarEdf(sample)


def edf_multivariate(sample) -> MultivariateEdf:
    return MultivariateEdf(sample)


def _row_kron(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return (A[:, :, None] * B[:, None, :]).reshape(A.shape[0], -1)


def independence_constraints(residuals, X, spec: SideInfoSpec,
                             F: Optional[Callable] = None,
                             G: Optional[Callable] = None) -> ConstraintMatrix:
    """Rows ``Phi_m(F_n(a' e_j)) kron Phi_m(G_n(X_j))``.

    ``F`` and ``G`` override the empirical distribution functions, e.g. with
    the true ones in simulation checks.
    """
    if spec.kind != "independence":
        raise ValueError("spec.kind must be 'independence'")
    R = np.asarray(residuals, dtype=float)
    if R.ndim == 1:
        R = R[:, None]
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = R.shape[0]
    if X.shape[0] != n:
        raise ValueError("residuals and X must have the same number of rows")
    m = int(spec.m)
    if m * m >= n - 1:
        raise ValueError(f"m**2 = {m * m} constraints need more than {n} observations")
    eps = R @ spec.direction(R.shape[1])
    u_eps = (F or edf_scalar(eps))(eps)
    u_x = (G or edf_multivariate(X))(X)
    return ConstraintMatrix(_row_kron(trig_basis(u_eps, m), trig_basis(u_x, m)))


def median_constraints(X, spec: SideInfoSpec) -> ConstraintMatrix:
    """Rows ``1[X_kj <= m0_k] - 0.5`` for each covariate ``k``."""
    if spec.kind != "medians":
        raise ValueError("spec.kind must be 'medians'")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if spec.medians is None:
        raise ValueError("medians side information needs known medians")
    med = np.asarray(spec.medians, dtype=float)
    if med.size != X.shape[1]:
        raise ValueError(f"{med.size} medians given for {X.shape[1]} covariates")
    return ConstraintMatrix((X <= med[None, :]).astype(float) - 0.5)
