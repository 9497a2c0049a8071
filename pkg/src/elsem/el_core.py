"""Empirical-likelihood weights from a matrix of constraint evaluations.

Given rows ``u_1, ..., u_n`` in ``R^m`` the EL weights are

    pi_j = 1 / (n (1 + zeta' u_j)),

where ``zeta`` solves ``sum_j u_j / (1 + zeta' u_j) = 0``. The multiplier is
found by damped Newton on the convex dual ``f(zeta) = -sum_j log(1 + zeta' u_j)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numkit
from .errors import DegenerateConstraints, MaxIterations, NotInHull

__all__ = [
    "ConstraintMatrix",
    "SolverOptions",
    "ELDiagnostics",
    "ELSolution",
    "BoundReport",
    "diagnostics",
    "solve_dual",
    "weighted_mean",
    "verify_lemma_bounds",
    "quartic_moment_bound",
]

MIN_DENOMINATOR = 1e-10
DEGENERACY_TOL = 1e-12


@dataclass(frozen=True)
class ConstraintMatrix:
    """``n x m`` matrix whose row ``j`` is the constraint evaluated at ``Z_j``."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim == 1:
            rows = rows[:, None]
        if rows.ndim != 2:
            raise ValueError("constraint rows must form a 2-d array")
        n, m = rows.shape
        if n < m + 1:
            raise ValueError(f"need n >= m + 1 rows, got n={n}, m={m}")
        if not np.all(np.isfinite(rows)):
            raise ValueError("constraint rows must be finite")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def m(self) -> int:
        return self.rows.shape[1]


def _rows(U) -> np.ndarray:
    if isinstance(U, ConstraintMatrix):
        return U.rows
    return ConstraintMatrix(U).rows


@dataclass(frozen=True)
class SolverOptions:
    tol_stat: float = 1e-10
    max_iter: int = 100
    min_denominator: float = MIN_DENOMINATOR
    # extra Newton steps after the tolerance is met; they push the weight sum to
    # machine precision
    polish_steps: int = 3


@dataclass(frozen=True)
class ELDiagnostics:
    x_bar_norm: float
    x_star: float
    lambda_n: float
    Lambda_n: float
    owen_condition: bool
    zeta_bound: float

    def as_dict(self) -> dict:
        return {
            "x_bar_norm": self.x_bar_norm,
            "x_star": self.x_star,
            "lambda_n": self.lambda_n,
            "Lambda_n": self.Lambda_n,
            "owen_condition": self.owen_condition,
            "zeta_bound": self.zeta_bound,
        }


@dataclass(frozen=True)
class ELSolution:
    zeta: np.ndarray
    weights: np.ndarray
    log_el: float
    diagnostics: ELDiagnostics
    converged: bool
    iterations: int
    stat_norm: float = field(default=0.0)

    @property
    def n(self) -> int:
        return self.weights.size

    @property
    def log_el_ratio(self) -> float:
        """``sum_j log(n pi_j)``; always ``<= 0``."""
        return self.log_el + self.n * np.log(self.n)

    @classmethod
    def uniform(cls, n: int, m: int = 1) -> "ELSolution":
        """The solution for constraints whose column means are already zero."""
        diag = ELDiagnostics(0.0, 0.0, np.nan, np.nan, False, np.inf)
        return cls(np.zeros(m), np.full(n, 1.0 / n), -n * np.log(n), diag, True, 0)


def diagnostics(U) -> ELDiagnostics:
    """Quantities that control existence and size of the multiplier.

    ``owen_condition`` is ``lambda_n > 5 |x_bar| x_star``; under it the dual has
    a unique root and the bounds checked by :func:`verify_lemma_bounds` apply.
    """
    X = _rows(U)
    n = X.shape[0]
    x_bar_norm = float(np.linalg.norm(X.mean(axis=0)))
    x_star = float(np.max(np.linalg.norm(X, axis=1)))
    S = X.T @ X / n
    lam, Lam = numkit.eigen_bounds((S + S.T) / 2)
    gap = lam - x_bar_norm * x_star
    zeta_bound = x_bar_norm / gap if gap > 0 else np.inf
    owen = bool(lam > 5.0 * x_bar_norm * x_star)
    return ELDiagnostics(x_bar_norm, x_star, lam, Lam, owen, float(zeta_bound))


def _dual_value(X, zeta):
    d = 1.0 + X @ zeta
    return -np.sum(np.log(d)), d


def solve_dual(U, opts: SolverOptions | None = None) -> ELSolution:
    """Solve for the EL multiplier and weights.

    Raises
    ------
    DegenerateConstraints
        The constraint second-moment matrix is numerically singular.
    NotInHull
        The Newton iteration diverges, which happens when zero is not strictly
        inside the convex hull of the rows.
    MaxIterations
        No convergence after ``opts.max_iter`` Newton steps.
    """
    opts = opts or SolverOptions()
    X = _rows(U)
    n, m = X.shape
    diag = diagnostics(X)
    if not diag.lambda_n > DEGENERACY_TOL * max(1.0, diag.Lambda_n):
        raise DegenerateConstraints(
            f"constraint second-moment matrix is singular (lambda_min={diag.lambda_n:.3g})")

    tol = opts.tol_stat * n
    zeta = np.zeros(m)
    f, d = _dual_value(X, zeta)
    converged = False
    polish = 0
    it = 0
    for it in range(1, opts.max_iter + 1):
        Xd = X / d[:, None]
        stat = Xd.sum(axis=0)           # equals -grad f
        gnorm = np.linalg.norm(stat)
        # zeta' stat = n - sum_j 1/d_j, so the second test makes the weights sum
        # to one; without it a diverging zeta (zero outside the hull) would pass
        if gnorm <= tol and abs(zeta @ stat) <= tol:
            converged = True
            if polish >= opts.polish_steps:
                break
            polish += 1
        hess = Xd.T @ Xd
        try:
            step = numkit.solve_pd((hess + hess.T) / 2, stat)
        except Exception:
            raise NotInHull("dual Hessian became singular") from None
        t = 1.0
        while True:
            cand = zeta + t * step
            dc = 1.0 + X @ cand
            if np.all(dc >= opts.min_denominator):
                fc = -np.sum(np.log(dc))
                if fc <= f:
                    break
                # close to the optimum the decrease in f drops below its
                # rounding error; a smaller stationarity residual still counts
                if fc - f <= 1e-12 * max(1.0, abs(f)) and (
                        np.linalg.norm((X / dc[:, None]).sum(axis=0)) < gnorm):
                    break
            t *= 0.5
            if t < 1e-20:
                if converged:
                    break
                raise NotInHull("line search collapsed; zero is likely outside the hull")
        if t < 1e-20:
            break
        zeta, f, d = cand, fc, dc
        if not np.all(np.isfinite(zeta)) or np.linalg.norm(zeta) > 1e12:
            raise NotInHull("multiplier diverged; zero is outside the convex hull")
    else:
        Xd = X / d[:, None]
        stat = Xd.sum(axis=0)
        gnorm = np.linalg.norm(stat)
        if gnorm > tol or abs(zeta @ stat) > tol:
            if np.linalg.norm(zeta) * diag.x_star > 1e6:
                raise NotInHull("multiplier diverged; zero is outside the convex hull")
            raise MaxIterations(f"EL dual did not converge in {opts.max_iter} iterations "
                                f"(|stat|={gnorm:.3g})")
        converged = True

    weights = 1.0 / (n * d)
    stat_norm = float(np.linalg.norm((X / d[:, None]).sum(axis=0)))
    return ELSolution(zeta=zeta, weights=weights, log_el=float(np.sum(np.log(weights))),
                      diagnostics=diag, converged=converged, iterations=it,
                      stat_norm=stat_norm)


def weighted_mean(sol: ELSolution, values) -> np.ndarray:
    """EL-weighted mean ``sum_j pi_j values_j``."""
    V = np.asarray(values, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[0] != sol.weights.size:
        raise ValueError(f"values have {V.shape[0]} rows, weights have {sol.weights.size}")
    return sol.weights @ V


def quartic_moment_bound(X, n_directions: int = 64, extra_directions=(), seed: int = 0,
                         refine: int = 25) -> float:
    """Estimate ``sup_{|u|=1} n^-1 sum_j (u' x_j)^4``.

    Evaluates random unit directions, the top eigenvector of ``X'X/n`` and any
    ``extra_directions``, each refined by fixed-point ascent. The result is a
    lower estimate of the supremum (exact when ``m == 1``).
    """
    X = np.asarray(X, dtype=float)
    n, m = X.shape
    if m == 1:
        return float(np.mean(X[:, 0] ** 4))
    rng = np.random.default_rng(seed)
    dirs = [rng.standard_normal((n_directions, m))]
    _, vecs_ = np.linalg.eigh(X.T @ X / n)
    dirs.append(vecs_[:, -1][None, :])
    for e in extra_directions:
        e = np.asarray(e, dtype=float)
        if np.linalg.norm(e) > 0:
            dirs.append(e[None, :])
    U = np.vstack(dirs)
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    for _ in range(refine):
        proj = X @ U.T                                  # n x k
        U_new = (proj ** 3).T @ X                       # k x m
        norms = np.linalg.norm(U_new, axis=1, keepdims=True)
        U = np.where(norms > 0, U_new / np.where(norms > 0, norms, 1.0), U)
    return float(np.max(np.mean((X @ U.T) ** 4, axis=0)))


@dataclass(frozen=True)
class BoundReport:
    """Outcome of checking the multiplier against its a-priori bounds.

    ``applicable`` mirrors the diagnostics' ``owen_condition``; the bounds are only
    guaranteed when it is true.
    """

    applicable: bool
    o3: bool
    o4: bool
    o6: bool
    o9: bool
    values: dict

    @property
    def all_hold(self) -> bool:
        return self.o3 and self.o4 and self.o6 and self.o9


def verify_lemma_bounds(sol: ELSolution, U, rtol: float = 1e-9) -> BoundReport:
    X = _rows(U)
    n = X.shape[0]
    diag = sol.diagnostics
    zeta = np.asarray(sol.zeta, dtype=float)
    znorm = float(np.linalg.norm(zeta))
    x_bar = X.mean(axis=0)
    S = X.T @ X / n
    lam, Lam = diag.lambda_n, diag.Lambda_n
    xb, xs = diag.x_bar_norm, diag.x_star
    gap = lam - xb * xs
    slack = lambda v: rtol * max(1.0, abs(v))  # noqa: E731

    bound3 = xb / gap if gap > 0 else np.inf
    o3 = znorm <= bound3 + slack(bound3)
    o4 = znorm * xs < 0.25
    quad = float(zeta @ S @ zeta)
    bound6 = Lam * xb ** 2 / gap ** 2 if gap > 0 else np.inf
    o6 = quad <= bound6 + slack(bound6)
    x4 = quartic_moment_bound(X, extra_directions=[zeta])
    lhs9 = float(np.sum((zeta - np.linalg.solve(S, x_bar)) ** 2))
    bound9 = 2.0 * (1.0 / lam + Lam / (9.0 * lam ** 2)) * znorm ** 4 * x4
    o9 = lhs9 <= bound9 + slack(bound9) + 1e-24
    values = {
        "zeta_norm": znorm, "bound_o3": bound3, "zeta_x_star": znorm * xs,
        "zeta_S_zeta": quad, "bound_o6": bound6, "lhs_o9": lhs9, "bound_o9": bound9,
        "x4": x4,
    }
    return BoundReport(diag.owen_condition, bool(o3), bool(o4), bool(o6), bool(o9), values)
