"""Minimum-discrepancy fitting of covariance structures.

Two discrepancies are available:

* ML:  ``F = log|Sigma| - log|S| + tr(S Sigma^-1) - p``
* GLS: ``F = tr((S - Sigma) W^-1 (S - Sigma) W^-1)``

:func:`fit_plain` fits the sample covariance. :func:`fit_el` first fits the
sample covariance, builds side-information constraints, reweights the sample by
empirical likelihood and refits the reweighted covariance.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy import optimize

from . import el_core, numkit
from .constraints import SideInfoSpec, independence_constraints, median_constraints
from .errors import IllConditioned, MaxIterations, NotInHull, SingularA
from .sem_model import (DataMatrix, SemParams, SemSpec, _sigma_from_matrices,
                        el_weighted_cov, jacobian_delta, residuals, sample_cov,
                        sigma_derivatives)

__all__ = [
    "DiscrepancyKind",
    "FitResult",
    "f_ml",
    "f_gls",
    "discrepancy",
    "discrepancy_gradient",
    "initial_params",
    "fit_mdf",
    "fit_plain",
    "fit_el",
    "build_constraints",
]

GRAD_TOL = 1e-8
MAX_ITER = 500
MAX_RESTARTS = 5


@dataclass(frozen=True)
class DiscrepancyKind:
    """Which discrepancy to minimise.

    ``gls_weight`` is ``"sample_cov"`` (the unweighted sample covariance),
    ``"identity"`` or an explicit symmetric positive-definite matrix. It is
    ignored for ML.
    """

    variant: str = "ML"
    gls_weight: Union[str, np.ndarray] = "sample_cov"

    def __post_init__(self):
        variant = str(self.variant).upper()
        if variant not in ("ML", "GLS"):
            raise ValueError(f"unknown discrepancy {self.variant!r}")
        object.__setattr__(self, "variant", variant)
        w = self.gls_weight
        if isinstance(w, str):
            if w not in ("sample_cov", "identity"):
                raise ValueError(f"unknown GLS weight {w!r}")
        else:
            W = numkit.check_symmetric(w)
            numkit.cholesky(W)
            object.__setattr__(self, "gls_weight", W)

    def resolve_weight(self, sample: np.ndarray) -> Optional[np.ndarray]:
        if self.variant == "ML":
            return None
        if isinstance(self.gls_weight, np.ndarray):
            return self.gls_weight
        if self.gls_weight == "identity":
            return np.eye(sample.shape[0])
        return sample

    def as_dict(self) -> dict:
        w = self.gls_weight
        return {"variant": self.variant,
                "gls_weight": w if isinstance(w, str) else np.asarray(w).tolist()}


def f_ml(S, Sigma) -> float:
    """ML discrepancy between two positive-definite matrices."""
    S = np.asarray(S, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    L = numkit.cholesky(Sigma)
    ld_s = numkit.logdet_pd(S)
    ld_sig = 2.0 * np.sum(np.log(np.diag(L)))
    tr = np.trace(numkit.solve_pd(Sigma, S))
    return float(ld_sig - ld_s + tr - S.shape[0])


def f_gls(S, Sigma, W) -> float:
    """GLS discrepancy with weight matrix ``W`` (positive definite)."""
    R = np.asarray(S, dtype=float) - np.asarray(Sigma, dtype=float)
    M = numkit.solve_pd(np.asarray(W, dtype=float), R)
    return float(np.sum(M * M.T))


def discrepancy(kind: DiscrepancyKind, S, Sigma, W=None) -> float:
    if kind.variant == "ML":
        return f_ml(S, Sigma)
    return f_gls(S, Sigma, kind.resolve_weight(np.asarray(S)) if W is None else W)


def discrepancy_gradient(kind: DiscrepancyKind, S, Sigma, W=None) -> np.ndarray:
    """``dF/dSigma`` treating the entries of ``Sigma`` as unconstrained."""
    if kind.variant == "ML":
        Si = numkit.inv_pd(Sigma)
        # Si (Sigma - S) Si avoids the cancellation in Si - Si S Si
        G = Si @ (Sigma - S) @ Si
    else:
        W = kind.resolve_weight(np.asarray(S)) if W is None else W
        Wi = numkit.inv_pd(W)
        G = -2.0 * Wi @ (S - Sigma) @ Wi
    return (G + G.T) / 2


# -- internal parameterisation ------------------------------------------------
# Coefficients are kept as is, psi on the log scale and Phi through its
# Cholesky factor with a log diagonal, so every internal point is admissible.

def _to_internal(spec: SemSpec, theta: np.ndarray) -> np.ndarray:
    k = spec.n_coef
    psi = theta[k:k + spec.d]
    if np.any(psi <= 0):
        raise ValueError("initial psi must be positive")
    parts = [theta[:k], np.log(psi)]
    if spec.phi_free:
        _, _, _, Phi = spec.unpack(theta)
        L = numkit.cholesky(Phi)
        L[np.diag_indices(spec.c)] = np.log(np.diag(L))
        parts.append(L[np.tril_indices(spec.c)])
    return np.concatenate(parts)


def _to_theta(spec: SemSpec, eta: np.ndarray) -> np.ndarray:
    k = spec.n_coef
    parts = [eta[:k], np.exp(eta[k:k + spec.d])]
    if spec.phi_free:
        L = np.zeros((spec.c, spec.c))
        L[np.tril_indices(spec.c)] = eta[k + spec.d:]
        L[np.diag_indices(spec.c)] = np.exp(np.diag(L))
        Phi = L @ L.T
        parts.append(Phi[np.tril_indices(spec.c)])
    return np.concatenate(parts)


def _theta_jacobian(spec: SemSpec, eta: np.ndarray) -> np.ndarray:
    """``d theta / d eta'`` for the internal parameterisation."""
    k, d, c = spec.n_coef, spec.d, spec.c
    J = np.zeros((spec.q, spec.q))
    J[:k, :k] = np.eye(k)
    J[k:k + d, k:k + d] = np.diag(np.exp(eta[k:k + d]))
    if spec.phi_free:
        L = np.zeros((c, c))
        L[np.tril_indices(c)] = eta[k + d:]
        L[np.diag_indices(c)] = np.exp(np.diag(L))
        for col, (a, b) in enumerate(zip(*np.tril_indices(c))):
            dL = np.zeros((c, c))
            dL[a, b] = L[a, b] if a == b else 1.0
            dPhi = dL @ L.T + L @ dL.T
            J[k + d:, k + d + col] = dPhi[np.tril_indices(c)]
    return J


def initial_params(target, spec: SemSpec) -> np.ndarray:
    """Equation-by-equation least squares computed from a covariance matrix.

    Free coefficients of equation ``i`` come from regressing ``y_i`` (less its
    fixed terms) on its free regressors; ``psi_i`` is the residual variance and
    ``Phi`` the ``X`` block of ``target``.
    """
    S = np.asarray(target, dtype=float)
    d, c = spec.d, spec.c
    B = spec.B_fixed.copy()
    G = spec.Gamma_fixed.copy()
    psi = np.empty(d)
    for i in range(d):
        # coefficient vector on the full Z = (Y, X) for equation i
        fixed = np.concatenate([B[i], G[i]])
        cols = [j if m == "B" else d + j for m, r, j, _ in spec.free if r == i]
        a = np.zeros(d + c)
        a[i] = 1.0
        a -= fixed
        # y_i - fixed terms has covariance a' S a and covariance S[cols] a with regressors
        if cols:
            Szz = S[np.ix_(cols, cols)]
            Szy = S[cols] @ a
            coef = np.linalg.lstsq(Szz, Szy, rcond=None)[0]
            for (m, r, j, _), v in zip([f for f in spec.free if f[1] == i], coef):
                (B if m == "B" else G)[r, j] = v
            a[cols] -= coef
        psi[i] = max(float(a @ S @ a), 1e-6 * max(1.0, S[i, i]))
    Phi = S[d:, d:] if spec.phi_free else spec.Phi_fixed
    return spec.pack(B, G, np.diag(psi), Phi)


@dataclass
class FitResult:
    """Outcome of a discrepancy fit.

    ``theta_hat`` is ``None`` only for skipped fits. ``stage1`` holds the
    first-stage fit of the EL pipeline and ``el_solution`` its weights.
    """

    theta_hat: Optional[SemParams]
    discrepancy_value: float = np.nan
    gradient_norm: float = np.nan
    iterations: int = 0
    converged: bool = False
    avar: Optional[np.ndarray] = None
    skipped_reason: Optional[str] = None
    trace: list = field(default_factory=list)
    restarts: int = 0
    stage1: Optional["FitResult"] = None
    el_solution: Optional[el_core.ELSolution] = None
    gradient_floor: float = 0.0

    @property
    def skipped(self) -> bool:
        return self.skipped_reason is not None

    def to_row(self) -> dict:
        row = {}
        if self.theta_hat is not None:
            row.update(self.theta_hat.as_dict())
        row.update(discrepancy=self.discrepancy_value, gradient_norm=self.gradient_norm,
                   iterations=self.iterations, converged=self.converged,
                   skipped_reason=self.skipped_reason or "")
        return row

    def to_text(self) -> str:
        if self.theta_hat is None:
            return f"fit skipped: {self.skipped_reason}"
        se = (np.sqrt(np.clip(np.diag(self.avar), 0, None)) if self.avar is not None
              else np.full(self.theta_hat.theta.size, np.nan))
        lines = [f"{'param':>8} {'estimate':>12} {'std.err':>12}"]
        for name, v, s in zip(self.theta_hat.spec.param_names, self.theta_hat.theta, se):
            lines.append(f"{name:>8} {v:12.6f} {s:12.6f}")
        lines.append(f"discrepancy = {self.discrepancy_value:.6g}, "
                     f"|grad| = {self.gradient_norm:.3g}, iterations = {self.iterations}, "
                     f"converged = {self.converged}")
        return "\n".join(lines)


class _Objective:
    """Discrepancy as a function of the internal parameters, with its gradient."""

    def __init__(self, target, spec, kind, W):
        self.S = target
        self.spec = spec
        self.kind = kind
        self.W = W
        self.Wi = None if W is None else numkit.inv_pd(W)

    def sigma(self, eta):
        return _sigma_from_matrices(*self.spec.unpack(_to_theta(self.spec, eta)))

    def value(self, eta):
        try:
            Sig = self.sigma(eta)
            return discrepancy(self.kind, self.S, Sig, self.W)
        except (IllConditioned, SingularA, FloatingPointError):
            return np.inf

    def dsigma(self, eta):
        dS = sigma_derivatives(self.spec, _to_theta(self.spec, eta))
        return np.einsum("lk,lij->kij", _theta_jacobian(self.spec, eta), dS)

    def grad(self, eta):
        try:
            Sig = self.sigma(eta)
            G = discrepancy_gradient(self.kind, self.S, Sig, self.W)
        except (IllConditioned, SingularA, FloatingPointError):
            # trial point outside the admissible region (value is inf there);
            # the line search only needs a finite vector to backtrack from
            return np.zeros(eta.size)
        return np.einsum("kij,ij->k", self.dsigma(eta), G)

    def fisher(self, eta):
        """Expected Hessian at ``Sigma(eta)``; seeds the quasi-Newton update."""
        dS = self.dsigma(eta)
        M = self.Wi if self.W is not None else numkit.inv_pd(self.sigma(eta))
        P = np.einsum("ij,kjl->kil", M, dS)          # M dSigma_k
        F = np.einsum("kij,lji->kl", P, P)           # tr(M dS_k M dS_l)
        if self.kind.variant == "GLS":
            F *= 2.0
        return (F + F.T) / 2


def _theta_gradient(spec, target, kind, W, theta) -> np.ndarray:
    Sig = _sigma_from_matrices(*spec.unpack(theta))
    G = discrepancy_gradient(kind, target, Sig, W)
    return np.einsum("kij,ij->k", sigma_derivatives(spec, theta), G)


def _gradient_floor(spec, target, kind, W, theta, seed: int = 0) -> float:
    """Rounding level of the parameter gradient at ``theta``.

    Measured as the largest change of the gradient under relative
    perturbations of ``theta`` of order ``1e-13``, which move the point by a
    few hundred units in the last place. For well-conditioned problems this is
    far below the default tolerance; it dominates as ``Sigma`` nears
    singularity, e.g. with vanishing error variances.
    """
    g0 = _theta_gradient(spec, target, kind, W, theta)
    rng = np.random.default_rng(seed)
    spread = 0.0
    for _ in range(3):
        t = theta * (1.0 + 1e-13 * rng.standard_normal(theta.size))
        try:
            spread = max(spread, float(np.linalg.norm(
                _theta_gradient(spec, target, kind, W, t) - g0)))
        except (IllConditioned, SingularA):
            return np.inf
    return 10.0 * spread


def _polish(obj, spec, S, kind, W, eta, f, trace, tol, steps: int = 5):
    """Fisher-scoring steps judged by the gradient norm instead of the value.

    Near the minimum the decrease in the discrepancy is below its rounding
    error, so line searches stall while the gradient is still informative.
    A step is kept only if it shrinks the gradient without raising the value
    beyond rounding level.
    """
    gnorm = float(np.linalg.norm(_theta_gradient(spec, S, kind, W, _to_theta(spec, eta))))
    for _ in range(steps):
        if gnorm <= 1e-2 * tol:
            break
        try:
            step = numkit.solve_pd(obj.fisher(eta), obj.grad(eta))
        except IllConditioned:
            break
        cand = eta - step
        fc = obj.value(cand)
        if not np.isfinite(fc) or fc > f + 1e-13 * max(1.0, abs(f)):
            break
        gc = float(np.linalg.norm(_theta_gradient(spec, S, kind, W, _to_theta(spec, cand))))
        if gc >= gnorm:
            break
        eta, gnorm = cand, gc
        if fc <= f:
            f = fc
            trace.append(fc)
    return eta, f, gnorm


def fit_mdf(target, spec: SemSpec, kind: DiscrepancyKind = DiscrepancyKind(),
            init=None, weight=None, tol: float = GRAD_TOL, max_iter: int = MAX_ITER,
            max_restarts: int = MAX_RESTARTS, check_identified: bool = True) -> FitResult:
    """Minimise ``F(target, Sigma(theta))`` over ``theta``.

    Parameters
    ----------
    target : (p, p) array
        Covariance to fit (sample or EL-weighted).
    init : SemParams or array, optional
        Starting value; defaults to :func:`initial_params`.
    weight : array, optional
        GLS weight overriding ``kind.gls_weight``.
    tol : float
        Convergence threshold on the Euclidean norm of ``dF/dtheta``. When the
        gradient cannot be evaluated that accurately (nearly singular
        ``Sigma``) its rounding level, reported as ``gradient_floor``, is used
        instead.

    Raises
    ------
    MaxIterations
        Not converged after ``max_restarts`` perturbed restarts. The best fit is
        attached as ``exc.result``.
    NotLocallyIdentified
        The Jacobian is rank deficient at the solution.
    """
    S = numkit.check_symmetric(target)
    numkit.cholesky(S)
    W = weight if weight is not None else kind.resolve_weight(S)
    if kind.variant == "GLS":
        numkit.cholesky(W)
    theta0 = (initial_params(S, spec) if init is None
              else np.asarray(getattr(init, "theta", init), dtype=float))
    obj = _Objective(S, spec, kind, W)
    eta_best = _to_internal(spec, theta0)
    f_best = obj.value(eta_best)
    trace = [f_best]
    rng = np.random.default_rng(0)  # fixed: restarts must be reproducible
    iterations = 0
    restarts = 0
    start = eta_best
    while True:
        try:
            H0 = numkit.inv_pd(obj.fisher(start))
            H0 = (H0 + H0.T) / 2
            numkit.cholesky(H0)
        except (IllConditioned, np.linalg.LinAlgError):
            H0 = np.eye(start.size)
        values = []
        res = optimize.minimize(
            obj.value, start, jac=obj.grad, method="BFGS",
            callback=lambda intermediate_result: values.append(intermediate_result.fun),
            options={"gtol": tol * 1e-2, "maxiter": max(1, max_iter - iterations),
                     "hess_inv0": H0, "c1": 1e-4})
        iterations += res.nit
        if res.fun <= f_best:
            eta_best, f_best = res.x, float(res.fun)
            trace.extend(v for v in values if v <= trace[-1])
        floor = _gradient_floor(spec, S, kind, W, _to_theta(spec, eta_best))
        eff_tol = max(tol, floor)
        eta_best, f_best, gnorm = _polish(obj, spec, S, kind, W, eta_best, f_best, trace,
                                           eff_tol)
        if gnorm <= eff_tol or iterations >= max_iter or restarts >= max_restarts:
            break
        # the first restart only refreshes the curvature estimate; later ones
        # also perturb the best point
        scale = 1e-4 * restarts
        start = eta_best + scale * rng.standard_normal(eta_best.size) * np.maximum(
            1.0, np.abs(eta_best))
        restarts += 1
    eta = eta_best
    theta = _to_theta(spec, eta)
    if check_identified:
        jacobian_delta(spec, theta, check_rank=True)
    result = FitResult(SemParams(spec, theta), float(f_best), gnorm, iterations,
                       gnorm <= eff_tol, trace=trace, restarts=restarts,
                       gradient_floor=floor)
    if not result.converged:
        err = MaxIterations(f"MDF fit did not reach |grad| <= {tol:g} "
                            f"(|grad| = {gnorm:.3g} after {iterations} iterations)")
        err.result = result
        raise err
    return result


def fit_plain(data: DataMatrix, spec: SemSpec, kind: DiscrepancyKind = DiscrepancyKind(),
              compute_avar: bool = False, **kwargs) -> FitResult:
    """Fit the structured covariance to the sample covariance (divisor ``n``)."""
    S = sample_cov(data)
    res = fit_mdf(S, spec, kind, **kwargs)
    if compute_avar:
        from .asymptotics import plugin_inputs, v0_matrix
        inp = plugin_inputs(data, spec, res.theta_hat.theta)
        res.avar = v0_matrix(inp) / data.n
    return res


ConstraintBuilder = Callable[[DataMatrix, SemSpec, np.ndarray], el_core.ConstraintMatrix]


def build_constraints(data: DataMatrix, spec: SemSpec, theta, side: SideInfoSpec,
                      F=None) -> el_core.ConstraintMatrix:
    """Constraint rows for ``side`` at parameter ``theta``.

    For the independence kind the residuals at ``theta`` are used; ``F``
    optionally replaces the residual EDF.
    """
    if side.kind == "medians":
        return median_constraints(data.X, side)
    return independence_constraints(residuals(spec, theta, data), data.X, side, F=F)


def fit_el(data: DataMatrix, spec: SemSpec, kind: DiscrepancyKind = DiscrepancyKind(),
           side: SideInfoSpec = SideInfoSpec(), constraint_builder: Optional[ConstraintBuilder] = None,
           solver: Optional[el_core.SolverOptions] = None, compute_avar: bool = False,
           **kwargs) -> FitResult:
    """Two-stage EL-weighted MDF estimator.

    1. plain fit on the sample covariance;
    2. constraint rows from the side information (residual based for the
       independence kind);
    3. EL weights and the reweighted covariance;
    4. refit from the stage-one estimate.

    An EL problem without a solution (zero outside the convex hull or no
    convergence) is reported through ``skipped_reason``; a singular constraint
    matrix raises :class:`~elsem.errors.DegenerateConstraints`.
    The GLS ``"sample_cov"`` weight stays the unweighted sample covariance in
    both stages.
    """
    S = sample_cov(data)
    stage1 = fit_mdf(S, spec, kind, **kwargs)
    theta1 = stage1.theta_hat.theta
    builder = constraint_builder or (lambda dat, sp, th: build_constraints(dat, sp, th, side))
    U = builder(data, spec, theta1)
    try:
        sol = el_core.solve_dual(U, solver)
    except (NotInHull, MaxIterations) as exc:
        return FitResult(None, skipped_reason=f"{type(exc).__name__}: {exc}", stage1=stage1)
    S_el = el_weighted_cov(data, sol)
    W = kind.resolve_weight(S) if kind.variant == "GLS" else None
    kw = dict(kwargs)
    kw.pop("init", None)
    res = fit_mdf(S_el, spec, kind, init=theta1, weight=W, **kw)
    res.stage1 = stage1
    res.el_solution = sol
    if compute_avar:
        from .asymptotics import pipeline_v_matrix, plugin_inputs
        inp = plugin_inputs(data, spec, res.theta_hat.theta, side=side,
                            theta_constraint=theta1, constraint_rows=U)
        res.avar = pipeline_v_matrix(inp) / data.n
    return res
