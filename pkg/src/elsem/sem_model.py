"""Recursive structural equation models without measurement error.

The model is ``Y = B Y + Gamma X + eps`` with ``Cov(X, eps) = 0``, ``Psi =
Var(eps)`` diagonal and ``Phi = Var(X)`` free. With ``A = I - B``::

    Sigma_yy = A^-1 (Gamma Phi Gamma' + Psi) A^-T
    Sigma_yx = A^-1 Gamma Phi
    Sigma_xx = Phi

Parameter vector layout (``theta``): the free regression coefficients in the
order listed in ``SemSpec.free``, then ``psi_1..psi_d``, then the lower
triangle of ``Phi`` row by row (``phi_11, phi_21, phi_22, ...``) when ``Phi`` is
free.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import numkit
from .errors import NotLocallyIdentified, SingularA

__all__ = [
    "SemSpec",
    "SemParams",
    "DataMatrix",
    "sem22_spec",
    "sem22_params",
    "structured_sigma",
    "jacobian_delta",
    "sigma_derivatives",
    "sample_cov",
    "el_weighted_cov",
    "residuals",
]

FD_STEP = 1e-6
RANK_TOL = 1e-8


@dataclass(frozen=True)
class SemSpec:
    """Topology of a recursive SEM.

    Parameters
    ----------
    d, c : int
        Number of endogenous (``Y``) and exogenous (``X``) variables.
    free : sequence of (matrix, row, col, name)
        Free regression coefficients; ``matrix`` is ``"B"`` or ``"Gamma"``.
        Their order fixes the head of the parameter vector.
    B_fixed, Gamma_fixed : array, optional
        Values of the non-free entries (zero by default).
    phi_free : bool
        Whether ``Phi`` is estimated. When false ``Phi_fixed`` is used.
    """

    d: int
    c: int
    free: tuple = ()
    B_fixed: Optional[np.ndarray] = None
    Gamma_fixed: Optional[np.ndarray] = None
    phi_free: bool = True
    Phi_fixed: Optional[np.ndarray] = None
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        free = tuple((str(m), int(i), int(j), str(name)) for m, i, j, name in self.free)
        object.__setattr__(self, "free", free)
        B0 = np.zeros((self.d, self.d)) if self.B_fixed is None else np.array(self.B_fixed, float)
        G0 = (np.zeros((self.d, self.c)) if self.Gamma_fixed is None
              else np.array(self.Gamma_fixed, float))
        if B0.shape != (self.d, self.d) or G0.shape != (self.d, self.c):
            raise ValueError("fixed matrices have the wrong shape")
        if np.any(np.triu(B0) != 0):
            raise ValueError("B must be strictly lower triangular")
        object.__setattr__(self, "B_fixed", B0)
        object.__setattr__(self, "Gamma_fixed", G0)
        if not self.phi_free:
            if self.Phi_fixed is None:
                raise ValueError("Phi_fixed is required when phi_free is False")
            object.__setattr__(self, "Phi_fixed", numkit.check_symmetric(self.Phi_fixed))
        seen = set()
        for m, i, j, name in free:
            if m == "B":
                if not (0 <= j < i < self.d):
                    raise ValueError(f"free B[{i},{j}] breaks the recursive (lower-triangular) rule")
            elif m == "Gamma":
                if not (0 <= i < self.d and 0 <= j < self.c):
                    raise ValueError(f"Gamma[{i},{j}] out of range")
            else:
                raise ValueError(f"unknown matrix {m!r}")
            if (m, i, j) in seen:
                raise ValueError(f"{m}[{i},{j}] listed twice")
            seen.add((m, i, j))
        if self.q > numkit.vecs_dim(self.p):
            raise ValueError(f"q={self.q} exceeds p(p+1)/2={numkit.vecs_dim(self.p)}")

    @property
    def p(self) -> int:
        return self.d + self.c

    @property
    def n_coef(self) -> int:
        return len(self.free)

    @property
    def n_phi(self) -> int:
        return numkit.vecs_dim(self.c) if self.phi_free else 0

    @property
    def q(self) -> int:
        return self.n_coef + self.d + self.n_phi

    @property
    def param_names(self) -> list[str]:
        names = [f[3] for f in self.free]
        names += [f"psi{i + 1}" for i in range(self.d)]
        if self.phi_free:
            names += [f"phi{i + 1}{j + 1}" for i in range(self.c) for j in range(i + 1)]
        return names

    def index(self, name: str) -> int:
        return self.param_names.index(name)

    def unpack(self, theta):
        """Return ``(B, Gamma, Psi, Phi)`` for a parameter vector."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.q,):
            raise ValueError(f"theta must have length {self.q}, got {theta.shape}")
        B = self.B_fixed.copy()
        G = self.Gamma_fixed.copy()
        for k, (m, i, j, _) in enumerate(self.free):
            (B if m == "B" else G)[i, j] = theta[k]
        off = self.n_coef
        Psi = np.diag(theta[off:off + self.d])
        off += self.d
        if self.phi_free:
            Phi = np.zeros((self.c, self.c))
            r, s = np.tril_indices(self.c)
            Phi[r, s] = theta[off:]
            Phi[s, r] = theta[off:]
        else:
            Phi = self.Phi_fixed.copy()
        return B, G, Psi, Phi

    def pack(self, B, Gamma, Psi, Phi) -> np.ndarray:
        B, Gamma, Psi, Phi = (np.asarray(x, dtype=float) for x in (B, Gamma, Psi, Phi))
        coef = [(B if m == "B" else Gamma)[i, j] for m, i, j, _ in self.free]
        parts = [np.array(coef, dtype=float), np.diag(Psi).astype(float)]
        if self.phi_free:
            parts.append(Phi[np.tril_indices(self.c)])
        return np.concatenate(parts)


@dataclass(frozen=True)
class SemParams:
    """A parameter vector tied to its :class:`SemSpec`."""

    spec: SemSpec
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (self.spec.q,):
            raise ValueError(f"theta must have length {self.spec.q}")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def matrices(self):
        return self.spec.unpack(self.theta)

    def as_dict(self) -> dict:
        return dict(zip(self.spec.param_names, map(float, self.theta)))

    def __getitem__(self, name: str) -> float:
        return float(self.theta[self.spec.index(name)])


def _theta(params) -> np.ndarray:
    return np.asarray(params.theta if isinstance(params, SemParams) else params, dtype=float)


def sem22_spec(fix_beta: bool = False, beta: float = 1.0) -> SemSpec:
    """The two-equation model ``y1 = l1 x2 + e1``, ``y2 = beta y1 + l3 x1 + l2 x2 + e2``.

    Parameter order: ``beta, lambda1, lambda2, lambda3, psi1, psi2, phi11,
    phi21, phi22`` (``beta`` omitted when fixed).
    """
    free = [("Gamma", 0, 1, "lambda1"), ("Gamma", 1, 1, "lambda2"), ("Gamma", 1, 0, "lambda3")]
    B0 = np.zeros((2, 2))
    if fix_beta:
        B0[1, 0] = beta
    else:
        free.insert(0, ("B", 1, 0, "beta"))
    return SemSpec(d=2, c=2, free=tuple(f + () for f in free), B_fixed=B0)


def sem22_params(spec: SemSpec, beta=1.0, lambda1=1.0, lambda2=-1.0, lambda3=0.5,
                 psi=(1.0, 1.0), Phi=np.eye(2)) -> SemParams:
    B = np.array([[0.0, 0.0], [beta, 0.0]])
    G = np.array([[0.0, lambda1], [lambda3, lambda2]])
    return SemParams(spec, spec.pack(B, G, np.diag(psi), Phi))


def _sigma_from_matrices(B, G, Psi, Phi) -> np.ndarray:
    d = B.shape[0]
    A = np.eye(d) - B
    try:
        Ainv = np.linalg.inv(A)
    except np.linalg.LinAlgError:
        raise SingularA("I - B is singular") from None
    if not np.all(np.isfinite(Ainv)) or np.linalg.cond(A) > 1e12:
        raise SingularA("I - B is numerically singular")
    AG = Ainv @ G
    Syx = AG @ Phi
    Syy = AG @ Phi @ AG.T + Ainv @ Psi @ Ainv.T
    S = np.block([[Syy, Syx], [Syx.T, Phi]])
    return (S + S.T) / 2


def structured_sigma(spec: SemSpec, params) -> np.ndarray:
    """Model-implied covariance of ``Z = (Y', X')'``."""
    return _sigma_from_matrices(*spec.unpack(_theta(params)))


def _sigma_stack_fd(fn, x, step_scale=FD_STEP):
    """Central-difference derivatives of a matrix-valued ``fn`` at ``x``.

    Returns an array of shape ``(len(x), p, p)``.
    """
    x = np.asarray(x, dtype=float)
    out = []
    for k in range(x.size):
        h = step_scale * max(1.0, abs(x[k]))
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        out.append((fn(xp) - fn(xm)) / (xp[k] - xm[k]))
    return np.array(out)


def jacobian_delta(spec: SemSpec, params, check_rank: bool = True) -> np.ndarray:
    """``d vecs(Sigma(theta)) / d theta'`` by central differences, shape ``(p(p+1)/2, q)``.

    Raises :class:`NotLocallyIdentified` when ``check_rank`` and the Jacobian
    is rank deficient.
    """
    dS = _sigma_stack_fd(lambda t: structured_sigma(spec, t), _theta(params))
    J = numkit.vecs_many(dS).T
    if check_rank:
        sv = np.linalg.svd(J, compute_uv=False)
        if sv.size < spec.q or sv[-1] <= RANK_TOL * sv[0]:
            raise NotLocallyIdentified(
                f"Jacobian rank deficient (smallest/largest singular value "
                f"{sv[-1] / sv[0]:.3g})")
    return J


def sigma_derivatives(spec: SemSpec, params) -> np.ndarray:
    """Exact ``d Sigma / d theta_k`` for every parameter, shape ``(q, p, p)``.

    Writes ``Z = T (eps', X')'`` with ``T = [[A^-1, A^-1 Gamma], [0, I]]`` and
    ``Var((eps', X')') = blockdiag(Psi, Phi)``, and differentiates
    ``Sigma = T Omega T'`` term by term.
    """
    B, G, Psi, Phi = spec.unpack(_theta(params))
    d, c = spec.d, spec.c
    Ainv = np.linalg.inv(np.eye(d) - B)
    AG = Ainv @ G
    T = np.block([[Ainv, AG], [np.zeros((c, d)), np.eye(c)]])
    Omega = np.zeros((spec.p, spec.p))
    Omega[:d, :d] = Psi
    Omega[d:, d:] = Phi
    TO = T @ Omega
    out = []
    for m, i, j, _ in spec.free:
        dT = np.zeros((spec.p, spec.p))
        if m == "B":
            a = Ainv[:, [i]] @ Ainv[[j], :]           # A^-1 E_ij A^-1
            dT[:d, :d] = a
            dT[:d, d:] = a @ G
        else:
            dT[:d, d + j] = Ainv[:, i]                # A^-1 E_ij
        half = dT @ TO.T
        out.append(half + half.T)
    for i in range(d):
        out.append(np.outer(T[:, i], T[:, i]))
    if spec.phi_free:
        Tx = T[:, d:]
        for r, s_ in zip(*np.tril_indices(c)):
            dS = np.outer(Tx[:, r], Tx[:, s_])
            out.append(dS + dS.T if r != s_ else dS)
    return np.array(out)


@dataclass(frozen=True)
class DataMatrix:
    """``n`` observations of ``Z = (Y', X')'``; the first ``d`` columns are ``Y``."""

    Z: np.ndarray
    d: int
    c: int

    def __post_init__(self):
        Z = np.array(self.Z, dtype=float)
        if Z.ndim != 2 or Z.shape[1] != self.d + self.c:
            raise ValueError(f"Z must be n x {self.d + self.c}")
        if not np.all(np.isfinite(Z)):
            raise ValueError("data must be finite")
        Z.setflags(write=False)
        object.__setattr__(self, "Z", Z)

    @classmethod
    def from_blocks(cls, Y, X) -> "DataMatrix":
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return cls(np.hstack([Y, X]), Y.shape[1], X.shape[1])

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def p(self) -> int:
        return self.d + self.c

    @property
    def Y(self) -> np.ndarray:
        return self.Z[:, :self.d]

    @property
    def X(self) -> np.ndarray:
        return self.Z[:, self.d:]

    @property
    def header(self) -> list[str]:
        return [f"y{i + 1}" for i in range(self.d)] + [f"x{i + 1}" for i in range(self.c)]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for row in self.Z:
            w.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "DataMatrix":
        """Read from a path or CSV text; header must be ``y1..yd, x1..xc``."""
        text = source
        if not (isinstance(source, str) and "\n" in source):
            text = Path(source).read_text()
        rows = list(csv.reader(io.StringIO(text)))
        header = [h.strip() for h in rows[0]]
        ys = [h for h in header if h.startswith("y")]
        xs = [h for h in header if h.startswith("x")]
        expected = [f"y{i + 1}" for i in range(len(ys))] + [f"x{i + 1}" for i in range(len(xs))]
        if header != expected:
            raise ValueError(f"CSV header must be y1..yd, x1..xc; got {header}")
        Z = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        return cls(Z, len(ys), len(xs))


def _as_array(data) -> np.ndarray:
    return data.Z if isinstance(data, DataMatrix) else np.asarray(data, dtype=float)


def sample_cov(data) -> np.ndarray:
    """Covariance with divisor ``n``."""
    Z = _as_array(data)
    Zc = Z - Z.mean(axis=0)
    S = Zc.T @ Zc / Z.shape[0]
    return (S + S.T) / 2


def el_weighted_cov(data, sol) -> np.ndarray:
    """``sum_j pi_j (Z_j - Zbar)(Z_j - Zbar)'`` centred at the unweighted mean.

    ``sol`` is an :class:`~elsem.el_core.ELSolution` or a weight vector.
    """
    Z = _as_array(data)
    w = np.asarray(getattr(sol, "weights", sol), dtype=float)
    if w.shape != (Z.shape[0],):
        raise ValueError(f"{w.size} weights for {Z.shape[0]} observations")
    Zc = Z - Z.mean(axis=0)
    S = (Zc * w[:, None]).T @ Zc
    return (S + S.T) / 2


def residuals(spec: SemSpec, params, data: DataMatrix) -> np.ndarray:
    """Structural residuals ``(I - B) Y_j - Gamma X_j`` on mean-centred data."""
    B, G, _, _ = spec.unpack(_theta(params))
    Yc = data.Y - data.Y.mean(axis=0)
    Xc = data.X - data.X.mean(axis=0)
    return Yc @ (np.eye(spec.d) - B).T - Xc @ G.T
