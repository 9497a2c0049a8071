"""Small dense linear-algebra helpers.

The half-vectorization used throughout the package (``vecs``) stacks the
upper triangle column by column::

    [[a, b, d],
     [b, c, e],      ->  (a, b, c, d, e, f)
     [d, e, f]]
"""
from __future__ import annotations

import numpy as np
from scipy import linalg

from .errors import IllConditioned

SYMMETRY_TOL = 1e-12
SOLVE_RESIDUAL_TOL = 1e-10


def _upper_indices(p: int):
    rows, cols = [], []
    for j in range(p):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
    return np.array(rows, dtype=int), np.array(cols, dtype=int)


def vecs_dim(p: int) -> int:
    return p * (p + 1) // 2


def dim_from_vecs(k: int) -> int:
    """Return ``p`` with ``p(p+1)/2 == k``; raise if ``k`` is not triangular."""
    p = int(round((np.sqrt(8 * k + 1) - 1) / 2))
    if p < 1 or vecs_dim(p) != k:
        raise ValueError(f"length {k} is not a triangular number")
    return p


def check_symmetric(M, tol: float = SYMMETRY_TOL) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M))) if M.size else 1.0)
    if np.max(np.abs(M - M.T), initial=0.0) > tol * scale:
        raise ValueError("matrix is not symmetric")
    return M


def vecs(M) -> np.ndarray:
    """Column-stacked upper triangle of a symmetric matrix."""
    M = check_symmetric(M)
    rows, cols = _upper_indices(M.shape[0])
    return M[rows, cols].copy()


def unvecs(v) -> np.ndarray:
    """Inverse of :func:`vecs`."""
    v = np.asarray(v, dtype=float).ravel()
    p = dim_from_vecs(v.size)
    rows, cols = _upper_indices(p)
    M = np.zeros((p, p))
    M[rows, cols] = v
    M[cols, rows] = v
    return M


def vecs_many(Ms) -> np.ndarray:
    """Apply :func:`vecs` along the leading axis of a ``(n, p, p)`` stack.

    No symmetry check; callers pass matrices that are symmetric by construction.
    """
    Ms = np.asarray(Ms, dtype=float)
    rows, cols = _upper_indices(Ms.shape[-1])
    return Ms[..., rows, cols]


def duplication_matrix(p: int) -> np.ndarray:
    """Matrix ``D`` with ``vec(M) == D @ vecs(M)`` for symmetric ``M``.

    ``vec`` is column-major stacking.
    """
    rows, cols = _upper_indices(p)
    D = np.zeros((p * p, rows.size))
    for k, (i, j) in enumerate(zip(rows, cols)):
        D[j * p + i, k] = 1.0
        D[i * p + j, k] = 1.0
    return D


def kron(A, B) -> np.ndarray:
    return np.kron(np.atleast_1d(np.asarray(A, dtype=float)),
                   np.atleast_1d(np.asarray(B, dtype=float)))


def eigen_bounds(S) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix."""
    S = check_symmetric(S)
    ev = np.linalg.eigvalsh(S)
    return float(ev[0]), float(ev[-1])


def spectral_norm(M) -> float:
    """Largest singular value."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return float(np.linalg.norm(M, 2))


def _first_bad_pivot(S: np.ndarray) -> float:
    # unblocked Cholesky, only used to report where factorization broke down
    p = S.shape[0]
    L = np.zeros_like(S)
    for j in range(p):
        d = S[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0:
            return float(d)
        L[j, j] = np.sqrt(d)
        L[j + 1:, j] = (S[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return float(np.min(np.diag(L)) ** 2)


def cholesky(S) -> np.ndarray:
    """Lower Cholesky factor; raises :class:`IllConditioned` when ``S`` is not PD."""
    S = np.asarray(S, dtype=float)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pivot = _first_bad_pivot(S)
        raise IllConditioned(f"matrix is not positive definite (pivot {pivot:.3g})",
                             pivot=pivot) from None


def solve_pd(S, b) -> np.ndarray:
    """Solve ``S x = b`` for symmetric positive definite ``S``."""
    S = check_symmetric(S)
    L = cholesky(S)
    return linalg.cho_solve((L, True), np.asarray(b, dtype=float))


def inv_pd(S) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    return solve_pd(S, np.eye(S.shape[0]))


def logdet_pd(S) -> float:
    L = cholesky(S)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def min_psd_eigenvalue(M) -> float:
    """Smallest eigenvalue of the symmetric part of ``M``."""
    M = np.asarray(M, dtype=float)
    return float(np.linalg.eigvalsh((M + M.T) / 2)[0])
