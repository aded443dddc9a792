"""Dense linear-algebra primitives.

Matrices are plain 2-D float64 numpy arrays. Every public routine rejects
non-finite input with :class:`~orthoconv.errors.DataError`.
"""

from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np

from .errors import DataError, PreconditionError, RankDeficiencyWarning, ShapeError

BJORCK_ITERS = 20
POWER_ITERS = 10
RANK_TOL = 1e-6
# Safety factor on the power-iteration estimate used before Björck.
PRESCALE_MARGIN = 1e-3
_BJORCK_NORM_SLACK = 1e-9


class SvdResult(NamedTuple):
    singular_values: np.ndarray
    left: np.ndarray
    right: np.ndarray


def as_matrix(M, name="matrix") -> np.ndarray:
    """Return `M` as a finite 2-D float64 array or raise."""
    A = np.asarray(M, dtype=np.float64)
    if A.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise DataError(f"{name} contains non-finite entries")
    return A


def svd(M) -> SvdResult:
    """Thin SVD with singular values sorted descending.

    ``left @ diag(singular_values) @ right.T`` reconstructs `M`.
    """
    A = as_matrix(M)
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    return SvdResult(s, u, vt.T)


def singular_values(M) -> np.ndarray:
    """All ``min(rows, cols)`` singular values, descending."""
    A = as_matrix(M)
    if A.size == 0:
        return np.zeros(0)
    return np.linalg.svd(A, compute_uv=False)


def spectral_norm(M) -> float:
    s = singular_values(M)
    return float(s[0]) if s.size else 0.0


def matrix_rank(M, rel_tol: float = RANK_TOL) -> int:
    """Count singular values above ``rel_tol * sigma_max``."""
    if not 0.0 < rel_tol < 1.0:
        raise PreconditionError("rel_tol must lie in (0, 1)")
    s = singular_values(M)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))


def power_iteration(M, iters: int = POWER_ITERS, seed: int = 0):
    """Estimate the largest singular value of `M`.

    Alternates ``M v`` and ``M.T u`` from a seeded Gaussian start. The
    returned estimate is ``||M v||`` for a unit vector `v`, so it never
    exceeds the true spectral norm.

    Returns
    -------
    sigma_est : float
    u : ndarray, shape (rows,)
    v : ndarray, shape (cols,)
    """
    A = as_matrix(M)
    if iters < 1:
        raise PreconditionError("power_iteration needs iters >= 1")
    rows, cols = A.shape
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(cols)
    v /= np.linalg.norm(v)
    u = np.zeros(rows)
    if rows:
        u[0] = 1.0
    for _ in range(iters):
        w = A @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0, u, v
        u = w / nw
        z = A.T @ u
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return 0.0, u, v
        v = z / nz
    return float(np.linalg.norm(A @ v)), u, v


def orthogonality_residual(A) -> float:
    """Frobenius norm of ``A.T A - I`` (columns) for tall matrices, ``A A.T - I`` for wide."""
    A = as_matrix(A)
    if A.shape[0] >= A.shape[1]:
        G = A.T @ A
    else:
        G = A @ A.T
    return float(np.linalg.norm(G - np.eye(G.shape[0])))


def bjorck(A, iters: int = BJORCK_ITERS) -> np.ndarray:
    """First-order Björck orthogonalization of a tall matrix.

    Iterates ``A <- A (I + Q/2)`` with ``Q = I - A.T A``. The input must
    already have spectral norm at most 1; use :func:`orthogonalize` for
    arbitrary matrices.
    """
    A = as_matrix(A, "bjorck input")
    rows, cols = A.shape
    if rows < cols:
        raise ShapeError("bjorck expects rows >= cols; transpose wide inputs")
    if cols == 0:
        return A.copy()
    # sigma_max^2 from the small Gram matrix is cheaper than a full SVD
    gram_top = float(np.linalg.eigvalsh(A.T @ A)[-1])
    if gram_top > (1.0 + _BJORCK_NORM_SLACK) ** 2:
        raise PreconditionError(
            f"bjorck input has spectral norm {np.sqrt(gram_top):.6g} > 1; pre-scale it"
        )
    eye = np.eye(cols)
    for _ in range(iters):
        A = A @ (eye + 0.5 * (eye - A.T @ A))
    return A


def _prescale(A, power_iters, seed):
    sigma, _, _ = power_iteration(A, power_iters, seed)
    if sigma == 0.0:
        return A
    A = A / (sigma * (1.0 + PRESCALE_MARGIN))
    top = float(np.linalg.eigvalsh(A.T @ A)[-1]) if A.shape[1] else 0.0
    if top > 1.0:
        # power iteration undershot by more than the margin; use the exact norm
        A = A / (np.sqrt(top) * (1.0 + PRESCALE_MARGIN))
    return A


def orthogonalize(
    M,
    bjorck_iters: int = BJORCK_ITERS,
    power_iters: int = POWER_ITERS,
    seed: int = 0,
) -> np.ndarray:
    """Closest matrix with orthonormal rows or columns (whichever is fewer).

    Power iteration rescales `M` below unit spectral norm, then Björck runs
    on the tall orientation. Björck is scale-invariant at convergence, so the
    rescaling does not change the limit.
    """
    A = as_matrix(M)
    wide = A.shape[0] < A.shape[1]
    if wide:
        A = A.T
    A = bjorck(_prescale(A, power_iters, seed), bjorck_iters)
    return A.T if wide else A


def projector_from_raw(
    R,
    bjorck_iters: int = BJORCK_ITERS,
    power_iters: int = POWER_ITERS,
    seed: int = 0,
) -> np.ndarray:
    """Symmetric projector ``R~ R~^T`` onto the column space of `R`.

    `R` is n x k with k <= n. A rank-deficient `R` yields a projector of
    lower rank and a :class:`RankDeficiencyWarning`.
    """
    R = as_matrix(R, "projector factor")
    n, k = R.shape
    if k > n:
        raise ShapeError(f"projector factor must have k <= n columns, got {R.shape}")
    if k == 0:
        return np.zeros((n, n))
    rank = matrix_rank(R)
    if rank < k:
        warnings.warn(
            f"projector factor has rank {rank} < {k}; projector rank is degraded",
            RankDeficiencyWarning,
            stacklevel=2,
        )
    Rt = bjorck(_prescale(R, power_iters, seed), bjorck_iters)
    P = Rt @ Rt.T
    return 0.5 * (P + P.T)


def is_projector(P, tol: float = 1e-8) -> bool:
    P = as_matrix(P)
    if P.shape[0] != P.shape[1]:
        return False
    return bool(np.linalg.norm(P - P.T) <= tol and np.linalg.norm(P @ P - P) <= tol)


def random_orthogonal(n: int, rng: np.random.Generator, special: bool = False) -> np.ndarray:
    """Haar-distributed orthogonal matrix; ``special=True`` forces det = +1."""
    Z = rng.standard_normal((n, n))
    Q, R = np.linalg.qr(Z)
    Q = Q * np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))
    if special and n and np.linalg.det(Q) < 0:
        Q[0] = -Q[0]
    return Q


def random_projector(n: int, rank: int, rng: np.random.Generator) -> np.ndarray:
    """Symmetric projector of exactly the given rank onto a random subspace."""
    if not 0 <= rank <= n:
        raise PreconditionError(f"projector rank {rank} infeasible for n = {n}")
    if rank == 0:
        return np.zeros((n, n))
    Q, _ = np.linalg.qr(rng.standard_normal((n, rank)))
    P = Q @ Q.T
    return 0.5 * (P + P.T)
