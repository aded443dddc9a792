"""Invariants that separate connected components of orthogonal convolutions.

For a 1-D kernel ``A = H □ [P_1, I-P_1] □ ... □ [P_{K-1}, I-P_{K-1}]`` the
taps are fixed integer combinations of the matrices

    B_k = sum over binary tuples d with |d| = k of  H prod_i [(1 - d_i) P_i + d_i I]

and the triangular map between taps and ``B`` can be inverted from the
kernel alone. ``Tr(H^T B_{K-2})`` equals the sum of projector ranks, a
continuous integer-valued function, so kernels with different rank sums lie
in different components.
"""

from __future__ import annotations

import itertools
import warnings
from math import comb

import numpy as np

from . import linalg
from .blockconv import as_kernel, kernel_orthogonality_residual
from .errors import InvalidKernelError, PreconditionError, ShapeError, SignatureWarning

ORTHO_TOL = 1e-6


def decomposition_coefficient(K: int, j: int, i: int) -> int:
    """Integer weight of ``B_i`` in tap ``A_j``: ``(-1)^(j-i) C(K-1-i, j-i)``."""
    if not (0 <= i <= K - 1 and 0 <= j <= K - 1):
        raise PreconditionError(f"indices (j={j}, i={i}) out of range for K={K}")
    if i > j:
        return 0
    return (-1) ** (j - i) * comb(K - 1 - i, j - i)


def coefficient_table(K: int) -> np.ndarray:
    return np.array([[decomposition_coefficient(K, j, i) for i in range(K)] for j in range(K)])


def b_direct(H, projectors, k: int) -> np.ndarray:
    """``B_k`` summed directly over all weight-k binary tuples."""
    H = linalg.as_matrix(H, "H")
    K = len(projectors) + 1
    if not 0 <= k <= K - 1:
        raise PreconditionError(f"k={k} out of range for K={K}")
    n = H.shape[1]
    eye = np.eye(n)
    total = np.zeros(H.shape)
    for picks in itertools.combinations(range(K - 1), k):
        prod = H
        for idx, P in enumerate(projectors):
            prod = prod @ (eye if idx in picks else P)
        total += prod
    return total


def _as_1d(kernel):
    A = as_kernel(kernel)
    if A.ndim == 4:
        if A.shape[0] == 1:
            A = A[0]
        elif A.shape[1] == 1:
            A = A[:, 0]
        else:
            raise ShapeError("expected a 1-D kernel")
    return A


def b_sequence_from_kernel(kernel) -> list:
    """Recover ``[B_0, ..., B_{K-1}]`` from the taps via the triangular recursion."""
    A = _as_1d(kernel)
    K = A.shape[0]
    B = []
    for j in range(K):
        acc = A[j].copy()
        for k in range(j):
            acc -= decomposition_coefficient(K, j, k) * B[k]
        B.append(acc)
    return B


def _validate(kernel, tol):
    res = kernel_orthogonality_residual(kernel)
    if res > tol:
        raise InvalidKernelError(f"kernel is not orthogonal (residual {res:.3g} > {tol:.3g})")


def recover_h(kernel, tol: float = 1e-3) -> np.ndarray:
    """The orthogonal factor ``H = sum_j A_j``."""
    A = _as_1d(kernel)
    H = A.sum(axis=0)
    if linalg.orthogonality_residual(H) > tol:
        raise InvalidKernelError("sum of taps is not orthogonal; kernel is invalid")
    return H


def sock_invariant(kernel, tol: float = ORTHO_TOL) -> float:
    """``Tr(H^T B_{K-2})``; equals the projector rank sum, and 0 for K = 1."""
    A = _as_1d(kernel)
    if A.shape[1] != A.shape[2]:
        raise ShapeError("the trace invariant needs square taps")
    _validate(A, tol)
    K = A.shape[0]
    if K == 1:
        return 0.0
    H = recover_h(A)
    B = b_sequence_from_kernel(A)
    return float(np.trace(H.T @ B[K - 2]))


def _rank_with_warning(M, what):
    s = linalg.singular_values(M)
    if s.size == 0 or s[0] == 0.0:
        return 0
    thresh = linalg.RANK_TOL * s[0]
    near = (s > thresh / 10.0) & (s < thresh * 10.0)
    if np.any(near):
        warnings.warn(f"{what}: singular value near the rank threshold, signature unreliable",
                      SignatureWarning, stacklevel=3)
    return int(np.count_nonzero(s > thresh))


def component_signature_2x2(kernel, tol: float = ORTHO_TOL, projector_tol: float = 1e-4):
    """``(det_sign, rank P, rank Q)`` for a 2 x 2 orthogonal kernel.

    With ``H = (A_1 + A_2 + A_3 + A_4)^T`` and ``~A_i = H A_i`` (blocks
    ``A_1 = A[0,0], A_2 = A[0,1], A_3 = A[1,0], A_4 = A[1,1]``), both
    ``P = ~A_1 + ~A_2`` and ``Q = ~A_1 + ~A_3`` are symmetric projectors.
    """
    A = as_kernel(kernel)
    if A.ndim != 4 or A.shape[:2] != (2, 2):
        raise ShapeError("component signature is defined for 2 x 2 kernels")
    if A.shape[2] != A.shape[3]:
        raise ShapeError("component signature needs square blocks")
    _validate(A, tol)
    total = A.sum(axis=(0, 1))
    H = total.T
    At = np.einsum("ij,rcjk->rcik", H, A)
    P = At[0, 0] + At[0, 1]
    Q = At[0, 0] + At[1, 0]
    for name, M in (("P", P), ("Q", Q)):
        res = max(np.linalg.norm(M - M.T), np.linalg.norm(M @ M - M))
        if res > projector_tol:
            raise InvalidKernelError(f"{name} is not a projector (residual {res:.3g})")
    det_sign = 1 if np.linalg.det(total) > 0 else -1
    return det_sign, _rank_with_warning(P, "P"), _rank_with_warning(Q, "Q")


def signature_projectors(kernel):
    """The ``P`` and ``Q`` matrices used by :func:`component_signature_2x2`."""
    A = as_kernel(kernel)
    H = A.sum(axis=(0, 1)).T
    At = np.einsum("ij,rcjk->rcik", H, A)
    return At[0, 0] + At[0, 1], At[0, 0] + At[1, 0]
