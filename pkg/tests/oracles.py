"""Independent reference implementations used only by the tests.

These are deliberately slow and loop based so they share no code path with
the package.
"""

import cmath
import math

import numpy as np


def jacobi_eigvalsh(S, sweeps=100, tol=1e-15):
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending."""
    A = np.array(S, dtype=np.float64)
    n = A.shape[0]
    scale = max(1.0, float(np.abs(A).max()))
    for _ in range(sweeps):
        off = math.sqrt(max(0.0, float(np.sum(A * A) - np.sum(np.diag(A) ** 2))))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300 + 1e-18 * (abs(A[p, p]) + abs(A[q, q])):
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = A[p].copy(), A[q].copy()
                A[p], A[q] = c * rp - s * rq, s * rp + c * rq
                cp, cq = A[:, p].copy(), A[:, q].copy()
                A[:, p], A[:, q] = c * cp - s * cq, s * cp + c * cq
    return np.sort(np.diag(A))


def singular_values_jacobi(M):
    """Singular values from the Jacobi eigenvalues of the smaller Gram matrix, descending."""
    M = np.asarray(M, dtype=np.float64)
    G = M.T @ M if M.shape[0] >= M.shape[1] else M @ M.T
    return np.sqrt(np.clip(jacobi_eigvalsh(G), 0.0, None))[::-1]


def conv_cyclic_loops(A, x):
    """Cyclic cross-correlation ``y[o, i, j] = sum A[r, c, o, k] x[k, i + r, j + c]``."""
    A = np.asarray(A, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    kh, kw, co, ci = A.shape
    _, H, W = x.shape
    y = np.zeros((co, H, W))
    for o in range(co):
        for i in range(H):
            for j in range(W):
                acc = 0.0
                for r in range(kh):
                    for c in range(kw):
                        for k in range(ci):
                            acc += A[r, c, o, k] * x[k, (i + r) % H, (j + c) % W]
                y[o, i, j] = acc
    return y


def conv_zero_pad_loops(A, x):
    """Zero-padded correlation with centred taps: tap r reads offset ``r - (K - 1) // 2``."""
    A = np.asarray(A, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    kh, kw, co, ci = A.shape
    _, H, W = x.shape
    ch, cw = (kh - 1) // 2, (kw - 1) // 2
    y = np.zeros((co, H, W))
    for o in range(co):
        for i in range(H):
            for j in range(W):
                acc = 0.0
                for r in range(kh):
                    for c in range(kw):
                        ii, jj = i + r - ch, j + c - cw
                        if 0 <= ii < H and 0 <= jj < W:
                            acc += A[r, c, o] @ x[:, ii, jj]
                y[o, i, j] = acc
    return y


def dense_operator(apply, in_shape):
    """Matrix of a linear map on arrays of `in_shape`, built column by column."""
    size = int(np.prod(in_shape))
    cols = []
    for k in range(size):
        e = np.zeros(size)
        e[k] = 1.0
        cols.append(np.ravel(apply(e.reshape(in_shape))))
    return np.stack(cols, axis=1)


def block_conv_loops(X, Y):
    """2-D block convolution straight from the definition with out-of-range blocks zero."""
    xh, xw, co, _ = X.shape
    yh, yw, _, ci = Y.shape
    Z = np.zeros((xh + yh - 1, xw + yw - 1, co, ci))
    for i in range(Z.shape[0]):
        for j in range(Z.shape[1]):
            for a in range(xh):
                for b in range(xw):
                    r, c = i - a, j - b
                    if 0 <= r < yh and 0 <= c < yw:
                        Z[i, j] += X[a, b] @ Y[r, c]
    return Z


def dft_symbol_loops(A, H, W, f1, f2):
    """``sum_{r,c} A[r, c] exp(2 pi i (r f1 / H + c f2 / W))`` at one frequency."""
    kh, kw, co, ci = A.shape
    F = np.zeros((co, ci), dtype=complex)
    for r in range(kh):
        for c in range(kw):
            F += A[r, c] * cmath.exp(2j * math.pi * (r * f1 / H + c * f2 / W))
    return F


def polar_factor(M):
    """Orthogonal polar factor ``U V^T`` from a full SVD."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=np.float64), full_matrices=False)
    return U @ Vt


def pairwise_lipschitz(f, xs, ys):
    """Largest ``||f(x) - f(y)|| / ||x - y||`` over paired samples."""
    best = 0.0
    for x, y in zip(xs, ys):
        d = np.linalg.norm(np.ravel(x) - np.ravel(y))
        if d > 0:
            best = max(best, np.linalg.norm(np.ravel(f(x)) - np.ravel(f(y))) / d)
    return best
