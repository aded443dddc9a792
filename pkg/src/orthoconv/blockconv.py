"""Convolution kernels as arrays of matrix blocks.

Conventions used throughout the package:

* A 1-D kernel is an array of shape ``(K, c_out, c_in)``; tap ``j`` is the
  block ``A_j``.
* A 2-D kernel has shape ``(K_h, K_w, c_out, c_in)``; ``A[r, c]`` sits at row
  offset ``r`` and column offset ``c``.
* Spatial tensors are ``(channels, length)`` or ``(channels, height, width)``.
* Convolution is cross-correlation with cyclic wrap:
  ``y[:, i, j] = sum_{r,c} A[r, c] @ x[:, (i + r) % H, (j + c) % W]``.
  Under this convention ``(X □ Y) * v == X * (Y * v)``.
* ``vec`` ordering of a tensor is channel-major, then row, then column
  (plain C order of the array).
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, ShapeError


def as_kernel(kernel, name="kernel") -> np.ndarray:
    """Validate a 1-D (ndim 3) or 2-D (ndim 4) kernel and return it as float64."""
    A = np.asarray(kernel, dtype=np.float64)
    if A.ndim not in (3, 4):
        raise ShapeError(f"{name} must have 3 (1-D) or 4 (2-D) dims, got shape {A.shape}")
    if min(A.shape[: A.ndim - 2]) < 1:
        raise ShapeError(f"{name} needs at least one tap")
    if not np.all(np.isfinite(A)):
        raise DataError(f"{name} contains non-finite entries")
    return A


def to_2d(kernel) -> np.ndarray:
    """View a 1-D kernel as a 2-D kernel with a single tap row."""
    A = as_kernel(kernel)
    return A[None] if A.ndim == 3 else A


def identity_kernel(n: int, ndim: int = 2) -> np.ndarray:
    eye = np.eye(n)
    return eye[None] if ndim == 1 else eye[None, None]


def column_kernel(blocks) -> np.ndarray:
    """Stack blocks vertically: ``[B_0; B_1; ...]`` as a ``(K, 1, ., .)`` kernel."""
    return np.stack([np.asarray(b, dtype=np.float64) for b in blocks])[:, None]


def row_kernel(blocks) -> np.ndarray:
    """Place blocks side by side: ``[B_0, B_1, ...]`` as a ``(1, K, ., .)`` kernel."""
    return np.stack([np.asarray(b, dtype=np.float64) for b in blocks])[None]


def _spatial_shape(spatial, ndim):
    if ndim == 3:
        if not np.isscalar(spatial):
            (spatial,) = spatial
        return (1, int(spatial))
    if np.isscalar(spatial):
        return (int(spatial), int(spatial))
    h, w = spatial
    return (int(h), int(w))


def _check_fits(A2, shape):
    kh, kw = A2.shape[:2]
    if shape[0] < kh or shape[1] < kw:
        raise ShapeError(f"spatial size {shape} is smaller than kernel extent {(kh, kw)}")


def block_conv_2d(X, Y) -> np.ndarray:
    """Block convolution ``Z[i, j] = sum X[i', j'] @ Y[i - i', j - j']``."""
    X = as_kernel(X, "X")
    Y = as_kernel(Y, "Y")
    if X.ndim != 4 or Y.ndim != 4:
        raise ShapeError("block_conv_2d expects 2-D kernels")
    if X.shape[3] != Y.shape[2]:
        raise ShapeError(f"channel mismatch: X.c_in={X.shape[3]} vs Y.c_out={Y.shape[2]}")
    xh, xw, co, _ = X.shape
    yh, yw, _, ci = Y.shape
    Z = np.zeros((xh + yh - 1, xw + yw - 1, co, ci))
    for a in range(xh):
        for b in range(xw):
            # X[a, b] @ Y[r, c] for every tap of Y, shifted by (a, b)
            Z[a : a + yh, b : b + yw] += np.einsum("ij,rcjk->rcik", X[a, b], Y)
    return Z


def block_conv_1d(X, Y) -> np.ndarray:
    """Block convolution of tap sequences, ``Z_i = sum_j X_j @ Y_{i-j}``."""
    X = as_kernel(X, "X")
    Y = as_kernel(Y, "Y")
    if X.ndim != 3 or Y.ndim != 3:
        raise ShapeError("block_conv_1d expects 1-D kernels")
    return block_conv_2d(X[None], Y[None])[0]


def block_conv(X, Y) -> np.ndarray:
    """Dispatch on kernel dimensionality; mixed 1-D/2-D operands are lifted to 2-D."""
    X = as_kernel(X, "X")
    Y = as_kernel(Y, "Y")
    if X.ndim == Y.ndim == 3:
        return block_conv_1d(X, Y)
    return block_conv_2d(to_2d(X), to_2d(Y))


def _as_input(kernel, x):
    A = as_kernel(kernel)
    v = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise DataError("input tensor contains non-finite entries")
    if A.ndim == 3:
        if v.ndim != 2:
            raise ShapeError(f"1-D kernel needs a (channels, length) input, got {v.shape}")
        return A[None], v[:, None, :], True
    if v.ndim != 3:
        raise ShapeError(f"2-D kernel needs a (channels, height, width) input, got {v.shape}")
    return A, v, False


def apply_conv_cyclic(kernel, x) -> np.ndarray:
    """Apply a kernel to a spatial tensor with cyclic padding; output keeps the spatial size."""
    A, v, one_d = _as_input(kernel, x)
    kh, kw, co, ci = A.shape
    if v.shape[0] != ci:
        raise ShapeError(f"input has {v.shape[0]} channels, kernel expects {ci}")
    _check_fits(A, v.shape[1:])
    y = np.zeros((co,) + v.shape[1:])
    for r in range(kh):
        for c in range(kw):
            shifted = np.roll(v, shift=(-r, -c), axis=(1, 2))
            y += np.tensordot(A[r, c], shifted, axes=(1, 0))
    return y[:, 0, :] if one_d else y


def apply_conv_transpose_cyclic(kernel, y) -> np.ndarray:
    """Adjoint of :func:`apply_conv_cyclic` (maps c_out channels back to c_in)."""
    A, v, one_d = _as_input(kernel, y)
    kh, kw, co, ci = A.shape
    if v.shape[0] != co:
        raise ShapeError(f"input has {v.shape[0]} channels, adjoint expects {co}")
    _check_fits(A, v.shape[1:])
    x = np.zeros((ci,) + v.shape[1:])
    for r in range(kh):
        for c in range(kw):
            shifted = np.roll(v, shift=(r, c), axis=(1, 2))
            x += np.tensordot(A[r, c].T, shifted, axes=(1, 0))
    return x[:, 0, :] if one_d else x


def _assemble(A2, shape, site_map, layout):
    kh, kw, co, ci = A2.shape
    h, w = shape
    S = h * w
    M = np.zeros((co * S, ci * S))
    out_sites = np.arange(S)
    for r in range(kh):
        for c in range(kw):
            src, keep = site_map(r, c)
            o_idx, i_idx = out_sites[keep], src[keep]
            for o in range(co):
                for i in range(ci):
                    if layout == "channel":
                        M[o * S + o_idx, i * S + i_idx] += A2[r, c, o, i]
                    else:
                        M[o_idx * co + o, i_idx * ci + i] += A2[r, c, o, i]
    return M


def operator_matrix_cyclic(kernel, spatial, layout: str = "channel") -> np.ndarray:
    """Dense matrix of the cyclic convolution operator.

    With the default ``layout="channel"`` the matrix acts on ``x.ravel()``.
    ``layout="site"`` orders unknowns site-major (all channels of one pixel
    contiguous), which exposes the block-circulant pattern directly.
    """
    A = as_kernel(kernel)
    A2 = to_2d(A)
    shape = _spatial_shape(spatial, A.ndim)
    _check_fits(A2, shape)
    h, w = shape
    rows, cols = np.divmod(np.arange(h * w), w)

    def site_map(r, c):
        src = ((rows + r) % h) * w + (cols + c) % w
        return src, np.ones(h * w, dtype=bool)

    if layout not in ("channel", "site"):
        raise ValueError("layout must be 'channel' or 'site'")
    return _assemble(A2, shape, site_map, layout)


def operator_matrix_zero_pad(kernel, spatial, layout: str = "channel") -> np.ndarray:
    """Dense matrix of the zero-padded ("same" size) convolution.

    Taps are centred: tap ``j`` of a length-K kernel reads offset
    ``j - (K - 1) // 2``, so ``[A_-1, A_0, A_1]`` puts ``A_0`` on the block
    diagonal. Reads that fall outside the input are dropped.
    """
    A = as_kernel(kernel)
    A2 = to_2d(A)
    shape = _spatial_shape(spatial, A.ndim)
    _check_fits(A2, shape)
    h, w = shape
    kh, kw = A2.shape[:2]
    ch, cw = (kh - 1) // 2, (kw - 1) // 2
    rows, cols = np.divmod(np.arange(h * w), w)

    def site_map(r, c):
        rr, cc = rows + r - ch, cols + c - cw
        keep = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        return np.where(keep, rr * w + cc, 0), keep

    return _assemble(A2, shape, site_map, layout)


def conv_symbols(kernel, spatial) -> np.ndarray:
    """Per-frequency matrices ``sum_{r,c} A[r,c] w_h^(r f1) w_w^(c f2)``.

    Returns shape ``(H, W, c_out, c_in)``, complex. The cyclic operator is
    block-diagonalised by the 2-D DFT, so its singular values are the union
    of the singular values of these matrices.
    """
    A = as_kernel(kernel)
    A2 = to_2d(A)
    h, w = _spatial_shape(spatial, A.ndim)
    _check_fits(A2, (h, w))
    kh, kw = A2.shape[:2]
    padded = np.zeros((h, w) + A2.shape[2:])
    padded[:kh, :kw] = A2
    # conjugating the unnormalised forward transform keeps the identity exact
    return np.conj(np.fft.fft2(padded, axes=(0, 1)))


def conv_singular_values_dft(kernel, spatial) -> np.ndarray:
    """All ``min(c_out, c_in) * S`` operator singular values, sorted descending."""
    F = conv_symbols(kernel, spatial)
    s = np.linalg.svd(F, compute_uv=False).ravel()
    return np.sort(s)[::-1]


def operator_spectral_norm(kernel, spatial) -> float:
    return float(conv_singular_values_dft(kernel, spatial)[0])


def kernel_orthogonality_residual(kernel) -> float:
    """Size-independent orthogonality defect of a cyclic convolution kernel.

    Measures ``sum_m ||sum_t A_t A_{t+m}^T - delta_m I||_F^2`` over all tap
    displacements ``m`` (square root returned). It vanishes exactly when the
    operator has orthonormal rows for every spatial size at least
    ``2K - 1``, where no wrap-around aliasing occurs.
    """
    A2 = to_2d(kernel)
    kh, kw, co, _ = A2.shape
    total = 0.0
    for dr in range(-(kh - 1), kh):
        for dc in range(-(kw - 1), kw):
            acc = np.zeros((co, co))
            for r in range(max(0, -dr), min(kh, kh - dr)):
                for c in range(max(0, -dc), min(kw, kw - dc)):
                    acc += A2[r, c] @ A2[r + dr, c + dc].T
            if dr == 0 and dc == 0:
                acc -= np.eye(co)
            total += float(np.sum(acc * acc))
    return float(np.sqrt(total))


def is_orthogonal_kernel(kernel, tol: float = 1e-6) -> bool:
    return kernel_orthogonality_residual(kernel) <= tol


def is_zero_pad_orthogonal(kernel, spatial: int, tol: float = 1e-6) -> bool:
    """Whether the zero-padded operator has every singular value within `tol` of 1."""
    A = as_kernel(kernel)
    K = max(A.shape[: A.ndim - 2])
    s_min = spatial if np.isscalar(spatial) else min(spatial)
    if s_min < 2 * K:
        raise ShapeError(f"zero-pad check needs spatial >= 2K = {2 * K}")
    s = np.linalg.svd(operator_matrix_zero_pad(A, spatial), compute_uv=False)
    return bool(np.max(np.abs(s - 1.0)) <= tol)


def off_center_norms(kernel) -> np.ndarray:
    """Frobenius norms of every tap except the centred one used for zero padding."""
    A2 = to_2d(kernel)
    kh, kw = A2.shape[:2]
    norms = np.linalg.norm(A2, axis=(2, 3))
    mask = np.ones((kh, kw), dtype=bool)
    mask[(kh - 1) // 2, (kw - 1) // 2] = False
    return norms[mask]
