"""Lipschitz convolution constructions: BCOP, RKO, OSSN and SVCM.

BCOP builds an exactly orthogonal kernel from unconstrained parameters:
an orthogonalized ``c_out x c_in`` matrix ``H`` followed by ``K - 1`` rounds
of ``W <- W □ [P; I - P] □ [Q, I - Q]`` with half-rank symmetric projectors
``P`` and ``Q``. The other three methods only bound the operator norm.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .blockconv import (
    as_kernel,
    apply_conv_cyclic,
    apply_conv_transpose_cyclic,
    block_conv_1d,
    block_conv_2d,
    column_kernel,
    conv_symbols,
    row_kernel,
)
from .errors import ConvergenceWarning, PreconditionError, ShapeError


@dataclass
class BcopParams:
    """Unconstrained BCOP parameters.

    ``raw_h`` is ``c_out x c_in``; ``raw_m[i]`` and ``raw_n[i]`` are
    ``c_in x (c_in // 2)`` factors for the vertical and horizontal
    projectors of round ``i``.
    """

    raw_h: np.ndarray
    raw_m: list = field(default_factory=list)
    raw_n: list = field(default_factory=list)

    def __post_init__(self):
        self.raw_h = linalg.as_matrix(self.raw_h, "raw_h")
        self.raw_m = [linalg.as_matrix(m, "raw_m") for m in self.raw_m]
        self.raw_n = [linalg.as_matrix(m, "raw_n") for m in self.raw_n]
        c_out, c_in = self.raw_h.shape
        if c_out > c_in:
            raise ShapeError(f"BCOP needs c_out <= c_in, got raw_h of shape {self.raw_h.shape}")
        if len(self.raw_m) != len(self.raw_n):
            raise ShapeError("raw_m and raw_n must have the same length")
        want = (c_in, c_in // 2)
        for m in self.raw_m + self.raw_n:
            if m.shape != want:
                raise ShapeError(f"projector factor has shape {m.shape}, expected {want}")

    @property
    def c_out(self) -> int:
        return self.raw_h.shape[0]

    @property
    def c_in(self) -> int:
        return self.raw_h.shape[1]

    @property
    def kernel_size(self) -> int:
        return len(self.raw_m) + 1

    @classmethod
    def random(cls, c_in, kernel_size, c_out=None, seed=0, h_init="orthogonal"):
        """Draw parameters from a seeded generator.

        ``h_init="orthogonal"`` starts ``raw_h`` at a Haar-random orthogonal
        matrix (or its leading rows); ``"gaussian"`` uses i.i.d. normals.
        Projector factors are always Gaussian.
        """
        c_out = c_in if c_out is None else c_out
        if not 1 <= c_out <= c_in:
            raise ShapeError(f"BCOP needs 1 <= c_out <= c_in, got c_out={c_out}, c_in={c_in}")
        rng = np.random.default_rng(seed)
        if h_init == "orthogonal":
            raw_h = linalg.random_orthogonal(c_in, rng)[:c_out]
        elif h_init == "gaussian":
            raw_h = rng.standard_normal((c_out, c_in))
        else:
            raise ValueError(f"unknown h_init {h_init!r}")
        k = c_in // 2
        raw_m = [rng.standard_normal((c_in, k)) for _ in range(kernel_size - 1)]
        raw_n = [rng.standard_normal((c_in, k)) for _ in range(kernel_size - 1)]
        return cls(raw_h, raw_m, raw_n)

    def to_vector(self) -> np.ndarray:
        parts = [self.raw_h.ravel()] + [m.ravel() for m in self.raw_m + self.raw_n]
        return np.concatenate(parts)

    def with_vector(self, theta) -> "BcopParams":
        """Same shapes as `self`, entries taken from the flat vector `theta`."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self.to_vector().size:
            raise ShapeError("parameter vector length does not match")
        pos = 0

        def take(shape):
            nonlocal pos
            size = int(np.prod(shape))
            out = theta[pos : pos + size].reshape(shape)
            pos += size
            return out

        raw_h = take(self.raw_h.shape)
        raw_m = [take(m.shape) for m in self.raw_m]
        raw_n = [take(m.shape) for m in self.raw_n]
        return BcopParams(raw_h, raw_m, raw_n)


def bcop_factors(params: BcopParams, bjorck_iters=linalg.BJORCK_ITERS, power_iters=linalg.POWER_ITERS):
    """Orthogonal ``H`` and projector lists ``(P_i, Q_i)`` generated by `params`."""
    H = linalg.orthogonalize(params.raw_h, bjorck_iters, power_iters)
    Ps = [linalg.projector_from_raw(m, bjorck_iters, power_iters) for m in params.raw_m]
    Qs = [linalg.projector_from_raw(m, bjorck_iters, power_iters) for m in params.raw_n]
    return H, Ps, Qs


def bcop_from_factors(H, Ps, Qs) -> np.ndarray:
    """2-D kernel ``H □ [P_1; I-P_1] □ [Q_1, I-Q_1] □ ... `` for arbitrary projectors."""
    H = linalg.as_matrix(H, "H")
    if len(Ps) != len(Qs):
        raise ShapeError("need as many vertical as horizontal projectors")
    eye = np.eye(H.shape[1])
    W = H[None, None]
    for P, Q in zip(Ps, Qs):
        W = block_conv_2d(W, column_kernel([P, eye - P]))
        W = block_conv_2d(W, row_kernel([Q, eye - Q]))
    return W


def bcop(params: BcopParams, bjorck_iters=linalg.BJORCK_ITERS, power_iters=linalg.POWER_ITERS) -> np.ndarray:
    """Orthogonal ``K x K`` kernel of shape ``(K, K, c_out, c_in)``."""
    return bcop_from_factors(*bcop_factors(params, bjorck_iters, power_iters))


def _check_orthogonal_rows(H, tol):
    G = H @ H.T if H.shape[0] <= H.shape[1] else H.T @ H
    if np.linalg.norm(G - np.eye(G.shape[0])) > tol:
        raise PreconditionError("H is not orthogonal")


def bcop_1d(H, projectors, tol: float = 1e-8) -> np.ndarray:
    """1-D orthogonal kernel ``H □ [P_1, I-P_1] □ ... □ [P_{K-1}, I-P_{K-1}]``."""
    H = linalg.as_matrix(H, "H")
    _check_orthogonal_rows(H, tol)
    n = H.shape[1]
    eye = np.eye(n)
    A = H[None]
    for P in projectors:
        P = linalg.as_matrix(P, "projector")
        if P.shape != (n, n) or not linalg.is_projector(P, tol):
            raise PreconditionError("every factor must be a symmetric projector of size c_in")
        A = block_conv_1d(A, np.stack([P, eye - P]))
    return A


def sock_with_ranks(n: int, ranks, seed: int = 0):
    """Random 1-D special orthogonal kernel with prescribed projector ranks.

    Returns ``(kernel, H, projectors)``; ``det(H) = +1``.
    """
    ranks = [int(r) for r in ranks]
    for r in ranks:
        if not 0 <= r <= n:
            raise PreconditionError(f"rank {r} is infeasible for n = {n}")
    rng = np.random.default_rng(seed)
    H = linalg.random_orthogonal(n, rng, special=True)
    projectors = [linalg.random_projector(n, r, rng) for r in ranks]
    return bcop_1d(H, projectors), H, projectors


def rko(raw, scale=None, bjorck_iters=linalg.BJORCK_ITERS, power_iters=linalg.POWER_ITERS) -> np.ndarray:
    """Reshaped kernel orthogonalization.

    Orthogonalizes the ``(c_out, K^2 c_in)`` reshape of `raw` and scales the
    result by `scale` (default ``1 / K``), which bounds the operator norm by 1.
    """
    A = as_kernel(raw, "raw kernel")
    if A.ndim != 4 or A.shape[0] != A.shape[1]:
        raise ShapeError("rko supports square 2-D kernels only")
    K, _, co, ci = A.shape
    if co > K * K * ci:
        raise ShapeError(f"rko needs c_out <= K^2 c_in, got c_out={co}, K^2 c_in={K * K * ci}")
    M = A.transpose(2, 0, 1, 3).reshape(co, K * K * ci)
    O = linalg.orthogonalize(M, bjorck_iters, power_iters)
    scale = 1.0 / K if scale is None else float(scale)
    return scale * O.reshape(co, K, K, ci).transpose(1, 2, 0, 3)


def reshaped_matrix(kernel) -> np.ndarray:
    A = as_kernel(kernel)
    K0, K1, co, ci = A.shape
    return A.transpose(2, 0, 1, 3).reshape(co, K0 * K1 * ci)


def conv_power_iteration(kernel, spatial, iters: int, seed: int = 0):
    """Power iteration on the cyclic operator using only forward and adjoint convolutions.

    Returns ``(sigma_est, settled)``; `settled` is False when the estimate
    still moved by more than 1e-6 (relative) on the last iteration.
    """
    A = as_kernel(kernel)
    if iters < 1:
        raise PreconditionError("iters must be >= 1")
    ci = A.shape[-1]
    shape = (int(spatial),) if A.ndim == 3 else (
        (int(spatial), int(spatial)) if np.isscalar(spatial) else tuple(int(s) for s in spatial)
    )
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((ci,) + shape)
    x /= np.linalg.norm(x)
    sigma = 0.0
    for _ in range(iters):
        y = apply_conv_cyclic(A, x)
        sigma = float(np.linalg.norm(y))
        if sigma == 0.0:
            return 0.0, True
        x = apply_conv_transpose_cyclic(A, y / sigma)
        x /= np.linalg.norm(x)
    sigma_final = float(np.linalg.norm(apply_conv_cyclic(A, x)))
    settled = abs(sigma_final - sigma) <= 1e-6 * max(sigma_final, 1e-300)
    return sigma_final, settled


def ossn_normalize(kernel, spatial, iters: int = linalg.POWER_ITERS, seed: int = 0):
    """One-sided spectral normalization.

    Estimates the operator norm by power iteration and divides by it only
    when it exceeds 1. Returns ``(kernel, sigma_est)``.
    """
    A = as_kernel(kernel)
    sigma, settled = conv_power_iteration(A, spatial, iters, seed)
    if not settled:
        warnings.warn(
            f"spectral norm estimate still moving after {iters} iterations",
            ConvergenceWarning,
            stacklevel=2,
        )
    return A / max(1.0, sigma), sigma


def svcm_clip(kernel, spatial, outer_iters: int = 50, final_rescale: bool = True) -> np.ndarray:
    """Singular value clipping and masking.

    Each outer iteration clips every per-frequency singular value to at most
    1 and masks the inverse transform back to the original support. After
    the loop, ``final_rescale`` divides by any remaining excess operator
    norm (computed exactly in the frequency domain) so the bound is strict.
    """
    A = as_kernel(kernel)
    one_d = A.ndim == 3
    A2 = A[None] if one_d else A
    kh, kw, co, ci = A2.shape
    sp = (1, int(spatial)) if one_d else (
        (int(spatial), int(spatial)) if np.isscalar(spatial) else tuple(int(s) for s in spatial)
    )
    h, w = sp
    for _ in range(outer_iters):
        F = conv_symbols(A2, sp)
        U, s, Vh = np.linalg.svd(F, full_matrices=False)
        F = (U * np.minimum(s, 1.0)[..., None, :]) @ Vh
        full = np.fft.fft2(F, axes=(0, 1)).real / (h * w)
        A2 = full[:kh, :kw].copy()
    if final_rescale:
        top = float(np.linalg.svd(conv_symbols(A2, sp), compute_uv=False).max())
        if top > 1.0:
            A2 = A2 / top
    return A2[0] if one_d else A2


def double_channels(H, Ps, Qs) -> BcopParams:
    """Embed an n-channel construction into 2n-channel BCOP parameters.

    Every projector ``P`` of rank ``k`` becomes ``diag(P, S_k)`` with
    ``S_k = diag(1, ..., 1, 0, ..., 0)`` carrying ``n - k`` ones, so all
    doubled projectors have rank exactly ``n``; ``H`` becomes
    ``diag(H, I)``. The raw factors returned are orthonormal bases of the
    doubled projectors' ranges, which Björck maps to themselves.
    """
    H = linalg.as_matrix(H, "H")
    n = H.shape[0]
    if H.shape != (n, n):
        raise ShapeError("channel doubling needs a square H")
    H2 = np.zeros((2 * n, 2 * n))
    H2[:n, :n] = H
    H2[n:, n:] = np.eye(n)
    return BcopParams(H2, [doubled_basis(P) for P in Ps], [doubled_basis(Q) for Q in Qs])


def _range_basis(P):
    w, V = np.linalg.eigh(0.5 * (P + P.T))
    return V[:, w > 0.5]


def doubled_projector(P) -> np.ndarray:
    B = doubled_basis(P)
    return B @ B.T


def doubled_basis(P) -> np.ndarray:
    """``2n x n`` orthonormal basis of ``diag(P, S_k)``'s range."""
    P = linalg.as_matrix(P, "projector")
    n = P.shape[0]
    if not linalg.is_projector(P, 1e-8):
        raise PreconditionError("channel doubling expects symmetric projectors")
    basis = _range_basis(P)
    k = basis.shape[1]
    B = np.zeros((2 * n, n))
    B[:n, :k] = basis
    B[n + np.arange(n - k), k + np.arange(n - k)] = 1.0
    return B
