"""Small optimization demos: FD gradient descent through BCOP and projected ascent."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import DataError, DivergenceError, PreconditionError, ShapeError
from .param import BcopParams, bcop, bcop_1d, bcop_factors
from .topology import sock_invariant

ZERO_SV_REL = 1e-10


@dataclass
class Trajectory:
    """Per-step record: loss (or objective), optional invariant, optional parameter vector."""

    steps: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    invariants: list = field(default_factory=list)
    params: list = field(default_factory=list)

    def record(self, step, loss, invariant=None, params=None):
        if self.steps and step <= self.steps[-1]:
            raise DataError(f"step {step} does not follow {self.steps[-1]}")
        if not math.isfinite(loss):
            raise DataError(f"non-finite loss {loss} at step {step}")
        self.steps.append(int(step))
        self.losses.append(float(loss))
        self.invariants.append(None if invariant is None else float(invariant))
        if params is not None:
            self.params.append(np.array(params, dtype=np.float64, copy=True))

    def __len__(self):
        return len(self.steps)

    def invariant_drift(self) -> float:
        vals = [v for v in self.invariants if v is not None]
        return float(max(vals) - min(vals)) if vals else 0.0

    def to_csv(self, fh=None):
        """Write ``step,loss,invariant`` rows to `fh`, or return them as a string."""
        out = io.StringIO() if fh is None else fh
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["step", "loss", "invariant"])
        for s, l, g in zip(self.steps, self.losses, self.invariants):
            w.writerow([s, repr(l), "" if g is None else repr(g)])
        return out.getvalue() if fh is None else None


def fd_gradient(loss, theta, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if not h > 0:
        raise PreconditionError("step h must be > 0")
    theta = np.asarray(theta, dtype=np.float64).ravel()
    g = np.empty_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h
        hi, lo = float(loss(theta + e)), float(loss(theta - e))
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise DataError(f"non-finite loss while differentiating coordinate {k}")
        g[k] = (hi - lo) / (2 * h)
    return g


def factor_invariant(params: BcopParams) -> float:
    """Sum of the 1-D trace invariants of the vertical and horizontal projector chains.

    The vertical chain starts from ``H`` when it is square and from the
    identity otherwise; the horizontal chain always starts from the identity.
    """
    H, Ps, Qs = bcop_factors(params)
    if params.kernel_size == 1:
        return 0.0
    eye = np.eye(params.c_in)
    start = H if H.shape[0] == H.shape[1] else eye
    return sock_invariant(bcop_1d(start, Ps)) + sock_invariant(bcop_1d(eye, Qs))


def fit_bcop_to_target(target, init: BcopParams, steps: int, lr: float, *,
                       line_search: bool = True, h: float = 1e-6,
                       record_invariant: bool = True):
    """Gradient descent on ``||bcop(theta) - target||_F^2`` with FD gradients.

    With `line_search` the step is halved until the loss does not increase
    and doubled after each accepted step. Returns ``(params, trajectory)``;
    step 0 records the initial loss.
    """
    target = np.asarray(target, dtype=np.float64)
    if not lr > 0:
        raise PreconditionError("lr must be > 0")
    start = bcop(init)
    if start.shape != target.shape:
        raise ShapeError(f"target shape {target.shape} does not match init kernel {start.shape}")

    def loss(theta):
        return float(np.sum((bcop(init.with_vector(theta)) - target) ** 2))

    theta = init.to_vector()
    traj = Trajectory()
    cur = loss(theta)
    initial = cur

    def inv(t):
        return factor_invariant(init.with_vector(t)) if record_invariant else None

    traj.record(0, cur, inv(theta), theta)
    step_lr = float(lr)
    above = 0
    for step in range(1, steps + 1):
        g = fd_gradient(loss, theta, h)
        if line_search:
            for _ in range(60):
                cand = theta - step_lr * g
                new = loss(cand)
                if new <= cur:
                    break
                step_lr *= 0.5
            else:
                cand, new = theta, cur
            theta, cur = cand, new
            step_lr *= 2.0
        else:
            theta = theta - step_lr * g
            cur = loss(theta)
        if not math.isfinite(cur):
            raise DivergenceError(f"loss became non-finite at step {step}", traj)
        traj.record(step, cur, inv(theta), theta)
        above = above + 1 if cur > 10.0 * initial else 0
        if above >= 10:
            raise DivergenceError(
                f"loss above 10x its initial value for 10 consecutive steps (step {step})", traj
            )
    return init.with_vector(theta), traj


def two_norm_direction(G) -> np.ndarray:
    """``U P(Λ) V^T``: the gradient with every nonzero singular value set to 1.

    Singular values at or below ``1e-10 * λ_max`` count as zero.
    """
    G = linalg.as_matrix(G, "gradient")
    U, s, Vt = np.linalg.svd(G, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros_like(G)
    keep = (s > ZERO_SV_REL * s[0]).astype(np.float64)
    return (U * keep) @ Vt


def sn_projected_ascent(D, steps: int, lr: float, mode: str = "euclidean", init=None):
    """Maximize ``Tr(A D)`` over ``||A||_2 <= 1`` by projected ascent.

    Each step moves along the gradient ``D^T`` (``"euclidean"``) or its
    2-norm steepest direction (``"two_norm"``) and then divides by
    ``max(1, sigma_max)``. Returns ``(A, trajectory)`` where the trajectory
    losses are the objective values after each step.
    """
    D = linalg.as_matrix(D, "D")
    if D.shape[0] != D.shape[1]:
        raise ShapeError("D must be square")
    if steps < 1 or not lr > 0:
        raise PreconditionError("need steps >= 1 and lr > 0")
    if mode not in ("euclidean", "two_norm"):
        raise PreconditionError(f"unknown mode {mode!r}")
    A = np.zeros_like(D) if init is None else linalg.as_matrix(init, "init").copy()
    G = D.T
    direction = G if mode == "euclidean" else two_norm_direction(G)
    traj = Trajectory()
    for step in range(1, steps + 1):
        A = A + lr * direction
        A = A / max(1.0, linalg.spectral_norm(A))
        traj.record(step, float(np.trace(A @ D)))
    return A, traj
