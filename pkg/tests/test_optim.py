import csv
import io

import numpy as np
import pytest

from orthoconv import linalg
from orthoconv.errors import DataError, DivergenceError, PreconditionError, ShapeError
from orthoconv.optim import (
    Trajectory,
    factor_invariant,
    fd_gradient,
    fit_bcop_to_target,
    sn_projected_ascent,
    two_norm_direction,
)
from orthoconv.param import BcopParams, bcop
from orthoconv.topology import component_signature_2x2


def perturbed(params, scale, seed):
    theta = params.to_vector()
    rng = np.random.default_rng(seed)
    return params.with_vector(theta + scale * rng.standard_normal(theta.size))


def test_fd_gradient_quadratic():
    g = fd_gradient(lambda t: 0.5 * t @ t, np.array([1.0, 2.0]))
    np.testing.assert_allclose(g, [1.0, 2.0], atol=1e-8)
    np.testing.assert_array_equal(fd_gradient(lambda t: 3.0, np.zeros(4)), np.zeros(4))


def test_fd_gradient_errors():
    with pytest.raises(PreconditionError):
        fd_gradient(lambda t: 0.0, np.zeros(2), h=0.0)
    with pytest.raises(DataError):
        fd_gradient(lambda t: np.inf, np.zeros(2))


def test_fd_gradient_through_bjorck_agrees_with_forward_difference(rng):
    M0 = rng.standard_normal((4, 2))
    target = rng.standard_normal((4, 2))

    def loss(t):
        return float(np.sum((linalg.orthogonalize(t.reshape(4, 2)) - target) ** 2))

    theta = M0.ravel()
    central = fd_gradient(loss, theta, 1e-6)
    h = 1e-7
    forward = np.array([(loss(theta + h * e) - loss(theta)) / h for e in np.eye(theta.size)])
    np.testing.assert_allclose(central, forward, atol=1e-5)


def test_trajectory_invariants_and_csv():
    t = Trajectory()
    t.record(0, 1.0, 2.0)
    t.record(1, 0.5, 2.0)
    with pytest.raises(DataError):
        t.record(1, 0.2)
    with pytest.raises(DataError):
        t.record(2, float("nan"))
    rows = list(csv.reader(io.StringIO(t.to_csv())))
    assert rows == [["step", "loss", "invariant"], ["0", "1.0", "2.0"], ["1", "0.5", "2.0"]]
    assert t.invariant_drift() == 0.0 and len(t) == 2


def test_fit_at_optimum_stays_put():
    star = BcopParams.random(2, 2, seed=1)
    _, traj = fit_bcop_to_target(bcop(star), star, 5, 0.1)
    assert max(traj.losses) < 1e-20


def test_fit_from_perturbation_converges():
    star = BcopParams.random(2, 2, seed=0)
    params, traj = fit_bcop_to_target(bcop(star), perturbed(star, 0.01, 1), 200, 0.1)
    assert traj.losses[-1] < 1e-4 * traj.losses[0]
    assert traj.invariant_drift() < 1e-6
    assert all(a >= b for a, b in zip(traj.losses, traj.losses[1:]))
    assert component_signature_2x2(bcop(params)) == component_signature_2x2(bcop(star))


def test_fit_signature_constant_along_trajectory():
    star = BcopParams.random(2, 2, seed=2)
    _, traj = fit_bcop_to_target(bcop(star), perturbed(star, 0.05, 3), 20, 0.1,
                                 record_invariant=False)
    sigs = {component_signature_2x2(bcop(star.with_vector(theta))) for theta in traj.params}
    assert len(sigs) == 1


def test_fit_shape_and_lr_errors():
    p = BcopParams.random(2, 2, seed=0)
    with pytest.raises(ShapeError):
        fit_bcop_to_target(np.zeros((3, 3, 2, 2)), p, 1, 0.1)
    with pytest.raises(PreconditionError):
        fit_bcop_to_target(bcop(p), p, 1, 0.0)


def test_fit_divergence_carries_trajectory():
    star = BcopParams.random(2, 2, seed=0)
    # the loss is bounded, so force "divergence" with a tiny initial loss and a huge step
    init = perturbed(star, 1e-4, 5)
    with pytest.raises(DivergenceError) as info:
        fit_bcop_to_target(bcop(star), init, 50, 1e6, line_search=False)
    assert len(info.value.trajectory) >= 10


def test_factor_invariant_is_rank_sum():
    # half-rank projectors: (K - 1) * n / 2 per chain, two chains
    assert abs(factor_invariant(BcopParams.random(4, 3, seed=0)) - 8.0) < 1e-9
    assert factor_invariant(BcopParams.random(4, 1, seed=0)) == 0.0


def test_two_norm_direction(rng):
    G = rng.standard_normal((4, 4))
    Dbar = two_norm_direction(G)
    assert abs(np.linalg.norm(Dbar, 2) - 1) < 1e-12
    s = np.linalg.svd(G, compute_uv=False)
    assert abs(np.trace(G.T @ Dbar) - s.sum()) < 1e-12
    low = np.diag([3.0, 1e-12, 0.0])
    np.testing.assert_allclose(two_norm_direction(low), np.diag([1.0, 0.0, 0.0]), atol=1e-15)
    assert not np.any(two_norm_direction(np.zeros((2, 2))))


def test_sn_ascent_counterexample_limits():
    D = np.diag([2.0, 1.0])
    A_e, traj_e = sn_projected_ascent(D, 10000, 0.01, "euclidean")
    A_t, traj_t = sn_projected_ascent(D, 10000, 0.01, "two_norm")
    np.testing.assert_allclose(A_e, np.diag([1.0, 0.5]), atol=1e-3)
    np.testing.assert_allclose(A_t, np.eye(2), atol=1e-3)
    for traj in (traj_e, traj_t):
        assert all(b >= a - 1e-12 for a, b in zip(traj.losses, traj.losses[1:]))


def test_sn_ascent_matches_diagonal_recursion():
    D = np.diag([2.0, 1.0])
    lr = 0.01
    x = y = 0.0
    for _ in range(300):
        x, y = x + 2 * lr, y + lr
        scale = max(1.0, x, y)
        x, y = x / scale, y / scale
    A, _ = sn_projected_ascent(D, 300, lr, "euclidean")
    np.testing.assert_allclose(np.diag(A), [x, y], atol=1e-12)
    assert abs(A[0, 1]) == 0 and abs(A[1, 0]) == 0


def test_sn_ascent_fixed_point_equations():
    A, _ = sn_projected_ascent(np.diag([2.0, 1.0]), 10000, 0.01, "euclidean")
    x, y = np.diag(A)
    lr = 0.01
    # fixed point of x <- (x + 2 lr) / (x + 2 lr), y <- (y + lr) / (x + 2 lr)
    assert abs(x - 1.0) < 1e-6
    assert abs(y - (y + lr) / (x + 2 * lr)) < 1e-6


def test_sn_ascent_symmetric_case():
    for mode in ("euclidean", "two_norm"):
        A, _ = sn_projected_ascent(np.eye(3), 500, 0.01, mode)
        np.testing.assert_allclose(A, np.eye(3), atol=1e-12)


def test_sn_ascent_errors():
    with pytest.raises(ShapeError):
        sn_projected_ascent(np.ones((2, 3)), 1, 0.1)
    with pytest.raises(PreconditionError):
        sn_projected_ascent(np.eye(2), 0, 0.1)
    with pytest.raises(PreconditionError):
        sn_projected_ascent(np.eye(2), 1, 0.1, mode="adam")
