import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edgram.balancing import (
    balance, compare_outputs, eigen_truncate_basis, output_error, sqrt_factor, truncate,
)
from edgram.errors import ConfigError, GramianError, RankError
from edgram.gramian import differential_gramians, lti_gramian_oracle
from edgram.models import lti, rl_network
from edgram.sim import InputSignal, TimeGrid, integrate

SINES = InputSignal.expression("sin(t)+sin(3*t)")


def spd(rng, n, decay=1.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Q @ np.diag(np.exp(-decay * np.arange(n)) * rng.uniform(0.5, 2.0, n)) @ Q.T


def check_balanced(res, WR, WO, tol=1e-8):
    s1 = res.sigma[0]
    D = np.diag(res.sigma)
    assert np.linalg.norm(res.T @ WR @ res.T.T - D) <= tol * s1
    assert np.linalg.norm(res.Tinv.T @ WO @ res.Tinv - D) <= tol * s1
    assert np.linalg.norm(res.T @ res.Tinv - np.eye(len(D))) <= 1e-8 * len(D)


def test_scalar_pair():
    res = balance([[4.0]], [[9.0]])
    assert res.sigma[0] == pytest.approx(6.0)
    assert res.T[0, 0] ** 2 == pytest.approx(1.5)
    assert res.Tinv[0, 0] ** 2 * 9 == pytest.approx(6.0)


def test_already_balanced_diagonal():
    d = np.array([5.0, 2.0, 0.5, 0.1])
    res = balance(np.diag(d), np.diag(d))
    np.testing.assert_allclose(res.sigma, d, rtol=1e-14)
    np.testing.assert_allclose(res.T, np.eye(4), atol=1e-14)


def test_random_pairs_balance_and_match_product_eigenvalues():
    rng = np.random.default_rng(0)
    for _ in range(10):
        WR, WO = spd(rng, 5), spd(rng, 5)
        res = balance(WR, WO)
        check_balanced(res, WR, WO)
        assert np.all(np.diff(res.sigma) <= 0)
        lam = np.sort(np.linalg.eigvals(WO @ WR).real)[::-1]
        np.testing.assert_allclose(res.sigma ** 2, lam, rtol=1e-9)
        assert res.effective_rank == 5
        assert res.residuals["inverse_error"] <= 1e-8 * 5


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 10.0))
def test_scale_covariance_and_permutation_invariance(seed, alpha):
    rng = np.random.default_rng(seed)
    WR, WO = spd(rng, 4, 0.5), spd(rng, 4, 0.5)
    base = balance(WR, WO).sigma
    np.testing.assert_allclose(balance(alpha ** 2 * WR, WO).sigma, alpha * base, rtol=1e-10)
    P = np.eye(4)[rng.permutation(4)]
    np.testing.assert_allclose(balance(P @ WR @ P.T, P @ WO @ P.T).sigma, base, rtol=1e-10)


def test_nesting_of_truncations():
    rng = np.random.default_rng(1)
    WR, WO = spd(rng, 6), spd(rng, 6)
    res = balance(WR, WO)
    sys = lti(-np.eye(6), np.ones((6, 1)), np.ones((1, 6)))
    r3, r2 = truncate(sys, res, 3), truncate(sys, res, 2)
    np.testing.assert_array_equal(r3.W[:2], r2.W)
    np.testing.assert_array_equal(r3.V[:, :2], r2.V)


def test_balance_is_deterministic():
    rng = np.random.default_rng(2)
    WR, WO = spd(rng, 5), spd(rng, 5)
    a, b = balance(WR, WO), balance(WR.copy(), WO.copy())
    np.testing.assert_array_equal(a.T, b.T)
    np.testing.assert_array_equal(a.Tinv, b.Tinv)
    col = np.argmax(np.abs(a.Tinv), axis=0)
    assert np.all(a.Tinv[col, np.arange(5)] > 0)


def test_clamping_sets_effective_rank():
    WR = np.diag([1.0, 1e-3, 0.0])
    res = balance(WR, np.eye(3))
    assert res.effective_rank == 2
    L, rank = sqrt_factor(WR)
    assert rank == 2 and np.all(np.isfinite(L))
    sys = lti(-np.eye(3), np.ones((3, 1)), np.ones((1, 3)))
    truncate(sys, res, 2)
    with pytest.raises(RankError) as info:
        truncate(sys, res, 3)
    assert info.value.exit_code == 5
    with pytest.raises(GramianError):
        balance(np.zeros((2, 2)), np.eye(2))
    with pytest.raises(ConfigError):
        balance(np.eye(2), np.eye(3))


def test_eigen_basis_examples():
    b = eigen_truncate_basis(np.diag([3.0, 1.0, 2.0]))
    np.testing.assert_array_equal(b.eigenvalues, [3.0, 2.0, 1.0])
    np.testing.assert_array_equal(b.basis, np.eye(3)[:, [0, 2, 1]])
    v = np.array([1.0, -3.0, 2.0])
    b = eigen_truncate_basis(np.outer(v, v))
    assert b.eigenvalues[0] == pytest.approx(14.0)
    np.testing.assert_allclose(b.eigenvalues[1:], 0, atol=1e-13)
    # sign convention: largest-magnitude entry positive, so -v/|v| here
    np.testing.assert_allclose(b.basis[:, 0], -v / np.sqrt(14.0), atol=1e-14)
    assert b.effective_rank == 3


def test_full_order_reproduces_parent():
    sys = rl_network(8)
    grid = TimeGrid(0, 10, 0.01)
    x0 = 0.1 * np.random.default_rng(3).standard_normal(8)
    full = integrate(sys, x0, SINES, grid)
    WR, WO = differential_gramians(sys, full)
    for basis in (balance(WR, WO), eigen_truncate_basis(WR)):
        report = compare_outputs(full, truncate(sys, basis, 8))
        assert report.rel_l2 <= 1e-10


def test_lti_reduction_matches_matrix_oracle():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((5, 5)) - 3 * np.eye(5)
    B, C = rng.standard_normal((5, 1)), rng.standard_normal((1, 5))
    Wc, Wo = lti_gramian_oracle(A, B, C, (0, 10))
    res = balance(Wc, Wo)
    red = truncate(lti(A, B, C), res, 3)
    Ar = res.T[:3] @ A @ res.Tinv[:, :3]
    z = rng.standard_normal(3)
    np.testing.assert_allclose(red.system.jac_f(z), Ar, atol=1e-12)
    np.testing.assert_allclose(red.system.eval_f(z), Ar @ z, atol=1e-12)
    np.testing.assert_allclose(red.system.B, res.T[:3] @ B, atol=1e-14)
    np.testing.assert_allclose(red.system.eval_h(z), C @ res.Tinv[:, :3] @ z, atol=1e-12)
    # the leading block of the balanced Gramian is (up to the finite-horizon
    # tail) the Gramian of the truncated model
    grid = TimeGrid(0, 10, 1e-3)
    base = integrate(red.system, np.zeros(3), None, grid)
    Wr, _ = differential_gramians(red.system, base)
    lead = (res.T @ Wc.W @ res.T.T)[:3, :3]
    assert np.linalg.norm(Wr.W - lead) <= 1e-6 * np.linalg.norm(lead)


def test_project_and_lift():
    sys = rl_network(4)
    b = eigen_truncate_basis(np.diag([4.0, 3.0, 2.0, 1.0]))
    red = truncate(sys, b, 2)
    x = np.array([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(red.project(x), [1.0, 2.0])
    np.testing.assert_array_equal(red.lift([[1.0, 2.0]]), [[1.0, 2.0, 0.0, 0.0]])
    with pytest.raises(ConfigError):
        truncate(sys, b, 0)
    with pytest.raises(ConfigError):
        truncate(sys, b, 5)
    with pytest.raises(ConfigError):
        truncate(rl_network(5), b, 2)


def test_zero_outputs_are_degenerate():
    sys = rl_network(6)
    full = integrate(sys, np.zeros(6), None, TimeGrid(0, 5, 0.01))
    red = truncate(sys, eigen_truncate_basis(np.diag(np.arange(6.0, 0, -1))), 3)
    report = compare_outputs(full, red)
    assert report.rel_l2 == 0.0 and report.degenerate
    bad = output_error([0.0, 1.0], [[0.0], [0.0]], [[0.0], [1.0]])
    assert bad.rel_l2 == float("inf") and bad.degenerate and bad.argmax_t == 1.0


def test_output_error_fields():
    t = np.array([0.0, 1.0, 2.0])
    Y = np.array([[1.0, 0.0], [2.0, 0.0], [2.0, 1.0]])
    Yr = Y + np.array([[0.0, 0.0], [0.0, 0.5], [0.0, 0.0]])
    r = output_error(t, Y, Yr)
    assert r.max_abs == 0.5 and r.argmax_t == 1.0
    assert r.rel_l2 == pytest.approx(0.5 / np.linalg.norm(Y))
    assert r.per_channel[0]["rel_l2"] == 0.0
    assert r.per_channel[1]["rel_l2"] == 0.5
    with pytest.raises(ConfigError):
        output_error(t, Y, Yr[:2])


def test_divergent_reduction_is_reported():
    # an unstable reduced model from a deliberately bad basis
    unstable = lti(np.diag([-1.0, 40.0]), [[1.0], [1.0]], [[1.0, 0.0]])
    grid = TimeGrid(0, 1, 0.01)
    full = integrate(lti(np.diag([-1.0, -1.0]), [[1.0], [1.0]], [[1.0, 0.0]]), np.ones(2), None, grid, "euler")
    red = truncate(unstable, eigen_truncate_basis(np.diag([1.0, 2.0])), 1)
    report = compare_outputs(full, red, InputSignal.expression("1e12"))
    assert report.diverged and report.divergence_step is not None and report.rel_l2 is None
