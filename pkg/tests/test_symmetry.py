import numpy as np
import pytest

from edgram.errors import ConfigError, GramianError
from edgram.gramian import differential_gramians, observability_gramian, reachability_gramian
from edgram.models import gradient_family, lti, rl_network
from edgram.sim import InputSignal, TimeGrid, fundamental_matrix, integrate, propagate_blocks
from edgram.symmetry import (
    check_variational_symmetry, default_samples, dual_reachability_gramian,
    dual_variational_response, resolve_S,
)

SINES = InputSignal.expression("sin(t)+sin(3*t)")


def quartic_family():
    return gradient_family([1.0, 2.0, 3.0], {"quadratic": -np.eye(3), "quartic": -0.25 * np.ones(3)},
                           [1.0, 0.0, 0.0])


def coupled_family():
    Q = -np.eye(3) + 0.3 * (np.ones((3, 3)) - np.eye(3))
    return gradient_family([1.0, 2.0, 3.0], {"quadratic": Q, "cubic": [0.1, 0.0, -0.2],
                                             "quartic": -0.25 * np.ones(3)}, [1.0, 0.0, 0.0])


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_rl_network_identity_certificate():
    sys = rl_network(20)
    base = integrate(sys, np.zeros(20), SINES, TimeGrid(0, 10, 0.01))
    cert = check_variational_symmetry(sys, "identity", base=base)
    assert cert.verdict
    assert cert.res_dyn == 0.0 and cert.res_out == 0.0
    assert cert.cond_S == 1.0
    assert cert.to_dict()["samples"] == len(default_samples(base))


def test_rl_network_diagonal_scaling_breaks_symmetry():
    sys = rl_network(6)
    base = integrate(sys, np.zeros(6), SINES, TimeGrid(0, 5, 0.01))
    cert = check_variational_symmetry(sys, np.diag(np.arange(1.0, 7.0)), base=base)
    assert not cert.verdict and cert.res_dyn > 1.0


def test_gradient_family_certificate_positive():
    sys = quartic_family()
    X = np.random.default_rng(0).uniform(-2, 2, (50, 3))
    cert = check_variational_symmetry(sys, np.diag([1.0, 2.0, 3.0]), samples=X)
    assert cert.verdict
    # the separable potential has a diagonal Jacobian; a coupled quadratic
    # part makes the identity fail while S still works
    coupled = coupled_family()
    assert check_variational_symmetry(coupled, np.diag([1.0, 2.0, 3.0]), samples=X).verdict
    assert not check_variational_symmetry(coupled, "identity", samples=X).verdict


def test_output_dimension_mismatch_is_negative():
    sys = lti(-np.eye(2), np.eye(2), np.eye(2)[:1])
    cert = check_variational_symmetry(sys, "identity", samples=np.zeros((1, 2)))
    assert not cert.verdict and cert.notes


def test_certificate_invariant_under_permutation():
    sys = quartic_family()
    S = np.diag([1.0, 2.0, 3.0])
    P = np.eye(3)[[2, 0, 1]]
    X = np.random.default_rng(1).uniform(-1, 1, (20, 3))
    a = check_variational_symmetry(sys, S, samples=X)
    permuted = gradient_family([3.0, 1.0, 2.0], {"quadratic": -np.eye(3), "quartic": -0.25 * np.ones(3)},
                               [0.0, 1.0, 0.0])
    b = check_variational_symmetry(permuted, P @ S @ P.T, samples=X @ P.T)
    assert b.verdict == a.verdict
    assert b.res_dyn == pytest.approx(a.res_dyn, abs=1e-12)
    assert b.res_out == pytest.approx(a.res_out, abs=1e-12)


def test_singular_or_malformed_S_rejected():
    sys = rl_network(3)
    with pytest.raises(ConfigError):
        check_variational_symmetry(sys, np.diag([1.0, 1.0, 0.0]), samples=np.zeros((1, 3)))
    with pytest.raises(ConfigError):
        resolve_S(np.eye(2), 3)
    with pytest.raises(ConfigError):
        resolve_S("ones", 3)
    with pytest.raises(ConfigError):
        check_variational_symmetry(sys, "identity")


def test_dual_transition_matrix_is_conjugate():
    sys = coupled_family()
    S = np.diag([1.0, 2.0, 3.0])
    base = integrate(sys, np.array([0.5, -0.3, 0.2]), InputSignal.expression("sin(t)"), TimeGrid(0, 4, 0.01))
    Phi = fundamental_matrix(sys, base).Phi
    Psi = np.concatenate([b for _, b in propagate_blocks(sys, base, np.eye(3), transpose=True)])
    for k in (0, 100, 250, 400):
        target = S @ Phi[k] @ np.linalg.inv(S)
        assert rel(Psi[k], target) <= 1e-7


def test_dual_response_initial_value_and_lti_identity():
    rng = np.random.default_rng(2)
    M = rng.standard_normal((4, 4))
    A = -(M @ M.T) - np.eye(4)
    B = rng.standard_normal((4, 1))
    sys = lti(A, B, B.T)
    base = integrate(sys, np.zeros(4), SINES, TimeGrid(0, 3, 0.01))
    dual = dual_variational_response(sys, "identity", base, 0)
    np.testing.assert_array_equal(dual.dX[0], B[:, 0])
    Phi = fundamental_matrix(sys, base).Phi
    np.testing.assert_allclose(dual.dX, Phi @ B[:, 0], atol=1e-13)
    with pytest.raises(ConfigError):
        dual_variational_response(sys, "identity", base, 1)


def test_dual_lti_symmetric_equals_observability():
    rng = np.random.default_rng(3)
    M = rng.standard_normal((3, 3))
    A = -(M @ M.T) - 0.5 * np.eye(3)
    B = rng.standard_normal((3, 1))
    sys = lti(A, B, B.T)
    base = integrate(sys, np.zeros(3), None, TimeGrid(0, 5, 0.001))
    Wd = dual_reachability_gramian(sys, "identity", base)
    WO = observability_gramian(sys, base)
    assert rel(Wd.W, WO.W) <= 1e-10
    assert Wd.kind == "dual_reachability"


def test_rl_network_dual_equals_reachability():
    sys = rl_network(20)
    base = integrate(sys, np.zeros(20), SINES, TimeGrid(0, 20, 0.01), "euler")
    Wd = dual_reachability_gramian(sys, "identity", base)
    WR = reachability_gramian(sys, base)
    assert rel(Wd.W, WR.W) <= 1e-8
    assert Wd.meta["certificate"]["verdict"] is True


@pytest.mark.parametrize("family", [quartic_family, coupled_family])
def test_gradient_family_dual_matches_congruence(family):
    sys = family()
    S = np.diag([1.0, 2.0, 3.0])
    base = integrate(sys, np.zeros(3), SINES, TimeGrid(0, 10, 0.01))
    Wd = dual_reachability_gramian(sys, S, base)
    WR, _ = differential_gramians(sys, base)
    assert rel(Wd.W, S @ WR.W @ S.T) <= 1e-6
    assert Wd.meta["S_WR_St_mismatch"] <= 1e-6


def test_nonsymmetric_S_selects_convention():
    # A = -I commutes with everything, so S J = J' S holds for any S; with
    # C = (S B)' the output condition holds as well
    S = np.array([[1.0, 1.0], [0.0, 1.0]])
    B = np.array([[0.0], [1.0]])
    sys = lti(-np.eye(2), B, (S @ B).T)
    base = integrate(sys, np.zeros(2), None, TimeGrid(0, 3, 0.01))
    Wd = dual_reachability_gramian(sys, S, base)
    assert Wd.meta["closed_form"] == "S WR S'"
    assert Wd.meta["S_WR_St_mismatch"] <= 1e-12
    assert Wd.meta["St_WR_S_mismatch"] > 0.1


def test_dual_requires_positive_certificate():
    sys = rl_network(4)
    base = integrate(sys, np.zeros(4), SINES, TimeGrid(0, 2, 0.01))
    with pytest.raises(GramianError) as info:
        dual_reachability_gramian(sys, np.diag([1.0, 2.0, 3.0, 4.0]), base)
    assert info.value.exit_code == 4 and "res_dyn" in str(info.value)


def test_dual_zero_interval():
    sys = rl_network(4)
    base = integrate(sys, np.zeros(4), SINES, TimeGrid(0, 2, 0.01))
    assert not dual_reachability_gramian(sys, "identity", base, (1.0, 1.0)).W.any()
