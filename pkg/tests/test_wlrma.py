import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gfdetect import wlrma as wl
from gfdetect.errors import DegenerateInput, IllConditionedWeight, InvalidConfig, InvalidInput

from conftest import crandn, random_psd


def random_problem(r, L=6, N=2, lo=0.1):
    X0 = crandn(r, L, N)
    target = X0 @ X0.conj().T + 0.3 * random_psd(r, L) - 0.2 * random_psd(r, L)
    target = (target + target.conj().T) / 2
    C = r.uniform(lo, 1.0, (L, L))
    return target, (C + C.T) / 2


# weight_from_gamma ---------------------------------------------------------

def test_weight_zero_gamma(rng):
    w = wl.weight_from_gamma(crandn(rng, 5, 3), np.zeros(3))
    assert np.all(w.C == 0)


def test_weight_all_one_pilots(rng):
    g = rng.uniform(0, 2, 4)
    w = wl.weight_from_gamma(np.ones((5, 4)), g)
    assert np.allclose(w.C, g.sum() * np.ones((5, 5)))


def test_weight_single_user_outer_product(rng):
    phi = crandn(rng, 6)
    w = wl.weight_from_gamma(phi[:, None], [0.7])
    assert np.allclose(w.C, 0.7 * np.outer(phi, phi.conj()), atol=1e-14)
    assert np.allclose(np.diag(w.C).real, 0.7 * np.abs(phi) ** 2)
    assert np.all(w.C_abs >= 0)


def test_weight_rejects_negative_gamma(rng):
    with pytest.raises(InvalidInput):
        wl.weight_from_gamma(crandn(rng, 3, 2), [1.0, -0.1])


# build_target ---------------------------------------------------------------

def test_target_all_one_weight(rng):
    S = random_psd(rng, 4)
    assert np.allclose(wl.build_target(S, 0.5, np.ones((4, 4))), S - 0.5 * np.eye(4))


def test_target_noise_only():
    assert np.all(wl.build_target(2.0 * np.eye(3), 2.0, np.full((3, 3), 0.4)) == 0)


def test_target_two_by_two():
    S = np.array([[3.0, 1 + 1j], [1 - 1j, 2.0]])
    C = np.array([[2.0, 0.5], [0.5, 4.0]])
    want = np.array([[1.0, 2 + 2j], [2 - 2j, 0.25]])
    assert np.allclose(wl.build_target(S, 1.0, C), want)


def test_target_small_weight_rejected():
    C = np.ones((3, 3))
    C[0, 2] = C[2, 0] = 1e-14
    with pytest.raises(IllConditionedWeight):
        wl.build_target(np.eye(3), 0.0, C)


# objective_J ---------------------------------------------------------------

def test_objective_zero_cases(rng):
    X = crandn(rng, 4, 2)
    assert wl.objective_J(X, rng.uniform(0, 1, (4, 4)), X @ X.conj().T) == pytest.approx(0, abs=1e-20)
    assert wl.objective_J(X, np.zeros((4, 4)), random_psd(rng, 4)) == 0


def test_objective_double_loop(rng):
    X = crandn(rng, 3, 1)
    C = rng.uniform(-1, 1, (3, 3))
    U = random_psd(rng, 3)
    ref = 0.0
    for i in range(3):
        for j in range(3):
            ref += abs(C[i, j] * (U[i, j] - X[i, 0] * np.conj(X[j, 0]))) ** 2
    assert wl.objective_J(X, C, U) == pytest.approx(ref, rel=1e-12)


@given(st.integers(0, 2**31))
def test_objective_sign_free(seed):
    r = np.random.default_rng(seed)
    X = crandn(r, 4, 2)
    C = r.uniform(-1, 1, (4, 4))
    U = random_psd(r, 4)
    assert wl.objective_J(X, C, U) == pytest.approx(wl.objective_J(X, np.abs(C), U), rel=1e-12)


# lra ------------------------------------------------------------------------

def test_lra_exact_rank(rng):
    X = crandn(rng, 6, 2)
    A = X @ X.conj().T
    Y = wl.lra(A, 2)
    assert np.allclose(Y @ Y.conj().T, A, atol=1e-10)


def test_lra_clamps_negative():
    Y = wl.lra(np.diag([2.0, -1.0]), 1)
    assert np.allclose(Y @ Y.conj().T, np.diag([2.0, 0.0]))
    Y2 = wl.lra(np.diag([2.0, -1.0]), 2)
    assert np.allclose(Y2 @ Y2.conj().T, np.diag([2.0, 0.0]))


def test_lra_eckart_young(rng):
    A = random_psd(rng, 6) - 0.5 * random_psd(rng, 6)
    A = (A + A.conj().T) / 2
    Y = wl.lra(A, 2)
    best = np.linalg.norm(A - Y @ Y.conj().T)
    for _ in range(1000):
        Z = crandn(rng, 6, 2)
        assert np.linalg.norm(A - Z @ Z.conj().T) >= best - 1e-12


@given(st.integers(0, 2**31), st.integers(1, 5))
def test_lra_rank_and_psd(seed, N):
    r = np.random.default_rng(seed)
    A = crandn(r, 6, 6)
    Y = wl.lra(A + A.conj().T, N)
    G = Y @ Y.conj().T
    assert Y.shape == (6, N)
    assert np.linalg.matrix_rank(G, tol=1e-9) <= N
    assert np.linalg.eigvalsh(G).min() > -1e-10


# EM -------------------------------------------------------------------------

def test_em_weights_unit_max(rng):
    W = wl.em_weights(rng.uniform(-2, 2, (4, 4)))
    assert W.max() == 1 and W.min() >= 0
    with pytest.raises(IllConditionedWeight):
        wl.em_weights(np.zeros((3, 3)))


def test_em_step_unweighted_is_lra(rng):
    U = random_psd(rng, 5)
    X = crandn(rng, 5, 2)
    Xn = wl.em_step(X, np.ones((5, 5)), U, 2)
    assert np.allclose(Xn @ Xn.conj().T, wl.lra(U, 2) @ wl.lra(U, 2).conj().T)
    Xf = wl.em_step(Xn, np.ones((5, 5)), U, 2)
    assert np.allclose(Xf @ Xf.conj().T, Xn @ Xn.conj().T)


def test_em_step_zero_weight(rng):
    with pytest.raises(IllConditionedWeight):
        wl.em_step(crandn(rng, 3, 1), np.zeros((3, 3)), np.eye(3), 1)


def test_em_trace_monotone_40_iterations(rng):
    U, C = random_problem(rng, L=8, N=3, lo=0.05)
    res = wl.em_solve(U, C, 3, iterations=40)
    assert len(res.trace) == 41
    assert all(b <= a + 1e-9 * (1 + abs(a)) for a, b in zip(res.trace, res.trace[1:]))
    assert res.trace[-1] < res.trace[0]


@settings(max_examples=30)
@given(st.integers(0, 2**31), st.integers(1, 3))
def test_em_never_increases(seed, N):
    r = np.random.default_rng(seed)
    U, C = random_problem(r, L=5, N=N)
    res = wl.em_solve(U, C, N, iterations=10)
    assert all(b <= a + 1e-9 * (1 + abs(a)) for a, b in zip(res.trace, res.trace[1:]))


# trust-region step ----------------------------------------------------------

def test_perturbation_zero_residual(rng):
    D = wl.solve_perturbation(crandn(rng, 4, 2), rng.uniform(0, 1, (4, 4)), np.zeros((4, 4)), 1.0)
    assert np.allclose(D, 0)


def _normal_equations(X, C, R):
    A = wl._perturbation_operator(X, C)
    CR = C * R
    b = np.concatenate([CR.real.ravel(), CR.imag.ravel()])
    return A, b


def test_perturbation_unconstrained_matches_lstsq(rng):
    X = crandn(rng, 3, 1)
    C = rng.uniform(0.5, 1, (3, 3))
    R = random_psd(rng, 3)
    D = wl.solve_perturbation(X, C, R, 1e9)
    A, b = _normal_equations(X, C, R)
    z = np.linalg.lstsq(A, b, rcond=None)[0]
    ref = (z[:3] + 1j * z[3:]).reshape(1, 3).T
    lin = lambda D: C * (X @ D.conj().T + D @ X.conj().T)
    assert np.allclose(lin(D), lin(ref), atol=1e-9)
    assert np.linalg.norm(C * R - lin(D)) == pytest.approx(np.linalg.norm(b - A @ z), rel=1e-9)


def test_perturbation_binding_ball(rng):
    X = crandn(rng, 4, 1)
    C = rng.uniform(0.5, 1, (4, 4))
    R = 50 * random_psd(rng, 4)
    free = wl.solve_perturbation(X, C, R, 1e9)
    eps = 0.1 * np.linalg.norm(free)
    D = wl.solve_perturbation(X, C, R, eps)
    assert np.linalg.norm(D) == pytest.approx(eps, abs=1e-6)
    A, b = _normal_equations(X, C, R)
    vec = lambda D: np.concatenate([D[:, 0].real, D[:, 0].imag])
    val = np.linalg.norm(A @ vec(D) - b)
    for _ in range(500):
        Z = crandn(rng, 4, 1)
        Z *= eps / np.linalg.norm(Z)
        assert np.linalg.norm(A @ vec(Z) - b) >= val - 1e-9


def test_perturbation_rejects_nonfinite(rng):
    R = np.eye(3)
    R[0, 0] = np.nan
    with pytest.raises(InvalidInput):
        wl.solve_perturbation(crandn(rng, 3, 1), np.ones((3, 3)), R, 1.0)


# sequential approximation --------------------------------------------------

def test_sa_weights_endpoints():
    a, b = np.zeros((2, 2)), np.ones((2, 2))
    assert np.all(wl.sa_weights(a, b, 4, 0) == 0)
    assert np.all(wl.sa_weights(a, b, 4, 4) == 1)
    assert np.allclose(wl.sa_weights(a, b, 4, 1), 0.25)


def test_sa_stationary_start(rng):
    U = random_psd(rng, 5)
    res = wl.sa_solve(wl.WlrmaProblem(U, np.ones((5, 5)), 2, 1.0, 5))
    X0 = wl.lra(U, 2)
    assert np.allclose(res.X @ res.X.conj().T, X0 @ X0.conj().T, atol=1e-9)


def test_sa_steps_inside_ball(rng):
    U, C = random_problem(rng, L=6, N=2)
    prob = wl.WlrmaProblem(U, C, 2, eps_pert=0.05, stages=6)
    X = wl.lra(U, 2)
    for i in range(prob.stages):
        Ci = wl.sa_weights(np.ones_like(C), C, prob.stages, i + 1)
        D = wl.solve_perturbation(X, Ci, U - X @ X.conj().T, prob.eps_pert)
        assert np.linalg.norm(D) <= prob.eps_pert * (1 + 1e-9)
        X = X + D


def test_sa_close_to_em_on_mild_weights(rng):
    L, N = 6, 2
    X0 = crandn(rng, L, N)
    U = X0 @ X0.conj().T + 0.05 * random_psd(rng, L)
    C = rng.uniform(0.5, 1.0, (L, L))
    C = (C + C.T) / 2
    em = wl.em_solve(U, C, N, iterations=200)
    sa = wl.sa_solve(wl.WlrmaProblem(U, C, N, eps_pert=1.0, stages=10))
    assert sa.trace[-1] <= 1.05 * em.trace[-1] + 1e-12


def test_problem_validation():
    with pytest.raises(InvalidInput):
        wl.WlrmaProblem(np.eye(2), -np.ones((2, 2)), 1)
    with pytest.raises(InvalidConfig):
        wl.WlrmaProblem(np.eye(2), np.ones((2, 2)), 1, eps_pert=0)
    with pytest.raises(InvalidConfig):
        wl.WlrmaProblem(np.eye(2), np.ones((2, 2)), 1, stages=0)


# rel_error -----------------------------------------------------------------

def test_rel_error_cases(rng):
    R = random_psd(rng, 4)
    assert wl.rel_error(R, R) == 0
    assert wl.rel_error(R, np.zeros_like(R)) == pytest.approx(1)
    assert wl.rel_error(R, 2 * R) == pytest.approx(1)
    with pytest.raises(DegenerateInput):
        wl.rel_error(np.zeros((2, 2)), np.eye(2))


def test_joint_estimate_is_gated(rng):
    with pytest.raises(InvalidConfig):
        wl.joint_estimate(np.zeros((3, 4)), np.ones((3, 2)), 1.0, 1, None, rng)
