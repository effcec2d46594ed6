import numpy as np
import pytest
from hypothesis import given, strategies as st

from gfdetect import subspace as sb
from gfdetect.errors import DegenerateCovariance, DegenerateInput, InvalidConfig, InvalidInput

from conftest import crandn


def test_sample_covariance_single_column(rng):
    y = crandn(rng, 4, 1)
    assert np.allclose(sb.sample_covariance(y), y @ y.conj().T)


def test_sample_covariance_zero():
    assert np.all(sb.sample_covariance(np.zeros((3, 5))) == 0)


def test_sample_covariance_loop_oracle(rng):
    Y = crandn(rng, 4, 3)
    ref = np.zeros((4, 4), complex)
    for m in range(3):
        for i in range(4):
            for j in range(4):
                ref[i, j] += Y[i, m] * np.conj(Y[j, m]) / 3
    S = sb.sample_covariance(Y)
    assert np.allclose(S, ref, atol=1e-12)
    assert np.array_equal(S, S.conj().T)


def test_sample_covariance_empty():
    with pytest.raises(InvalidInput):
        sb.sample_covariance(np.zeros((3, 0)))


def test_pca_two_by_two():
    B = sb.learn_pca_basis(np.diag([4.0, 2.0]), 1.0, 1)
    assert np.allclose(B.G[:, 0], [np.sqrt(2), 0])


def test_pca_recovers_exact_model(rng):
    L, N = 12, 3
    Q, _ = np.linalg.qr(crandn(rng, L, N))
    G0 = Q * np.sqrt([6.0, 4.0, 2.0])
    B = sb.learn_pca_basis(G0 @ G0.conj().T + 0.7 * np.eye(L), 0.7, N)
    assert np.max(sb.principal_angles(B.G, G0)) < 1e-8
    assert B.trace() == pytest.approx(L)
    assert np.allclose(B.covariance(), G0 @ G0.conj().T, atol=1e-10)


def test_pca_pure_noise():
    with pytest.raises(DegenerateCovariance):
        sb.learn_pca_basis(0.5 * np.eye(4), 0.5, 2)


def test_pca_order_too_large():
    with pytest.raises(InvalidConfig):
        sb.learn_pca_basis(np.eye(3), 0.0, 4)


def test_pca_matches_truncated_evd(rng):
    A = crandn(rng, 8, 20)
    S = A @ A.conj().T / 20 + np.eye(8)
    B = sb.learn_pca_basis(S, 1.0, 3)
    w, V = np.linalg.eigh(S - np.eye(8))
    top = np.argsort(w)[::-1][:3]
    Rt = (V[:, top] * np.clip(w[top], 0, None)) @ V[:, top].conj().T
    assert np.allclose(B.covariance() * np.clip(w[top], 0, None).sum() / 8, Rt, atol=1e-9)


def test_block_fading_basis():
    B = sb.block_fading_basis(4)
    assert np.array_equal(B.G[:, 0], np.ones(4)) and B.trace() == 4
    h = 2.5 * np.ones((4, 1))
    assert np.allclose(sb.project(h, B), h)


def test_linear_ramp_three_points():
    assert np.allclose(sb.linear_ramp(3), [-np.sqrt(1.5), 0, np.sqrt(1.5)])


def test_bwl_columns_orthogonal():
    Gt = sb._kron_columns(4, 5, sb.linear_ramp(4), sb.linear_ramp(5))
    gram = Gt.conj().T @ Gt
    assert np.allclose(gram, np.diag(np.diag(gram)), atol=1e-12)
    assert np.allclose(np.diag(gram).real, 20)


def test_bwl_recovers_planted_scaling():
    T, F = 4, 5
    Gt = sb._kron_columns(T, F, sb.linear_ramp(T), sb.linear_ramp(F))
    x = np.array([1.3, 0.4, 0.2])
    B = sb.bwl_basis(T, F, (Gt * x) @ Gt.conj().T)
    assert np.allclose(np.sum(np.abs(B.G) ** 2, axis=0) / 20, x, atol=1e-10)


def test_bwl_needs_two_by_two():
    with pytest.raises(InvalidConfig):
        sb.bwl_basis(1, 4, np.eye(4))


def test_dft_recovers_planted_columns():
    T, F = 4, 6
    Gt = sb._kron_columns(T, F, sb.dft_columns(T)[:, 2], sb.dft_columns(F)[:, 3])
    x = np.array([1.0, 0.5, 0.3])
    B, (kt, kf, err) = sb.dft_basis(T, F, (Gt * x) @ Gt.conj().T, return_choice=True)
    assert (kt, kf) == (2, 3) and err < 1e-9
    assert np.allclose(np.sum(np.abs(B.G) ** 2, axis=0) / (T * F), x, atol=1e-10)


def test_dft_flat_target():
    B = sb.dft_basis(3, 4, np.ones((12, 12)))
    col_power = np.sum(np.abs(B.G) ** 2, axis=0)
    assert col_power[0] == pytest.approx(12) and np.allclose(col_power[1:], 0, atol=1e-12)


def test_dft_choice_is_exhaustive_minimum(rng):
    T, F = 3, 4
    A = crandn(rng, 12, 12)
    target = A @ A.conj().T
    _, (kt, kf, err) = sb.dft_basis(T, F, target, return_choice=True)
    WT, WF = sb.dft_columns(T), sb.dft_columns(F)
    errs = {}
    for a in range(1, T):
        for b in range(1, F):
            Gt = sb._kron_columns(T, F, WT[:, a], WF[:, b])
            errs[a, b] = sb.dft_fit_error(Gt, sb.fit_diag_scaling(Gt, target), target)
    assert err == pytest.approx(min(errs.values()), rel=1e-12)
    assert errs[kt, kf] == pytest.approx(err, rel=1e-12)


def test_fit_diag_single_column():
    Gt = sb._kron_columns(3, 3, sb.linear_ramp(3), sb.linear_ramp(3))
    g = Gt[:, 0:1]
    x = sb.fit_diag_scaling(Gt, 2.0 * g @ g.conj().T)
    assert np.allclose(x, [2.0, 0, 0], atol=1e-12)


def test_fit_diag_zero_target():
    Gt = sb._kron_columns(3, 3, sb.linear_ramp(3), sb.linear_ramp(3))
    assert np.all(sb.fit_diag_scaling(Gt, np.zeros((9, 9))) == 0)


def test_fit_diag_matches_scalar_regression(rng):
    Gt = sb._kron_columns(3, 4, sb.linear_ramp(3), sb.linear_ramp(4))
    A = crandn(rng, 12, 12)
    target = A @ A.conj().T
    x = sb.fit_diag_scaling(Gt, target)
    for n in range(3):
        M = np.outer(Gt[:, n], Gt[:, n].conj())
        c = np.real(np.vdot(M.ravel(), target.ravel())) / np.vdot(M.ravel(), M.ravel()).real
        assert x[n] == pytest.approx(max(c, 0.0), rel=1e-12)


def test_fit_diag_zero_column():
    with pytest.raises(InvalidInput):
        sb.fit_diag_scaling(np.zeros((3, 1)), np.eye(3))


def test_effective_pilots(rng):
    G = crandn(rng, 6, 2)
    assert np.array_equal(sb.effective_pilots(np.ones(6), G), G)
    phi = crandn(rng, 6)
    S = sb.effective_pilots(phi, np.ones((6, 1)))
    assert np.allclose(S[:, 0], phi)
    Sk = sb.effective_pilots(phi, G)
    for i in range(6):
        for n in range(2):
            assert abs(Sk[i, n] - phi[i] * G[i, n]) < 1e-14
    many = sb.effective_pilots(np.column_stack([phi, 2 * phi]), G)
    assert many.shape == (2, 6, 2) and np.allclose(many[1], 2 * Sk)
    with pytest.raises(InvalidInput):
        sb.effective_pilots(np.ones(5), G)


def test_project_cases(rng):
    G = crandn(rng, 5, 2)
    H = G @ crandn(rng, 2, 3)
    assert np.allclose(sb.project(H, G), H, atol=1e-10)
    Q, _ = np.linalg.qr(crandn(rng, 5, 5))
    assert np.allclose(sb.project(Q[:, 2:], Q[:, :2]), 0, atol=1e-12)
    H = crandn(rng, 5, 3)
    GhG = G.conj().T @ G
    inv = np.array([[GhG[1, 1], -GhG[0, 1]], [-GhG[1, 0], GhG[0, 0]]]) / (
        GhG[0, 0] * GhG[1, 1] - GhG[0, 1] * GhG[1, 0])
    assert np.allclose(sb.project(H, G), G @ inv @ G.conj().T @ H, atol=1e-12)
    with pytest.raises(InvalidInput):
        sb.project(H, np.ones((5, 2)))


@given(st.integers(0, 2**31), st.integers(1, 4))
def test_project_idempotent_nonexpansive(seed, N):
    r = np.random.default_rng(seed)
    G = crandn(r, 7, N)
    H = crandn(r, 7, 4)
    P1 = sb.project(H, G)
    assert np.allclose(sb.project(P1, G), P1, atol=1e-9)
    assert np.linalg.norm(P1) <= np.linalg.norm(H) * (1 + 1e-12)


def test_kappa_endpoints(rng):
    H = crandn(rng, 6, 4)
    assert sb.kappa(H, H) == 0
    Hbar = np.broadcast_to(H.mean(axis=0), H.shape)
    assert sb.kappa(H, Hbar) == pytest.approx(1.0)
    with pytest.raises(DegenerateInput):
        sb.kappa(np.ones((3, 2)), np.ones((3, 2)))


def test_kappa_nonincreasing_in_order(rng):
    A = crandn(rng, 10, 10)
    H = A @ crandn(rng, 10, 50)
    S = sb.sample_covariance(H)
    ks = [sb.kappa(H, sb.project(H, sb.learn_pca_basis(S, 0.0, n))) for n in range(1, 8)]
    assert all(b <= a + 1e-12 for a, b in zip(ks, ks[1:]))


def test_average_diagonal_blocks():
    C = np.arange(16.0).reshape(4, 4)
    assert np.allclose(sb.average_diagonal_blocks(C, 2), (C[:2, :2] + C[2:, 2:]) / 2)
    assert np.allclose(sb.average_diagonal_blocks(C, 2, [1]), C[2:, 2:])


def test_canonical_phase_first_entry_real(rng):
    V = sb._canonical_phase(crandn(rng, 4, 3))
    assert np.all(V[0].real > 0) and np.allclose(V[0].imag, 0)
