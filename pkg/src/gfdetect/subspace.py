"""Low-dimensional channel bases and approximation-error metrics.

A basis ``G`` (rows x N) models channel vectors as ``h ~ G theta`` with
``theta ~ CN(0, I)``, so the implied channel covariance is ``G G^H``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCovariance, DegenerateInput, InvalidConfig, InvalidInput


@dataclass
class Basis:
    G: np.ndarray
    scope: str = "sub-block"   # "full" or "sub-block"
    kind: str = "pca"
    sigma2: float = float("nan")

    @property
    def N(self) -> int:
        return self.G.shape[1]

    @property
    def rows(self) -> int:
        return self.G.shape[0]

    def covariance(self) -> np.ndarray:
        return self.G @ self.G.conj().T

    def trace(self) -> float:
        return float(np.sum(np.abs(self.G) ** 2))


def hermitize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.conj().T)


def sample_covariance(Y) -> np.ndarray:
    """(1/M) sum_m y_m y_m^H for the columns of ``Y``."""
    Y = np.asarray(Y)
    if Y.ndim != 2 or Y.shape[1] < 1:
        raise InvalidInput("need a rows x M matrix with M >= 1")
    return hermitize(Y @ Y.conj().T / Y.shape[1])


def _canonical_phase(V: np.ndarray) -> np.ndarray:
    # first non-negligible entry of every eigenvector made real-positive
    V = V.copy()
    for n in range(V.shape[1]):
        col = V[:, n]
        idx = np.flatnonzero(np.abs(col) > 1e-12 * max(np.abs(col).max(), 1e-300))
        if idx.size:
            ph = col[idx[0]] / abs(col[idx[0]])
            V[:, n] = col * np.conj(ph)
    return V


def dominant_eigenpairs(A: np.ndarray, N: int):
    """N largest eigenpairs of a Hermitian matrix, descending, canonical phase."""
    w, V = np.linalg.eigh(hermitize(A))
    order = np.argsort(w)[::-1][:N]
    return w[order], _canonical_phase(V[:, order])


def learn_pca_basis(cov, sigma2: float, N: int, scope: str = "sub-block") -> Basis:
    """PCA basis from an all-one-pilot sample covariance.

    The N dominant eigenpairs of ``cov - sigma2 I`` are kept (negative
    eigenvalues clamped to 0) and rescaled so that trace(G G^H) equals the
    dimension, i.e. the fading coefficients come out unit variance.
    """
    cov = np.asarray(cov)
    L = cov.shape[0]
    if N < 1 or N > L:
        raise InvalidConfig(f"order N={N} must lie in [1, {L}]")
    w, V = dominant_eigenpairs(cov - sigma2 * np.eye(L), N)
    w = np.clip(w, 0.0, None)
    total = w.sum()
    if total <= 64 * np.finfo(float).eps * L * max(np.abs(cov).max(), 1.0):
        raise DegenerateCovariance("no positive eigenvalue left after removing the noise floor")
    G = V * np.sqrt(L * w / total)
    return Basis(G, scope=scope, kind="pca", sigma2=float(sigma2))


def block_fading_basis(rows: int) -> Basis:
    return Basis(np.ones((rows, 1), dtype=complex), kind="block-fading")


def linear_ramp(n: int) -> np.ndarray:
    """Equally spaced points on [-1, 1] rescaled to squared norm n."""
    u = np.linspace(-1.0, 1.0, n)
    return u * np.sqrt(n / np.dot(u, u))


def fit_diag_scaling(G_tilde, target) -> np.ndarray:
    """Per-column variances x >= 0 fitting ``target ~ G_tilde diag(x) G_tilde^H``.

    Each x_n is the scalar least-squares fit of target onto g_n g_n^H, which
    is the joint minimizer when the columns are orthogonal.
    """
    G_tilde = np.asarray(G_tilde)
    norms2 = np.sum(np.abs(G_tilde) ** 2, axis=0)
    if np.any(norms2 == 0):
        raise InvalidInput("basis candidate has a zero column")
    quad = np.real(np.einsum("in,ij,jn->n", G_tilde.conj(), target, G_tilde))
    return np.clip(quad / norms2**2, 0.0, None)


def _kron_columns(T: int, F: int, v_T, v_F) -> np.ndarray:
    L = T * F
    return np.column_stack([
        np.ones(L, dtype=complex),
        np.kron(np.ones(F), v_T),
        np.kron(v_F, np.ones(T)),
    ])


def _check_grid(T, F, target):
    if T < 2 or F < 2:
        raise InvalidConfig("linear/DFT bases need T >= 2 and F >= 2")
    if np.shape(target) != (T * F, T * F):
        raise InvalidInput(f"target must be {T * F} x {T * F}")


def bwl_basis(T: int, F: int, target) -> Basis:
    """Block-wise linear basis: mean plus linear ramps in time and frequency."""
    _check_grid(T, F, target)
    Gt = _kron_columns(T, F, linear_ramp(T), linear_ramp(F))
    x = fit_diag_scaling(Gt, target)
    return Basis(Gt * np.sqrt(x), kind="bwl")


def dft_columns(n: int) -> np.ndarray:
    idx = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / n)


def dft_fit_error(Gt, x, target) -> float:
    return float(np.linalg.norm(target - (Gt * x) @ Gt.conj().T))


def dft_basis(T: int, F: int, target, return_choice: bool = False):
    """Mean plus the best single DFT column along time and along frequency.

    The DC columns are skipped since they duplicate the all-one column.
    """
    _check_grid(T, F, target)
    WT, WF = dft_columns(T), dft_columns(F)
    best = None
    for kt in range(1, T):
        for kf in range(1, F):
            Gt = _kron_columns(T, F, WT[:, kt], WF[:, kf])
            x = fit_diag_scaling(Gt, target)
            err = dft_fit_error(Gt, x, target)
            if best is None or err < best[0] - 1e-12 * max(1.0, best[0]):
                best = (err, kt, kf, Gt, x)
    err, kt, kf, Gt, x = best
    basis = Basis(Gt * np.sqrt(x), kind="dft")
    if return_choice:
        return basis, (kt, kf, err)
    return basis


def effective_pilots(phi, G) -> np.ndarray:
    """S_k = diag(phi_k) G; ``phi`` may also be a (rows, K) matrix -> (K, rows, N)."""
    phi = np.asarray(phi)
    G = G.G if isinstance(G, Basis) else np.asarray(G)
    if phi.shape[0] != G.shape[0]:
        raise InvalidInput(f"pilot length {phi.shape[0]} != basis rows {G.shape[0]}")
    if phi.ndim == 1:
        return phi[:, None] * G
    return phi.T[:, :, None] * G[None, :, :]


def project(H, G) -> np.ndarray:
    """Least-squares projection of the columns of H onto span(G)."""
    G = G.G if isinstance(G, Basis) else np.asarray(G)
    H = np.asarray(H)
    if H.shape[0] != G.shape[0]:
        raise InvalidInput("row mismatch between H and G")
    s = np.linalg.svd(G, compute_uv=False)
    if s.size == 0 or s[-1] <= s[0] * max(G.shape) * np.finfo(float).eps:
        raise InvalidInput("basis is rank deficient")
    coef = np.linalg.solve(G.conj().T @ G, G.conj().T @ H)
    return G @ coef


def project_per_block(H, G, tau: int) -> np.ndarray:
    """Apply the same tau-row basis to every consecutive tau-row block of H."""
    H = np.asarray(H)
    out = np.empty_like(H, dtype=complex)
    for start in range(0, H.shape[0], tau):
        out[start:start + tau] = project(H[start:start + tau], G)
    return out


def kappa(H, H_hat) -> float:
    """Approximation error relative to the per-column constant (block-fading) fit."""
    H = np.asarray(H)
    H_hat = np.asarray(H_hat)
    if H.shape != H_hat.shape:
        raise InvalidInput("shape mismatch")
    H_bar = np.broadcast_to(H.mean(axis=0, keepdims=True), H.shape)
    den = np.linalg.norm(H_bar - H)
    if den == 0:
        raise DegenerateInput("channel is constant along every column")
    return float(np.linalg.norm(H_hat - H) / den)


def average_diagonal_blocks(cov, tau: int, blocks=None) -> np.ndarray:
    cov = np.asarray(cov)
    P = cov.shape[0] // tau
    blocks = range(P) if blocks is None else blocks
    acc = np.zeros((tau, tau), dtype=complex)
    n = 0
    for p in blocks:
        acc += cov[p * tau:(p + 1) * tau, p * tau:(p + 1) * tau]
        n += 1
    return acc / n


def principal_angles(A, B) -> np.ndarray:
    """Principal angles between span(A) and span(B), in radians."""
    Qa, _ = np.linalg.qr(A)
    Qb, _ = np.linalg.qr(B)
    # arcsin of the residual is accurate for tiny angles where arccos is not
    resid = np.linalg.svd(Qb - Qa @ (Qa.conj().T @ Qb), compute_uv=False)
    return np.arcsin(np.clip(resid, 0.0, 1.0))
