"""Energy-based activity detection baseline for pilot hopping.

With many antennas the matched-filter energy on sub-pilot ``j`` of sub-block
``p`` approaches ``sum_k 1{z_k(p) = j} tau beta_k a_k``.  Stacking these
energies gives a sparse linear model ``e ~ Omega a`` that is solved by
non-negative least squares or a box-constrained LASSO.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, SolverError
from .pilots import HoppingPlan


@dataclass
class EnergyMeasurement:
    """Energies stacked p-major: row ``p * J + (j - 1)`` holds sub-pilot j of block p."""

    e: np.ndarray
    P: int
    J: int

    def index(self, p: int, j: int) -> int:
        if not (0 <= p < self.P and 1 <= j <= self.J):
            raise InvalidInput(f"(p={p}, j={j}) outside the measurement layout")
        return p * self.J + (j - 1)

    def block(self, p: int) -> np.ndarray:
        return self.e[p * self.J:(p + 1) * self.J]


@dataclass
class SensingMatrix:
    Omega: np.ndarray   # (P*J, K)
    P: int
    J: int


def subblock_energies(Y_blocks, psi_blocks, sigma2: float) -> EnergyMeasurement:
    """Noise-corrected matched-filter energies per (sub-block, sub-pilot).

    ``e = ||psi^H Y||^2 / (M tau) - sigma2``, clamped at zero.  For one active
    user with flat unit-variance fading the expectation is ``tau * beta``.

    Parameters
    ----------
    Y_blocks : sequence of (tau, M) received pilot blocks.
    psi_blocks : sequence of (tau, J) sub-pilot matrices, one per block.
    sigma2 : noise variance.
    """
    if len(Y_blocks) != len(psi_blocks):
        raise InvalidInput("need one sub-pilot matrix per received block")
    out = []
    J = None
    for Y, psi in zip(Y_blocks, psi_blocks):
        Y = np.asarray(Y)
        psi = np.asarray(psi)
        if Y.ndim != 2 or Y.shape[0] != psi.shape[0]:
            raise InvalidInput(f"block of shape {Y.shape} does not match sub-pilots {psi.shape}")
        if J is None:
            J = psi.shape[1]
        elif psi.shape[1] != J:
            raise InvalidInput("all blocks must carry the same number of sub-pilots")
        tau, M = Y.shape
        proj = psi.conj().T @ Y
        energy = np.sum(proj.real**2 + proj.imag**2, axis=1) / (M * tau) - sigma2
        out.append(np.maximum(energy, 0.0))
    e = np.concatenate(out) if out else np.zeros(0)
    return EnergyMeasurement(e, len(out), J or 0)


def build_omega(plan: HoppingPlan, beta, tau: int) -> SensingMatrix:
    """Indicator sensing matrix, ``Omega[p*J + j - 1, k] = tau * beta_k`` iff ``z_k(p) = j``."""
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (plan.K,))
    Omega = np.zeros((plan.P * plan.J, plan.K))
    k, p = np.nonzero(plan.z)
    Omega[p * plan.J + plan.z[k, p] - 1, k] = tau * beta[k]
    return SensingMatrix(Omega, plan.P, plan.J)


def nnls(A, b, max_iter: int | None = None, tol: float | None = None) -> np.ndarray:
    """Lawson-Hanson active-set solution of ``min ||A x - b||^2`` subject to ``x >= 0``.

    Raises
    ------
    SolverError
        When the outer loop exceeds ``max_iter`` (default ``3 * n``); the
        current iterate is attached as ``err.iterate``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or b.shape != (A.shape[0],):
        raise InvalidInput(f"shapes {A.shape} and {b.shape} are incompatible")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise InvalidInput("non-finite input")
    m, n = A.shape
    if max_iter is None:
        max_iter = 3 * n
    if tol is None:
        tol = 10 * np.finfo(float).eps * max(m, n) * max(np.abs(A).sum(axis=0).max(initial=0.0), 1.0)
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = A.T @ (b - A @ x)
    it = 0
    while np.any(~passive & (w > tol)):
        if it >= max_iter:
            raise SolverError("Lawson-Hanson did not converge", iterate=x)
        it += 1
        j = int(np.argmax(np.where(passive, -np.inf, w)))
        passive[j] = True
        while True:
            z = np.zeros(n)
            z[passive] = np.linalg.lstsq(A[:, passive], b, rcond=None)[0]
            if np.all(z[passive] > 0):
                x = z
                break
            neg = passive & (z <= 0)
            alpha = np.min(x[neg] / (x[neg] - z[neg]))
            x = x + alpha * (z - x)
            passive &= x > tol
            x[~passive] = 0.0
            if not passive.any():
                break
        w = A.T @ (b - A @ x)
    return x


def nnls_kkt_residual(A, b, x) -> float:
    """Largest violation of the NNLS optimality conditions (scaled gradient)."""
    A = np.asarray(A, dtype=float)
    g = A.T @ (A @ x - b)
    viol = np.where(x > 0, np.abs(g), np.maximum(-g, 0.0))
    return float(max(viol.max(initial=0.0), np.maximum(-x, 0.0).max(initial=0.0)))


def lasso_objective(A, b, a, lam_reg: float) -> float:
    r = np.asarray(A) @ a - b
    return float(r @ r + lam_reg * np.sum(np.abs(a)))


def lasso_duality_gap(A, b, a, lam_reg: float) -> float:
    """Fenchel duality gap of the box-constrained LASSO at ``a``.

    With ``g = 2 A^T (A a - b) + lam_reg`` the gap evaluates to
    ``sum_k a_k g_k + max(0, -g_k)``, which vanishes exactly at optimality.
    """
    g = 2.0 * (np.asarray(A).T @ (np.asarray(A) @ a - b)) + lam_reg
    return float(np.sum(a * g + np.maximum(-g, 0.0)))


def lasso(A, b, lam_reg: float = 0.0, gap_tol: float = 1e-8,
          max_sweeps: int = 100_000) -> np.ndarray:
    """``min ||A a - b||^2 + lam_reg ||a||_1`` over ``a in [0, 1]^K``.

    Cyclic projected coordinate descent on the Gram form, stopped once the
    duality gap falls below ``gap_tol * max(1, objective)``.
    """
    if lam_reg < 0:
        raise InvalidInput("lam_reg must be nonnegative")
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    Q = A.T @ A
    c = A.T @ b
    K = A.shape[1]
    a = np.zeros(K)
    q = -c.copy()              # Q a - c
    diag = np.diag(Q).copy()
    bb = float(b @ b)
    for _ in range(max_sweeps):
        for k in range(K):
            if diag[k] <= 0:
                new = 0.0 if lam_reg > 0 else a[k]
            else:
                new = a[k] - (2.0 * q[k] + lam_reg) / (2.0 * diag[k])
                new = min(max(new, 0.0), 1.0)
            delta = new - a[k]
            if delta != 0.0:
                q += Q[:, k] * delta
                a[k] = new
        g = 2.0 * q + lam_reg
        gap = float(np.sum(a * g + np.maximum(-g, 0.0)))
        obj = float(a @ (q - c)) + bb + lam_reg * a.sum()
        if gap <= gap_tol * max(1.0, obj):
            return a
    warnings.warn(f"lasso stopped after {max_sweeps} sweeps with gap {gap:.3g}")
    return a
