"""Weighted low-rank approximation of a channel covariance.

Given an activity estimate, the received covariance of non-orthogonal pilots
is ``C(gamma) * R + sigma2 I`` (entrywise product) with
``C(gamma) = sum_k gamma_k phi_k phi_k^H``.  Dividing out ``C`` gives a
target ``Upsilon`` and ``R`` is fitted as ``X X^H`` by minimizing

    J(X; C) = || C * (Upsilon - X X^H) ||_F^2 .

Two solvers are provided: an EM iteration and sequential approximation over
a path of weight matrices with trust-region linearized steps.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import DegenerateInput, IllConditionedWeight, InvalidConfig, InvalidInput, SolverError
from .subspace import _canonical_phase, hermitize


@dataclass
class WeightFromActivity:
    C: np.ndarray
    C_abs: np.ndarray


@dataclass
class WlrmaProblem:
    target: np.ndarray          # Upsilon
    weight: np.ndarray          # C, real nonnegative
    N: int
    eps_pert: float = 1.0
    stages: int = 10

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=float)
        if np.any(self.weight < 0):
            raise InvalidInput("weights must be nonnegative")
        if self.eps_pert <= 0 or self.stages < 1 or self.N < 1:
            raise InvalidConfig("need eps_pert > 0, stages >= 1 and N >= 1")


@dataclass
class WlrmaResult:
    X: np.ndarray
    trace: list = field(default_factory=list)   # J after every iteration or stage


def weight_from_gamma(Phi, gamma) -> WeightFromActivity:
    """``C = sum_k gamma_k phi_k phi_k^H`` for pilots stacked as columns of ``Phi``."""
    Phi = np.asarray(Phi)
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0):
        raise InvalidInput("gamma must be nonnegative")
    C = hermitize((Phi * gamma) @ Phi.conj().T)
    return WeightFromActivity(C, np.abs(C))


def build_target(Sigma_hat, sigma2: float, C, floor: float = 1e-12) -> np.ndarray:
    """``(Sigma_hat - sigma2 I)`` divided entrywise by ``C``."""
    C = np.asarray(C)
    if np.min(np.abs(C)) < floor:
        i, j = np.unravel_index(np.argmin(np.abs(C)), C.shape)
        raise IllConditionedWeight(f"weight entry ({i}, {j}) has magnitude below {floor}")
    A = np.asarray(Sigma_hat) - sigma2 * np.eye(C.shape[0])
    return hermitize(A / C)


def objective_J(X, C, target) -> float:
    R = np.asarray(target) - X @ X.conj().T
    W = np.abs(np.asarray(C)) ** 2
    return float(np.sum(W * (R.real**2 + R.imag**2)))


def lra(A, N: int) -> np.ndarray:
    """Best rank-N Gramian fit ``X X^H`` to a Hermitian ``A`` (negative part clamped)."""
    w, V = np.linalg.eigh(hermitize(np.asarray(A)))
    order = np.argsort(w)[::-1][:N]
    V = _canonical_phase(V[:, order])
    return V * np.sqrt(np.maximum(w[order], 0.0))


def em_weights(C) -> np.ndarray:
    """EM blending weights, the squared weights normalized to a unit maximum.

    J weights squared residuals by |C|^2, so these are the weights for which
    the EM step is a majorize-minimize step on J.
    """
    W = np.abs(np.asarray(C)) ** 2
    top = W.max() if W.size else 0.0
    if top <= 0:
        raise IllConditionedWeight("all-zero weight matrix")
    return W / top


def em_step(X, C_tilde, target, N: int) -> np.ndarray:
    """``LRA_N(C~ * Upsilon + (1 - C~) * X X^H)``."""
    C_tilde = np.asarray(C_tilde, dtype=float)
    if C_tilde.max(initial=0.0) <= 0:
        raise IllConditionedWeight("all-zero weight matrix")
    return lra(C_tilde * target + (1.0 - C_tilde) * (X @ X.conj().T), N)


def em_solve(target, C, N: int, iterations: int = 40, X0=None) -> WlrmaResult:
    """EM iterations started from the unweighted solution unless ``X0`` is given."""
    Ct = em_weights(C)
    X = lra(target, N) if X0 is None else np.asarray(X0)
    trace = [objective_J(X, C, target)]
    for _ in range(iterations):
        X = em_step(X, Ct, target, N)
        trace.append(objective_J(X, C, target))
    return WlrmaResult(X, trace)


def _perturbation_operator(X, C) -> np.ndarray:
    """Real matrix of ``delta -> vec(C * (X D^H + D X^H))`` with D = Re + i Im."""
    L, N = X.shape
    cols = []
    for part in (1.0, 1j):
        for n in range(N):
            for l in range(L):
                M = np.zeros((L, L), dtype=complex)
                M[:, l] += X[:, n] * np.conj(part)
                M[l, :] += part * X[:, n].conj()
                M *= C
                cols.append(np.concatenate([M.real.ravel(), M.imag.ravel()]))
    return np.array(cols).T


def solve_perturbation(X, C, target_resid, eps_pert: float) -> np.ndarray:
    """Trust-region least squares for the linearized update.

    Minimizes ``||C * (R - X D^H - D X^H)||_F`` over ``||D||_F <= eps_pert``.
    The real-vectorized problem is solved exactly: the minimum-norm
    unconstrained solution when it is feasible, otherwise the boundary
    solution ``(A^T A + mu I)^{-1} A^T b`` with ``mu`` found by a scalar
    root search on the norm equation.
    """
    X = np.asarray(X)
    L, N = X.shape
    C = np.asarray(C, dtype=float)
    R = np.asarray(target_resid)
    if not (np.all(np.isfinite(R)) and np.all(np.isfinite(X))):
        raise InvalidInput("non-finite input")
    A = _perturbation_operator(X, C)
    CR = C * R
    b = np.concatenate([CR.real.ravel(), CR.imag.ravel()])
    H = A.T @ A
    g = A.T @ b
    s, Q = np.linalg.eigh(H)
    gq = Q.T @ g
    cut = s.max(initial=0.0) * H.shape[0] * np.finfo(float).eps
    keep = s > cut
    z = np.zeros_like(gq)
    z[keep] = gq[keep] / s[keep]
    if np.linalg.norm(z) > eps_pert:
        gk, sk = gq[keep], s[keep]

        def excess(mu):
            return np.linalg.norm(gk / (sk + mu)) - eps_pert

        hi = np.linalg.norm(gk) / eps_pert
        try:
            mu = brentq(excess, 0.0, hi, xtol=1e-14 * max(hi, 1.0), rtol=1e-14, maxiter=200)
        except (ValueError, RuntimeError) as exc:
            raise SolverError(f"trust-region multiplier search failed: {exc}") from None
        z = np.zeros_like(gq)
        z[keep] = gk / (sk + mu)
        z *= min(1.0, eps_pert / np.linalg.norm(z))
    delta = Q @ z
    return (delta[:L * N] + 1j * delta[L * N:]).reshape(N, L).T


def sa_weights(C_start, C_end, stages: int, i: int) -> np.ndarray:
    """Weight of stage ``i``: ``(I - i)/I * C_start + i/I * C_end``."""
    return ((stages - i) * np.asarray(C_start, dtype=float) + i * np.asarray(C_end, dtype=float)) / stages


def sa_solve(problem: WlrmaProblem, C_start=None, X0=None) -> WlrmaResult:
    """Sequential approximation along a convex path of weight matrices.

    ``C_start`` defaults to the all-one matrix, whose optimum ``LRA_N`` of
    the target is the starting point.  The trace holds ``J`` under the final
    weight after every stage.
    """
    T, C_end, N = problem.target, problem.weight, problem.N
    C0 = np.ones_like(C_end) if C_start is None else np.asarray(C_start, dtype=float)
    X = lra(T, N) if X0 is None else np.asarray(X0)
    trace = [objective_J(X, C_end, T)]
    for i in range(problem.stages):
        Ci = sa_weights(C0, C_end, problem.stages, i + 1)
        try:
            D = solve_perturbation(X, Ci, T - X @ X.conj().T, problem.eps_pert)
        except SolverError as exc:
            raise SolverError(f"stage {i}: {exc}", iterate=X, stage=i) from None
        X = X + D
        trace.append(objective_J(X, C_end, T))
    return WlrmaResult(X, trace)


def rel_error(R_true, R_hat) -> float:
    R_true = np.asarray(R_true)
    den = np.linalg.norm(R_true)
    if den == 0:
        raise DegenerateInput("reference covariance is zero")
    return float(np.linalg.norm(R_true - np.asarray(R_hat)) / den)


def joint_estimate(Y, Phi, sigma2: float, N: int, detector_cfg, rng, rounds: int = 3,
                   em_iterations: int = 40, experimental: bool = False):
    """Alternate activity detection and weighted covariance fitting.

    This loop is known to be badly conditioned and is only available with
    ``experimental=True``; it is not used by the simulation pipeline.

    Returns ``(gamma, X)`` after ``rounds`` alternations.
    """
    if not experimental:
        raise InvalidConfig("joint estimation is experimental; pass experimental=True")
    from .detector import detect
    from .subspace import effective_pilots, sample_covariance

    Phi = np.asarray(Phi)
    L = Phi.shape[0]
    Sigma_hat = sample_covariance(Y)
    X = np.ones((L, 1), dtype=complex)
    if N > 1:
        X = np.hstack([X, np.zeros((L, N - 1), dtype=complex)])
    gamma = np.zeros(Phi.shape[1])
    for _ in range(rounds):
        est = detect(Sigma_hat, effective_pilots(Phi, X), detector_cfg, rng)
        gamma = est.gamma
        if not np.any(gamma > 0):
            break
        w = weight_from_gamma(Phi, gamma)
        target = build_target(Sigma_hat, sigma2, w.C)
        X = em_solve(target, w.C_abs, N, em_iterations).X
    return gamma, X
