"""Covariance-based ML activity detection by coordinate descent.

Each coordinate step changes one user's power ``gamma_k`` by ``d``.  With
``A_k = S_k^H Sigma^{-1} S_k = V diag(lam) V^H`` and
``xi_n = [Vt^H Sigma_hat Vt]_nn`` (``Vt = Sigma^{-1} S_k V``) the change of
the negative log-likelihood is

    L_k(d) = sum_n log(1 + d lam_n) - d xi_n / (1 + d lam_n)

and the inverse covariance is refreshed with the Woodbury identity.  With
pilot hopping the covariance is block diagonal and a step sums ``L_k`` over
the sub-blocks the user transmits in.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import DomainError, InvalidConfig, InvalidInput, MonotonicityError, NumericDrift, NumericError
from .subspace import hermitize

_SQRT_EPS = math.sqrt(np.finfo(float).eps)
_GOLDEN = 0.5 * (3.0 - math.sqrt(5.0))


@dataclass
class DetectorConfig:
    iterations: int = 10
    gamma_max: float = 1.5
    sigma2: float = 1.0
    minimizer: str = "golden"          # "golden" or "roots"
    tol: float | None = None           # early stop on per-sweep decrease
    reinvert_every: int = 512
    audit: str | None = None           # None, "sweep" or "step"

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidConfig("iterations must be >= 1")
        if not self.gamma_max > 0:
            raise InvalidConfig("gamma_max must be positive")
        if not self.sigma2 > 0:
            raise InvalidConfig("sigma2 must be positive")
        if self.minimizer not in ("golden", "roots"):
            raise InvalidConfig(f"unknown minimizer {self.minimizer!r}")
        if self.audit not in (None, "sweep", "step"):
            raise InvalidConfig(f"unknown audit level {self.audit!r}")


@dataclass
class CoordinateContext:
    lam: np.ndarray
    xi: np.ndarray
    Vt: np.ndarray


@dataclass
class ActivityEstimate:
    gamma: np.ndarray
    objective: float
    trace: list = field(default_factory=list)
    n_updates: int = 0
    n_reinversions: int = 0


def build_context(S_k, Sigma_inv, Sigma_hat, sigma_hat_scale=None) -> CoordinateContext:
    """Eigen-decomposition of ``S_k^H Sigma^{-1} S_k`` and the matching ``xi``.

    ``sigma_hat_scale`` (largest magnitude in ``Sigma_hat``) only sets the
    tolerance of the realness check and may be precomputed by the caller.
    """
    SigS = Sigma_inv @ S_k
    # eigh reads a single triangle, so A needs no explicit symmetrization
    lam, V = np.linalg.eigh(S_k.conj().T @ SigS)
    Vt = SigS @ V
    xi_c = np.sum(Vt.conj() * (Sigma_hat @ Vt), axis=0)
    if not math.isfinite(abs(xi_c.sum()) + lam.sum()):
        raise NumericError("non-finite coordinate context")
    xi = xi_c.real
    if sigma_hat_scale is None:
        sigma_hat_scale = np.abs(Sigma_hat).max()
    scale = 1.0 + np.abs(xi) + sigma_hat_scale * np.sum(Vt.real**2 + Vt.imag**2, axis=0)
    if np.any(np.abs(xi_c.imag) > 1e-10 * scale):
        raise NumericError("quadratic form xi has a non-negligible imaginary part")
    return CoordinateContext(np.maximum(lam, 0.0), np.maximum(xi, 0.0), Vt)


def merge_contexts(ctxs: Sequence[CoordinateContext]) -> CoordinateContext:
    """Stack the per-block terms of one user into a single 1-D cost."""
    if len(ctxs) == 1:
        return ctxs[0]
    return CoordinateContext(np.concatenate([c.lam for c in ctxs]),
                             np.concatenate([c.xi for c in ctxs]), None)


def _terms(ctx):
    if isinstance(ctx, CoordinateContext):
        return np.asarray(ctx.lam, dtype=float), np.asarray(ctx.xi, dtype=float)
    lam, xi = ctx
    return np.atleast_1d(np.asarray(lam, dtype=float)), np.atleast_1d(np.asarray(xi, dtype=float))


def cost_1d(ctx, d: float) -> float:
    lam, xi = _terms(ctx)
    den = 1.0 + d * lam
    if np.any(den <= 0):
        raise DomainError(f"1 + d*lambda <= 0 at d={d}")
    return float(np.sum(np.log1p(d * lam) - d * xi / den))


def cost_1d_derivative(ctx, d: float) -> float:
    lam, xi = _terms(ctx)
    den = 1.0 + d * lam
    if np.any(den <= 0):
        raise DomainError(f"1 + d*lambda <= 0 at d={d}")
    return float(np.sum(lam / den - xi / den**2))


def _cost_second(lam, xi, d):
    den = 1.0 + d * lam
    return float(np.sum(-lam**2 / den**2 + 2.0 * xi * lam / den**3))


def derivative_polynomial(ctx) -> np.ndarray:
    """Numerator of L_k'(d) times prod_n (1 + d lam_n)^2, low-to-high coefficients."""
    lam, xi = _terms(ctx)
    total = np.zeros(2 * lam.size)
    for n in range(lam.size):
        poly = np.array([lam[n] - xi[n], lam[n] ** 2])
        for j in range(lam.size):
            if j != n:
                poly = npoly.polymul(poly, [1.0, 2.0 * lam[j], lam[j] ** 2])
        total[:poly.size] += poly
    return total


def _scalar_cost(lam, xi):
    pairs = list(zip(lam.tolist(), xi.tolist()))

    def f(d):
        s = 0.0
        for l, x in pairs:
            dl = d * l
            s += math.log1p(dl) - d * x / (1.0 + dl)
        return s
    return f


def _brent_bounded(f, a, b, xatol, maxfun=500):
    """Golden-section search with parabolic interpolation on [a, b]."""
    fulc = a + _GOLDEN * (b - a)
    nfc = xf = fulc
    rat = e = 0.0
    fx = f(xf)
    ffulc = fnfc = fx
    xm = 0.5 * (a + b)
    tol1 = _SQRT_EPS * abs(xf) + xatol / 3.0
    tol2 = 2.0 * tol1
    num = 1
    while abs(xf - xm) > (tol2 - 0.5 * (b - a)):
        golden = True
        if abs(e) > tol1:
            golden = False
            r = (xf - nfc) * (fx - ffulc)
            q = (xf - fulc) * (fx - fnfc)
            p = (xf - fulc) * q - (xf - nfc) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = abs(q)
            r = e
            e = rat
            if abs(p) < abs(0.5 * q * r) and q * (a - xf) < p < q * (b - xf):
                rat = p / q
                x = xf + rat
                if (x - a) < tol2 or (b - x) < tol2:
                    rat = tol1 if xm >= xf else -tol1
            else:
                golden = True
        if golden:
            e = (a - xf) if xf >= xm else (b - xf)
            rat = _GOLDEN * e
        step = max(abs(rat), tol1)
        x = xf + (step if rat >= 0 else -step)
        fu = f(x)
        num += 1
        if fu <= fx:
            if x >= xf:
                a = xf
            else:
                b = xf
            fulc, ffulc = nfc, fnfc
            nfc, fnfc = xf, fx
            xf, fx = x, fu
        else:
            if x < xf:
                a = x
            else:
                b = x
            if fu <= fnfc or nfc == xf:
                fulc, ffulc = nfc, fnfc
                nfc, fnfc = x, fu
            elif fu <= ffulc or fulc == xf or fulc == nfc:
                fulc, ffulc = x, fu
        xm = 0.5 * (a + b)
        tol1 = _SQRT_EPS * abs(xf) + xatol / 3.0
        tol2 = 2.0 * tol1
        if num >= maxfun:
            break
    return xf, fx


def _search_interval(lam, xi, lower, upper):
    """Bracket holding every minimizer of L_k over [lower, upper].

    Each term of L_k decreases up to (xi - lam)/lam^2 and increases after it,
    so all stationary points of the sum lie between the smallest and largest
    of these term minimizers.  Returns the domain-safe lower bound and the
    sorted, clipped term minimizers.
    """
    lam_l, xi_l = lam.tolist(), xi.tolist()
    lmax = max(lam_l, default=0.0)
    lo = max(lower, (-1.0 + 1e-12) / lmax) if lmax > 0 else lower
    marks = []
    for l, x in zip(lam_l, xi_l):
        if l > 0:
            marks.append((x - l) / (l * l))
        elif x > 0:
            # a bare -d*xi term has no log barrier and keeps pulling upwards
            marks.append(upper)
    if not marks:
        marks.append(0.0)
    marks = sorted({min(max(m, lo), upper) for m in marks})
    return lo, marks


def minimize_1d(ctx, lower: float, upper: float, method: str = "golden",
                n_grid: int = 16) -> float:
    """Minimize L_k(d) over [lower, upper] (``upper`` may be inf).

    ``method="golden"`` scans the bracket of term minimizers and refines each
    discrete minimum by golden-section search with parabolic steps;
    ``method="roots"`` compares all real roots of the derivative numerator.
    """
    lam, xi = _terms(ctx)
    if not lower <= 0.0 <= upper:
        raise InvalidInput(f"bounds [{lower}, {upper}] must contain 0")
    lo, marks = _search_interval(lam, xi, lower, upper)
    f = _scalar_cost(lam, xi)
    if len(marks) == 1:
        d = marks[0]
        return d if math.isfinite(d) and _improves(f(d), lam, xi, d) else 0.0
    cands = [x for x in marks if math.isfinite(x)]
    a, b = marks[0], marks[-1]
    if method == "roots":
        for r in npoly.polyroots(derivative_polynomial((lam, xi))):
            if abs(r.imag) <= 1e-3 * (1.0 + abs(r.real)) and a <= r.real <= b:
                cands.append(_polish_root(lam, xi, r.real, a, b))
    elif method == "golden":
        # A term is sharply curved within xi/lam^2 of its own minimizer (that
        # is its distance to the pole), so extra scan points sit at that scale.
        pos = lam > 0
        lp = lam[pos]
        m = (xi[pos] - lp) / lp**2
        w = xi[pos] / lp**2
        local = np.concatenate([m + 0.25 * w, m + w, m + 4.0 * w])
        local = local[(local > a) & (local < b)]
        grid = np.sort(np.concatenate([np.linspace(a, b, n_grid + 1), marks, local]))
        grid = grid[np.concatenate(([True], np.diff(grid) > 0))]
        dl = grid[:, None] * lam
        den = 1.0 + dl
        vals = np.sum(np.log1p(dl) - grid[:, None] * xi / den, axis=1)
        n = grid.size
        is_min = np.ones(n, dtype=bool)
        is_min[1:] &= vals[1:] <= vals[:-1]
        is_min[:-1] &= vals[:-1] <= vals[1:]
        for i in np.flatnonzero(is_min).tolist():
            cands.append(float(grid[i]))
            if i == 0 or i == n - 1:
                # an end point whose slope points out of the bracket is
                # already a local minimum; golden steps would only creep
                slope = float(np.sum(lam / den[i] - xi / den[i] ** 2))
                if (i == 0 and slope >= 0) or (i == n - 1 and slope <= 0):
                    continue
            ga, gb = float(grid[max(i - 1, 0)]), float(grid[min(i + 1, n - 1)])
            x, _ = _brent_bounded(f, ga, gb, 1e-12 * (1.0 + abs(ga) + abs(gb)))
            cands.append(x)
    else:
        raise InvalidConfig(f"unknown minimizer {method!r}")
    best_d, best_v = 0.0, 0.0
    for d in cands:
        v = f(d)
        if v < best_v:
            best_d, best_v = d, v
    return best_d if _improves(best_v, lam, xi, best_d) else 0.0


def _improves(value, lam, xi, d):
    # a decrease below the rounding error of evaluating L(d) is noise
    if d == 0.0:
        return False
    dl = d * lam
    size = float(np.sum(np.abs(np.log1p(dl)) + np.abs(d * xi / (1.0 + dl))))
    return value < -4.0 * np.finfo(float).eps * size


def _polish_root(lam, xi, x, a, b, steps=8):
    for _ in range(steps):
        g = float(np.sum(lam / (1 + x * lam) - xi / (1 + x * lam) ** 2))
        h = _cost_second(lam, xi, x)
        if h == 0:
            break
        nx = min(max(x - g / h, a), b)
        if abs(nx - x) <= 1e-15 * (1 + abs(x)):
            x = nx
            break
        x = nx
    return x


def woodbury_update(Sigma_inv, Vt, lam, d: float, check: bool = False) -> np.ndarray:
    """Inverse of Sigma + d S S^H given Sigma^{-1} and the coordinate context."""
    if d == 0:
        return Sigma_inv
    den = 1.0 + d * np.asarray(lam)
    if np.any(den <= 0):
        raise DomainError("I + d diag(lam) is singular or indefinite")
    out = Sigma_inv - d * (Vt / den) @ Vt.conj().T
    out = 0.5 * (out + out.conj().T)
    if check:
        try:
            np.linalg.cholesky(out)
        except np.linalg.LinAlgError:
            raise NumericDrift("updated inverse covariance is not positive definite") from None
    return out


def dense_covariance(gamma, S_block, users, sigma2) -> np.ndarray:
    """sigma2 I + sum_k gamma_k S_k S_k^H over ``users`` of one block."""
    tau = S_block.shape[1]
    users = np.asarray(users, dtype=np.intp)
    sel = users[gamma[users] > 0]
    X = (S_block[sel] * np.sqrt(gamma[sel])[:, None, None]).transpose(1, 0, 2).reshape(tau, -1)
    return sigma2 * np.eye(tau) + X @ X.conj().T


def _inverse_pd(Sigma):
    c = np.linalg.cholesky(Sigma)
    ci = np.linalg.inv(c)
    return hermitize(ci.conj().T @ ci)


def ml_objective(gamma, S_blocks, sigma_hats, block_users, sigma2) -> float:
    """sum_p log|Sigma_p| + tr(Sigma_p^{-1} Sigma_hat_p), computed densely."""
    gamma = np.asarray(gamma, dtype=float)
    total = 0.0
    for S_b, Sh, users in zip(S_blocks, sigma_hats, block_users):
        Sigma = dense_covariance(gamma, S_b, users, sigma2)
        sign, logdet = np.linalg.slogdet(Sigma)
        total += logdet + np.real(np.trace(np.linalg.solve(Sigma, Sh)))
    return float(total)


def _block_users(blocks_of_user, P):
    out = [[] for _ in range(P)]
    for k, blocks in enumerate(blocks_of_user):
        for p in blocks:
            out[p].append(k)
    return [np.asarray(u, dtype=np.intp) for u in out]


def detect_hopping(sigma_hats, S_blocks, blocks_of_user, cfg: DetectorConfig,
                   rng: np.random.Generator | None = None,
                   schedule: Sequence[Sequence[int]] | None = None,
                   callback: Callable | None = None) -> ActivityEstimate:
    """Coordinate descent over a block-diagonal covariance model.

    Parameters
    ----------
    sigma_hats : list of (tau_p, tau_p) sample covariances, one per sub-block.
    S_blocks : list of (K, tau_p, N) effective pilots; ``S_blocks[p][k]`` is
        only read when ``p`` is in ``blocks_of_user[k]``.
    blocks_of_user : for every user, the sub-blocks it transmits in.
    schedule : optional explicit coordinate order for each sweep; by default
        a fresh random permutation of the users is drawn per sweep.
    callback : called as ``callback(k, d, gamma)`` after every accepted step.
    """
    P = len(sigma_hats)
    if len(S_blocks) != P:
        raise InvalidInput("need one effective-pilot array per sub-block")
    K = len(blocks_of_user)
    for p in range(P):
        if S_blocks[p].shape[0] != K or S_blocks[p].shape[1] != sigma_hats[p].shape[0]:
            raise InvalidInput(f"block {p}: effective pilots {S_blocks[p].shape} "
                               f"inconsistent with K={K}, covariance {sigma_hats[p].shape}")
    if schedule is None and rng is None:
        raise InvalidInput("need either rng or an explicit schedule")
    sigma2 = cfg.sigma2
    blocks_of_user = [np.asarray(b, dtype=np.intp).tolist() for b in blocks_of_user]
    block_users = _block_users(blocks_of_user, P)
    Sinv = [np.eye(Sh.shape[0], dtype=complex) / sigma2 for Sh in sigma_hats]
    sh_scale = [float(np.abs(Sh).max()) if Sh.size else 0.0 for Sh in sigma_hats]
    gamma = np.zeros(K)
    f = sum(Sh.shape[0] * math.log(sigma2) + np.real(np.trace(Sh)) / sigma2 for Sh in sigma_hats)
    trace = []
    n_updates = n_reinv = 0

    def reinvert():
        nonlocal n_reinv
        for p in range(P):
            Sinv[p] = _inverse_pd(dense_covariance(gamma, S_blocks[p], block_users[p], sigma2))
        n_reinv += 1

    def dense_f():
        return ml_objective(gamma, S_blocks, sigma_hats, block_users, sigma2)

    f_checked = dense_f() if cfg.audit else None
    for sweep in range(cfg.iterations):
        order = schedule[sweep] if schedule is not None else rng.permutation(K)
        f_start = f
        for k in order:
            blocks = blocks_of_user[k]
            if not blocks:
                continue
            ctxs = [build_context(S_blocks[p][k], Sinv[p], sigma_hats[p], sh_scale[p])
                    for p in blocks]
            merged = merge_contexts(ctxs)
            g = gamma[k]
            d = minimize_1d(merged, -g, cfg.gamma_max - g, cfg.minimizer)
            if d == 0.0:
                continue
            delta = cost_1d(merged, d)
            for p, ctx in zip(blocks, ctxs):
                Sinv[p] = woodbury_update(Sinv[p], ctx.Vt, ctx.lam, d)
            gamma[k] = min(max(g + d, 0.0), cfg.gamma_max)
            f += delta
            n_updates += 1
            if n_updates % cfg.reinvert_every == 0:
                reinvert()
            if cfg.audit == "step":
                f_new = dense_f()
                if f_new > f_checked + 1e-9 * (1.0 + abs(f_checked)):
                    raise MonotonicityError(
                        f"objective rose from {f_checked!r} to {f_new!r} at user {k}")
                f_checked = f_new
            if callback is not None:
                callback(k, d, gamma)
        for p in range(P):
            try:
                np.linalg.cholesky(Sinv[p])
            except np.linalg.LinAlgError:
                reinvert()
                break
        if cfg.audit == "sweep":
            f_new = dense_f()
            if f_new > f_checked + 1e-9 * (1.0 + abs(f_checked)):
                raise MonotonicityError(f"objective rose over sweep {sweep}")
            f_checked = f_new
        trace.append(float(f))
        if cfg.tol is not None and f_start - f < cfg.tol * (1.0 + abs(f)):
            break
    return ActivityEstimate(gamma, float(f), trace, n_updates, n_reinv)


def detect(sigma_hat, S, cfg: DetectorConfig, rng: np.random.Generator | None = None,
           schedule=None, callback=None) -> ActivityEstimate:
    """Single-block coordinate descent; ``S`` is (K, L, N) or a list of L x N."""
    S = np.asarray(S)
    if S.ndim == 2:
        S = S[:, :, None]
    K = S.shape[0]
    return detect_hopping([np.asarray(sigma_hat)], [S], [[0]] * K, cfg, rng,
                          schedule=schedule, callback=callback)
