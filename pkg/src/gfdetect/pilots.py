"""Pilot sequences, hopping patterns and the structured pilot matrix."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidConfig, InvalidInput, PlanFormatError


def gen_gaussian_pilots(K: int, length: int, rng: np.random.Generator) -> np.ndarray:
    """Complex Gaussian pilots, each column rescaled to squared norm ``length``."""
    if K < 1 or length < 1:
        raise InvalidConfig("K and length must be >= 1")
    X = rng.standard_normal((length, K)) + 1j * rng.standard_normal((length, K))
    return X * (np.sqrt(length) / np.linalg.norm(X, axis=0))


@dataclass
class SubPilotBank:
    """Per-sub-block sub-pilot matrices, ``psi[p]`` has shape (tau, J)."""

    psi: list

    @property
    def P(self) -> int:
        return len(self.psi)

    @property
    def tau(self) -> int:
        return self.psi[0].shape[0]

    @property
    def J(self) -> int:
        return self.psi[0].shape[1]

    @classmethod
    def gaussian(cls, P: int, J: int, tau: int, rng: np.random.Generator):
        return cls([gen_gaussian_pilots(J, tau, rng) for _ in range(P)])


def all_one_pilot(tau: int) -> np.ndarray:
    """The dedicated all-one sequence sent on structure-learning sub-blocks."""
    return np.ones(tau, dtype=complex)


@dataclass
class HoppingPlan:
    """Hopping patterns ``z[k, p]`` in {0} U [J]; 0 means silent in block p."""

    z: np.ndarray
    J: int

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.int64)
        if self.z.ndim != 2:
            raise InvalidInput("pattern array must be K x P")
        if self.z.size and (self.z.min() < 0 or self.z.max() > self.J):
            raise InvalidInput("sub-pilot index out of range")

    @property
    def K(self) -> int:
        return self.z.shape[0]

    @property
    def P(self) -> int:
        return self.z.shape[1]

    @property
    def degrees(self) -> np.ndarray:
        return np.count_nonzero(self.z, axis=1)

    def active_blocks(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.z[k])

    def selection_matrix(self, p: int) -> np.ndarray:
        """U^(p) with U[j-1, k] = 1 iff z[k, p] = j."""
        U = np.zeros((self.J, self.K))
        users = np.flatnonzero(self.z[:, p])
        U[self.z[users, p] - 1, users] = 1.0
        return U

    def validate(self, D: int | None = None):
        if D is not None and np.any(self.degrees != D):
            bad = int(np.flatnonzero(self.degrees != D)[0])
            raise InvalidInput(f"user {bad} transmits in {self.degrees[bad]} blocks, expected {D}")


def _check_dims(K, P, J, D):
    if D < 1:
        raise InvalidConfig("D must be >= 1")
    if D > P:
        raise InvalidConfig(f"D={D} exceeds the number of sub-blocks P={P}")
    if J < 1 or K < 0:
        raise InvalidConfig("J must be >= 1 and K >= 0")


def gen_patterns_random(K: int, P: int, J: int, D: int,
                        rng: np.random.Generator) -> HoppingPlan:
    """Each user picks D distinct sub-blocks and a uniform sub-pilot in each."""
    _check_dims(K, P, J, D)
    z = np.zeros((K, P), dtype=np.int64)
    for k in range(K):
        blocks = rng.choice(P, size=D, replace=False)
        z[k, blocks] = rng.integers(1, J + 1, size=D)
    return HoppingPlan(z, J)


def gen_patterns_balanced(K: int, P: int, J: int, D: int,
                          rng: np.random.Generator) -> HoppingPlan:
    """Configuration-model style pattern generation.

    Users are visited in random order.  Each one is connected to D sub-blocks
    carrying the fewest edges so far and, inside each of them, to a sub-pilot
    of minimal degree; ties are broken uniformly at random.
    """
    _check_dims(K, P, J, D)
    z = np.zeros((K, P), dtype=np.int64)
    edges = np.zeros(P, dtype=np.int64)
    deg = np.zeros((P, J), dtype=np.int64)
    for u in rng.permutation(K):
        # a random order stably sorted by edge count breaks ties uniformly
        order = rng.permutation(P)
        chosen = order[np.argsort(edges[order], kind="stable")[:D]]
        for p in chosen.tolist():
            row = deg[p]
            low = np.flatnonzero(row == row.min())
            v = int(low[rng.integers(low.size)])
            row[v] += 1
            edges[p] += 1
            z[u, p] = v + 1
    return HoppingPlan(z, J)


@dataclass
class PatternStats:
    subpilot_degrees: np.ndarray   # (P, J)
    block_edges: np.ndarray        # (P,)
    user_degrees: np.ndarray       # (K,)
    collisions: int                # (p, j) pairs shared by >= 2 users

    @property
    def degree_histogram(self) -> dict:
        vals, counts = np.unique(self.subpilot_degrees, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, counts)}


def pattern_stats(plan: HoppingPlan) -> PatternStats:
    deg = np.zeros((plan.P, plan.J), dtype=np.int64)
    for p in range(plan.P):
        used = plan.z[:, p][plan.z[:, p] > 0]
        np.add.at(deg[p], used - 1, 1)
    return PatternStats(
        subpilot_degrees=deg,
        block_edges=deg.sum(axis=1),
        user_degrees=plan.degrees,
        collisions=int(np.count_nonzero(deg >= 2)),
    )


def assemble_pilot_matrix(bank: SubPilotBank, plan: HoppingPlan):
    """Stacked pilot matrix and its per-block pieces Psi^(p) U^(p).

    Returns ``(Phi, blocks)`` where ``Phi`` is (P*tau, K).
    """
    if bank.P != plan.P or bank.J != plan.J:
        raise InvalidInput(f"bank (P={bank.P}, J={bank.J}) does not match "
                           f"plan (P={plan.P}, J={plan.J})")
    blocks = []
    for p in range(plan.P):
        Phi_p = np.zeros((bank.tau, plan.K), dtype=complex)
        users = np.flatnonzero(plan.z[:, p])
        Phi_p[:, users] = bank.psi[p][:, plan.z[users, p] - 1]
        blocks.append(Phi_p)
    if blocks:
        Phi = np.vstack(blocks)
    else:
        Phi = np.zeros((0, plan.K), dtype=complex)
    return Phi, blocks


def write_plan_csv(plan: HoppingPlan, path, D: int | None = None):
    """CSV with one ``user,block,subpilot`` row per transmission.

    Users and blocks are zero-based, sub-pilots one-based (0 is reserved for
    "silent").  A leading comment records K, P, J and D.
    """
    D = int(plan.degrees[0]) if D is None and plan.K else D
    with open(path, "w", newline="") as fh:
        fh.write(f"# K={plan.K} P={plan.P} J={plan.J} D={D}\n")
        w = csv.writer(fh)
        w.writerow(["user", "block", "subpilot"])
        for k, p in zip(*np.nonzero(plan.z)):
            w.writerow([int(k), int(p), int(plan.z[k, p])])


def read_plan_csv(path, K=None, P=None, J=None, D=None) -> HoppingPlan:
    """Parse and validate a plan CSV, raising with the offending line number."""
    text = Path(path).read_text()
    meta = {}
    rows = []
    header_seen = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    key, val = tok.split("=", 1)
                    if val != "None":
                        meta[key] = int(val)
            continue
        fields = next(csv.reader(io.StringIO(line)))
        if not header_seen:
            if [f.strip() for f in fields] != ["user", "block", "subpilot"]:
                raise PlanFormatError("expected header 'user,block,subpilot'", lineno)
            header_seen = True
            continue
        if len(fields) != 3:
            raise PlanFormatError(f"expected 3 fields, got {len(fields)}", lineno)
        try:
            k, p, j = (int(f) for f in fields)
        except ValueError:
            raise PlanFormatError(f"non-integer field in {line!r}", lineno) from None
        rows.append((lineno, k, p, j))
    if not header_seen:
        raise PlanFormatError("missing header 'user,block,subpilot'")
    K = K if K is not None else meta.get("K", 1 + max((r[1] for r in rows), default=-1))
    P = P if P is not None else meta.get("P", 1 + max((r[2] for r in rows), default=-1))
    J = J if J is not None else meta.get("J", max((r[3] for r in rows), default=1))
    D = D if D is not None else meta.get("D")
    z = np.zeros((K, P), dtype=np.int64)
    for lineno, k, p, j in rows:
        if not 0 <= k < K:
            raise PlanFormatError(f"user {k} outside [0, {K})", lineno)
        if not 0 <= p < P:
            raise PlanFormatError(f"block {p} outside [0, {P})", lineno)
        if not 1 <= j <= J:
            raise PlanFormatError(f"sub-pilot {j} outside [1, {J}]", lineno)
        if z[k, p]:
            raise PlanFormatError(f"user {k} has two sub-pilots in block {p}", lineno)
        z[k, p] = j
    plan = HoppingPlan(z, J)
    if D is not None:
        bad = np.flatnonzero(plan.degrees != D)
        if bad.size:
            k = int(bad[0])
            lines = [r[0] for r in rows if r[1] == k]
            raise PlanFormatError(f"user {k} transmits in {plan.degrees[k]} blocks, "
                                  f"expected D={D}", lines[-1] if lines else None)
    return plan
