"""End-to-end simulation: scenarios, Monte-Carlo campaigns and ROC evaluation.

One trial draws user activities and a channel model, lets the active users
send the all-one pilot on the learning sub-block(s) to learn the channel
basis, has them send hopped sub-pilots on the remaining sub-blocks and runs
activity detection on those.  Trials draw every random quantity from named
sub-streams of ``SeedSequence(master_seed, spawn_key=(trial, i))``, so
results do not depend on execution order or worker count, and different
scenario variants see the same activities and channels in a given trial.
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import channelsim as cs
from .detector import DetectorConfig, detect_hopping
from .energy import build_omega, lasso, nnls, subblock_energies
from .errors import (CampaignFailure, DegenerateCovariance, DegenerateLabels, GfdetectError,
                     InvalidConfig, TrialError)
from .pilots import (HoppingPlan, SubPilotBank, assemble_pilot_matrix, gen_patterns_balanced,
                     gen_patterns_random)
from .subspace import (Basis, average_diagonal_blocks, block_fading_basis, bwl_basis, dft_basis,
                       effective_pilots, learn_pca_basis, sample_covariance)

BASIS_KINDS = ("pca-learned", "oracle-pca", "block-fading", "bwl", "dft")
PATTERN_KINDS = ("balanced", "random")
DETECTORS = ("covariance", "energy")
CHANNELS = ("tdl", "block-fading")
PILOT_KINDS = ("gaussian", "orthogonal")
ALL_PROFILES = ("TDL-A", "TDL-B", "TDL-C", "TUx", "RAx", "HTx")

# named random sub-streams of every trial, in a fixed order
STREAMS = ("activity", "model", "channels", "patterns", "pilots", "noise", "detector",
           "interference")
_FIXED_KEY = 2**32 - 1


@dataclass(frozen=True)
class Scenario:
    K: int = 500
    M: int = 32
    activity_prob: float = 0.1
    T: int = 6
    F: int = 12
    P_time: int = 2
    P_freq: int = 2
    J: int = 500
    D: int = 1
    snr_db: float = 0.0
    N: int = 3
    basis_kind: str = "pca-learned"
    pattern_kind: str = "balanced"
    pilot_kind: str = "gaussian"
    detector: str = "covariance"
    iterations: int = 10
    gamma_max_factor: float = 1.5
    minimizer: str = "golden"
    tol: float | None = None
    lasso_reg: float | None = None
    channel: str = "tdl"
    profiles: tuple = ALL_PROFILES
    rms_min: float = 0.5e-6
    rms_max: float = 1.5e-6
    speed_min: float = 80.0
    speed_max: float = 160.0
    carrier_hz: float = 30e9
    bandwidth: float = 3.84e6
    n_subcarriers: int = 128
    n_sinusoids: int = 20
    rolloff: float = 0.22
    l_min: int = -6
    learning_blocks: int = 1
    n_trials: int = 300
    master_seed: int = 2024
    interferers: int = 0
    interference_power: float = 1.0
    fixed_pilots: bool = False

    def __post_init__(self):
        if isinstance(self.profiles, (list, str)):
            object.__setattr__(self, "profiles", tuple(
                [self.profiles] if isinstance(self.profiles, str) else self.profiles))
        checks = [
            (self.K >= 1 and self.M >= 1, "K and M must be >= 1"),
            (0.0 <= self.activity_prob <= 1.0, "activity_prob must lie in [0, 1]"),
            (self.basis_kind in BASIS_KINDS, f"basis_kind must be one of {BASIS_KINDS}"),
            (self.pattern_kind in PATTERN_KINDS, f"pattern_kind must be one of {PATTERN_KINDS}"),
            (self.pilot_kind in PILOT_KINDS, f"pilot_kind must be one of {PILOT_KINDS}"),
            (self.detector in DETECTORS, f"detector must be one of {DETECTORS}"),
            (self.channel in CHANNELS, f"channel must be one of {CHANNELS}"),
            (len(self.profiles) >= 1, "need at least one delay profile"),
            (0 < self.rms_min <= self.rms_max, "need 0 < rms_min <= rms_max"),
            (0 <= self.speed_min <= self.speed_max, "need 0 <= speed_min <= speed_max"),
            (self.n_trials >= 1, "n_trials must be >= 1"),
            (self.interferers >= 0, "interferers must be >= 0"),
            (self.N >= 1, "N must be >= 1"),
            (self.gamma_max_factor > 0, "gamma_max_factor must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise InvalidConfig(msg)
        layout = self.layout      # validates divisibility
        if not 1 <= self.learning_blocks < layout.P:
            raise InvalidConfig(f"learning_blocks must lie in [1, P-1] with P={layout.P}")
        if not 1 <= self.D <= layout.P - self.learning_blocks:
            raise InvalidConfig("D must lie in [1, number of detection sub-blocks]")
        if self.pilot_kind == "orthogonal" and self.J > layout.tau:
            raise InvalidConfig("orthogonal sub-pilots need J <= tau")
        if self.basis_kind == "pca-learned" and self.N > layout.tau:
            raise InvalidConfig("N exceeds the sub-block size")

    @property
    def layout(self) -> cs.GridLayout:
        return cs.GridLayout(self.T, self.F, self.P_time, self.P_freq)

    @property
    def sigma2(self) -> float:
        return 1.0

    @property
    def beta(self) -> float:
        """Power-controlled large-scale fading, identical for all users."""
        return self.sigma2 * 10.0 ** (self.snr_db / 10.0)

    @property
    def n_detect_blocks(self) -> int:
        return self.layout.P - self.learning_blocks

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["profiles"] = list(self.profiles)
        return d


DESK = Scenario()
FULL = Scenario(K=4000, M=100, T=12, F=36, P_time=3, P_freq=3, J=4000, n_trials=3000)
PRESETS = {"desk": DESK, "full": FULL}


def _convert(name, default, text):
    text = text.strip()
    if name in ("tol", "lasso_reg"):
        return None if text.lower() in ("none", "") else float(text)
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise InvalidConfig(f"{name}: expected a boolean, got {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        return tuple(t.strip() for t in text.split(",") if t.strip())
    return text


def parse_scenario(text: str, base: Scenario | None = None) -> Scenario:
    """Parse ``key = value`` lines (``#`` comments) on top of ``base``.

    A ``preset = desk|full`` line selects the base.  Unknown keys are
    rejected with the offending line number.
    """
    base = base or DESK
    defaults = {f.name: getattr(DESK, f.name) for f in dataclasses.fields(Scenario)}
    changes = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "preset":
            if value not in PRESETS:
                raise InvalidConfig(f"line {lineno}: unknown preset {value!r}")
            base = PRESETS[value]
            continue
        if key not in defaults:
            raise InvalidConfig(f"line {lineno}: unknown key {key!r}")
        try:
            changes[key] = _convert(key, defaults[key], value)
        except ValueError as exc:
            raise InvalidConfig(f"line {lineno}: bad value for {key}: {exc}") from None
    return dataclasses.replace(base, **changes)


def load_scenario(name_or_path) -> Scenario:
    """A preset name, a bundled scenario file name or a path to a scenario file."""
    if name_or_path in PRESETS:
        return PRESETS[name_or_path]
    path = Path(name_or_path)
    if path.exists():
        return parse_scenario(path.read_text())
    res = resources.files("gfdetect") / "data" / "scenarios" / f"{name_or_path}.txt"
    if res.is_file():
        return parse_scenario(res.read_text())
    raise InvalidConfig(f"unknown scenario {name_or_path!r}")


def trial_streams(scenario: Scenario, trial: int) -> dict:
    out = {}
    for i, name in enumerate(STREAMS):
        frozen = scenario.fixed_pilots and name in ("patterns", "pilots")
        key = (_FIXED_KEY if frozen else trial, i)
        out[name] = np.random.default_rng(np.random.SeedSequence(scenario.master_seed, spawn_key=key))
    return out


@dataclass
class TrialResult:
    trial: int
    truth: np.ndarray
    scores: np.ndarray
    objective_trace: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    fallback: bool = False
    interference_block: int | None = None
    channel_model: tuple = ()

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(self.truth))


@dataclass
class ChannelDraw:
    profile: cs.DelayProfile
    fading: cs.FadingConfig
    speed_kmh: float
    rms: float


def draw_channel_model(scenario: Scenario, rng: np.random.Generator) -> ChannelDraw:
    name = scenario.profiles[int(rng.integers(len(scenario.profiles)))]
    rms = float(rng.uniform(scenario.rms_min, scenario.rms_max))
    speed = float(rng.uniform(scenario.speed_min, scenario.speed_max))
    base = cs.load_profile(name)
    profile = base if base.rms_delay_spread() == 0 else cs.scale_delay_profile(base, rms)
    fading = cs.FadingConfig(
        doppler_rad=cs.doppler_from_speed(speed, scenario.carrier_hz),
        n_sinusoids=scenario.n_sinusoids, bandwidth=scenario.bandwidth,
        rolloff=scenario.rolloff, l_min=scenario.l_min, n_subcarriers=scenario.n_subcarriers)
    return ChannelDraw(profile, fading, speed, rms)


def draw_channels(scenario: Scenario, model: ChannelDraw, n_users: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Channels of ``n_users`` users, shaped (n_users, L, M)."""
    layout, M = scenario.layout, scenario.M
    if scenario.channel == "block-fading":
        g = (rng.standard_normal((n_users, layout.P, M))
             + 1j * rng.standard_normal((n_users, layout.P, M))) / np.sqrt(2)
        return np.repeat(g, layout.tau, axis=1)
    H = cs.generate_channels(model.profile, model.fading, layout, n_users * M, rng)
    return H.reshape(n_users, M, layout.L).transpose(0, 2, 1)


def oracle_block_covariance(scenario: Scenario, model: ChannelDraw) -> np.ndarray:
    layout = scenario.layout
    if scenario.channel == "block-fading":
        return np.ones((layout.tau, layout.tau), dtype=complex)
    R = cs.channel_covariance(model.profile, model.fading, layout)
    return average_diagonal_blocks(R, layout.tau)


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def inject_interference(Y_blocks, n_interferers: int, beta_interf: float, rng: np.random.Generator,
                        channel_draw=None):
    """Add flashlight interference to one uniformly chosen block.

    Each interferer sends a complex Gaussian sequence through its own freshly
    drawn channel.  ``channel_draw(n, p, rng)`` must return (n, tau, M)
    channels for block ``p``; by default they are i.i.d. CN(0, 1).

    Returns the new list of blocks and the index of the contaminated block
    (``None`` when ``n_interferers`` is 0).
    """
    if n_interferers < 0:
        raise InvalidConfig("n_interferers must be >= 0")
    out = [np.array(Y, copy=True) for Y in Y_blocks]
    if n_interferers == 0 or not out:
        return out, None
    p = int(rng.integers(len(out)))
    tau, M = out[p].shape
    x = _cn(rng, (n_interferers, tau))
    if channel_draw is None:
        Hi = _cn(rng, (n_interferers, tau, M))
    else:
        Hi = channel_draw(n_interferers, p, rng)
    out[p] = out[p] + np.sqrt(beta_interf) * np.einsum("it,itm->tm", x, Hi)
    return out, p


def make_basis(scenario: Scenario, kind: str, learn_cov, n_learn_active: int, oracle_cov):
    """Basis for one trial; returns ``(basis, fell_back)``.

    Learned bases need at least one active user on the learning block.  When
    there is none (or the learned covariance carries no signal) the oracle
    basis is used and the trial is flagged.
    """
    layout, N, s2 = scenario.layout, scenario.N, scenario.sigma2
    tau = layout.tau

    def oracle():
        return learn_pca_basis(oracle_cov, 0.0, min(N, tau))

    if kind == "block-fading":
        return block_fading_basis(tau), False
    if kind == "oracle-pca":
        return oracle(), False
    if kind == "pca-learned":
        if n_learn_active == 0:
            return oracle(), True
        try:
            return learn_pca_basis(learn_cov, s2, N), False
        except DegenerateCovariance:
            return oracle(), True
    # bwl / dft: fit to the noise-free learned covariance rescaled to trace tau,
    # the same unit-variance convention the PCA basis follows
    target = None
    fell_back = False
    if n_learn_active > 0:
        target = learn_cov - s2 * np.eye(tau)
        tr = float(np.real(np.trace(target)))
        target = target * (tau / tr) if tr > 0 else None
    if target is None:
        target, fell_back = oracle_cov * (tau / float(np.real(np.trace(oracle_cov)))), True
    fit = bwl_basis if kind == "bwl" else dft_basis
    return fit(layout.T_sub, layout.F_sub, target), fell_back


def make_pilots(scenario: Scenario, rng_patterns, rng_pilots):
    P_det, K, J, D, tau = (scenario.n_detect_blocks, scenario.K, scenario.J, scenario.D,
                           scenario.layout.tau)
    gen = gen_patterns_balanced if scenario.pattern_kind == "balanced" else gen_patterns_random
    plan = gen(K, P_det, J, D, rng_patterns)
    if scenario.pilot_kind == "orthogonal":
        F = np.fft.fft(np.eye(tau))[:, :J]
        bank = SubPilotBank([F.copy() for _ in range(P_det)])
    else:
        bank = SubPilotBank.gaussian(P_det, J, tau, rng_pilots)
    return plan, bank


@dataclass
class TrialSignals:
    """Everything a trial synthesizes before detection."""

    truth: np.ndarray
    model: ChannelDraw
    H: np.ndarray                 # (n_active, L, M) channels of the active users
    basis: Basis
    fell_back: bool
    plan: HoppingPlan
    bank: SubPilotBank
    Phi_blocks: list              # (tau, K) pilot matrix of every detection block
    Y_blocks: list                # (tau, M) received signal of every detection block
    learn_cov: np.ndarray
    interference_block: int | None
    timings: dict
    detector_rng: np.random.Generator

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.truth)


def _annotate(trial, stage, exc):
    return TrialError(f"trial {trial} failed during {stage}: {exc}", trial, stage)


def simulate_trial(scenario: Scenario, trial: int = 0) -> TrialSignals:
    """Draw activities and channels, learn the basis and synthesize the pilot blocks."""
    stage = "setup"
    timings = {}
    try:
        t0 = time.perf_counter()
        st = trial_streams(scenario, trial)
        layout = scenario.layout
        P, M = layout.P, scenario.M
        amp = math.sqrt(scenario.beta)

        stage = "activity"
        truth = st["activity"].random(scenario.K) < scenario.activity_prob
        active = np.flatnonzero(truth)

        stage = "channels"
        model = draw_channel_model(scenario, st["model"])
        H = draw_channels(scenario, model, active.size, st["channels"])
        W = _cn(st["noise"], (layout.L, M)) * math.sqrt(scenario.sigma2)
        t1 = time.perf_counter()
        timings["channels"] = t1 - t0

        # active users send the all-one pilot on the trailing learning blocks
        stage = "learning"
        covs = []
        for p in range(P - scenario.learning_blocks, P):
            rows = layout.block_slice(p)
            covs.append(sample_covariance(amp * H[:, rows, :].sum(axis=0) + W[rows]))
        learn_cov = sum(covs) / len(covs)
        oracle_cov = oracle_block_covariance(scenario, model)
        basis, fell_back = make_basis(scenario, scenario.basis_kind, learn_cov, active.size, oracle_cov)
        t2 = time.perf_counter()
        timings["learning"] = t2 - t1

        stage = "pilots"
        plan, bank = make_pilots(scenario, st["patterns"], st["pilots"])
        _, Phi_blocks = assemble_pilot_matrix(bank, plan)
        Y_blocks = []
        for p in range(scenario.n_detect_blocks):
            rows = layout.block_slice(p)
            users = np.flatnonzero(plan.z[active, p])
            Yp = W[rows].copy()
            if users.size:
                Yp += amp * np.einsum("tk,ktm->tm", Phi_blocks[p][:, active[users]],
                                      H[users][:, rows, :])
            Y_blocks.append(Yp)

        stage = "interference"
        hit = None
        if scenario.interferers:
            def channel_draw(n, p, rng):
                return draw_channels(scenario, model, n, rng)[:, layout.block_slice(p), :]
            Y_blocks, hit = inject_interference(
                Y_blocks, scenario.interferers, scenario.interference_power * scenario.beta,
                st["interference"], channel_draw)
        timings["signals"] = time.perf_counter() - t2
    except TrialError:
        raise
    except (GfdetectError, np.linalg.LinAlgError, ArithmeticError, ValueError) as exc:
        raise _annotate(trial, stage, exc) from exc
    return TrialSignals(truth, model, H, basis, fell_back, plan, bank, Phi_blocks, Y_blocks,
                        learn_cov, hit, timings, st["detector"])


def detect_trial(scenario: Scenario, sig: TrialSignals, basis: Basis | None = None):
    """Soft activity scores and the objective trace (empty for the energy detector)."""
    if scenario.detector == "energy":
        meas = subblock_energies(sig.Y_blocks, sig.bank.psi, scenario.sigma2)
        Omega = build_omega(sig.plan, scenario.beta, scenario.layout.tau).Omega
        if scenario.lasso_reg is None:
            return nnls(Omega, meas.e), []
        return lasso(Omega, meas.e, scenario.lasso_reg), []
    basis = sig.basis if basis is None else basis
    cfg = DetectorConfig(iterations=scenario.iterations,
                         gamma_max=scenario.gamma_max_factor * scenario.beta,
                         sigma2=scenario.sigma2, minimizer=scenario.minimizer, tol=scenario.tol)
    S_blocks = [effective_pilots(Phi_p, basis) for Phi_p in sig.Phi_blocks]
    sig_hats = [sample_covariance(Y) for Y in sig.Y_blocks]
    users = [sig.plan.active_blocks(k) for k in range(sig.plan.K)]
    est = detect_hopping(sig_hats, S_blocks, users, cfg, sig.detector_rng)
    return est.gamma, est.trace


def run_trial(scenario: Scenario, trial: int = 0) -> TrialResult:
    """Simulate one slot and return ground truth and soft activity scores."""
    sig = simulate_trial(scenario, trial)
    t0 = time.perf_counter()
    try:
        scores, trace = detect_trial(scenario, sig)
    except (GfdetectError, np.linalg.LinAlgError, ArithmeticError, ValueError) as exc:
        raise _annotate(trial, "detection", exc) from exc
    timings = dict(sig.timings, detection=time.perf_counter() - t0)
    m = sig.model
    return TrialResult(trial, sig.truth, np.asarray(scores, dtype=float), list(trace), timings,
                       sig.fell_back, sig.interference_block,
                       (m.profile.name, m.rms, m.speed_kmh))


@dataclass
class TrialFailure:
    trial: int
    stage: str | None
    message: str


@dataclass
class CampaignResult:
    scenario: Scenario
    results: list
    failures: list = field(default_factory=list)

    @property
    def scores(self) -> np.ndarray:
        return np.array([r.scores for r in self.results])

    @property
    def truth(self) -> np.ndarray:
        return np.array([r.truth for r in self.results])

    @property
    def fallback_count(self) -> int:
        return sum(r.fallback for r in self.results)

    def timing_summary(self) -> dict:
        keys = sorted({k for r in self.results for k in r.timings})
        return {k: float(np.mean([r.timings.get(k, 0.0) for r in self.results])) for k in keys}


def _safe_trial(args):
    scenario, trial = args
    try:
        return run_trial(scenario, trial)
    except TrialError as exc:
        return TrialFailure(trial, exc.stage, str(exc))


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("GFDETECT_WORKERS", "1")))
    except ValueError:
        raise InvalidConfig("GFDETECT_WORKERS must be an integer") from None


def run_monte_carlo(scenario: Scenario, workers: int | None = None,
                    max_failure_rate: float = 0.01) -> CampaignResult:
    """Run ``scenario.n_trials`` independent trials, optionally in worker processes.

    Trials that fail are recorded and skipped; the campaign aborts with
    :class:`CampaignFailure` when more than ``max_failure_rate`` of them fail.
    """
    workers = default_workers() if workers is None else workers
    jobs = [(scenario, i) for i in range(scenario.n_trials)]
    if workers <= 1:
        out = [_safe_trial(j) for j in jobs]
    else:
        chunk = max(1, len(jobs) // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_safe_trial, jobs, chunksize=chunk))
    results = sorted((r for r in out if isinstance(r, TrialResult)), key=lambda r: r.trial)
    failures = sorted((r for r in out if isinstance(r, TrialFailure)), key=lambda r: r.trial)
    if len(failures) > max_failure_rate * scenario.n_trials:
        raise CampaignFailure(f"{len(failures)} of {scenario.n_trials} trials failed; "
                              f"first: {failures[0].message}")
    return CampaignResult(scenario, results, failures)


@dataclass
class RocCurve:
    """Empirical ROC; a user is declared active when its score is >= threshold."""

    thresholds: np.ndarray
    pfa: np.ndarray
    pmd: np.ndarray

    def partial_auc(self, lo: float = 1e-3, hi: float = 1e-1) -> float:
        return partial_auc(self, lo, hi)


def compute_roc(scores, truth, n_thresholds: int | None = None) -> RocCurve:
    """ROC over all distinct score values, or ``n_thresholds`` equally spaced ones.

    The curve starts at threshold +inf (nothing declared active) and ends at
    -inf (everything declared active).
    """
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(truth, dtype=bool).ravel()
    if s.shape != y.shape:
        raise InvalidConfig("scores and truth must have the same size")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("need at least one active and one inactive label")
    if n_thresholds is None:
        order = np.argsort(-s, kind="stable")
        s_sorted, y_sorted = s[order], y[order]
        tp = np.cumsum(y_sorted)
        fp = np.cumsum(~y_sorted)
        last = np.concatenate([s_sorted[1:] != s_sorted[:-1], [True]])
        thr = s_sorted[last]
        tp, fp = tp[last], fp[last]
    else:
        thr = np.linspace(s.max(), s.min(), n_thresholds)
        tp = np.array([(s[y] >= t).sum() for t in thr])
        fp = np.array([(s[~y] >= t).sum() for t in thr])
    thr = np.concatenate([[np.inf], thr, [-np.inf]])
    tp = np.concatenate([[0], tp, [n_pos]])
    fp = np.concatenate([[0], fp, [n_neg]])
    return RocCurve(thr, fp / n_neg, 1.0 - tp / n_pos)


def partial_auc(roc: RocCurve, lo: float = 1e-3, hi: float = 1e-1) -> float:
    """Area under the piecewise-linear p_md(p_fa) curve for p_fa in [lo, hi].

    Lower is better; a perfect detector scores 0.
    """
    if not 0.0 <= lo < hi <= 1.0:
        raise InvalidConfig("need 0 <= lo < hi <= 1")
    x0, x1 = roc.pfa[:-1], roc.pfa[1:]
    y0, y1 = roc.pmd[:-1], roc.pmd[1:]
    a = np.clip(x0, lo, hi)
    b = np.clip(x1, lo, hi)
    width = x1 - x0
    ok = (b > a) & (width > 0)
    slope = np.zeros_like(width)
    slope[ok] = (y1[ok] - y0[ok]) / width[ok]
    ya = y0 + slope * (a - x0)
    yb = y0 + slope * (b - x0)
    return float(np.sum(np.where(ok, 0.5 * (ya + yb) * (b - a), 0.0)))


def campaign_pauc(campaign: CampaignResult, lo=1e-3, hi=1e-1) -> float:
    return partial_auc(compute_roc(campaign.scores, campaign.truth), lo, hi)


def paired_bootstrap(camp_a: CampaignResult, camp_b: CampaignResult, n_boot: int = 400,
                     seed: int = 0, lo: float = 1e-3, hi: float = 1e-1,
                     level: float = 0.95) -> dict:
    """Bootstrap of ``pAUC(b) - pAUC(a)`` resampling trials jointly.

    Both campaigns must cover the same trial indices (they then share
    activities and channels trial by trial).  Returns the point difference,
    the half-width of the percentile confidence interval and both pAUCs.
    """
    ta = [r.trial for r in camp_a.results]
    tb = [r.trial for r in camp_b.results]
    common = sorted(set(ta) & set(tb))
    ia = {t: i for i, t in enumerate(ta)}
    ib = {t: i for i, t in enumerate(tb)}
    Sa, Ya = camp_a.scores[[ia[t] for t in common]], camp_a.truth[[ia[t] for t in common]]
    Sb, Yb = camp_b.scores[[ib[t] for t in common]], camp_b.truth[[ib[t] for t in common]]
    pa = partial_auc(compute_roc(Sa, Ya), lo, hi)
    pb = partial_auc(compute_roc(Sb, Yb), lo, hi)
    rng = np.random.default_rng(seed)
    n = len(common)
    diffs = np.empty(n_boot)
    for i in range(n_boot):
        idx = rng.integers(0, n, n)
        diffs[i] = (partial_auc(compute_roc(Sb[idx], Yb[idx]), lo, hi)
                    - partial_auc(compute_roc(Sa[idx], Ya[idx]), lo, hi))
    q = np.quantile(diffs, [(1 - level) / 2, (1 + level) / 2])
    return {"pauc_a": pa, "pauc_b": pb, "diff": pb - pa,
            "half_width": float(0.5 * (q[1] - q[0])), "ci": [float(q[0]), float(q[1])]}


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, cwd=Path(__file__).resolve().parent, timeout=10)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_scores_csv(path, campaign: CampaignResult) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("trial,user,score,truth\n")
        for r in campaign.results:
            t = r.trial
            fh.writelines(f"{t},{k},{s!r},{int(a)}\n"
                          for k, (s, a) in enumerate(zip(r.scores.tolist(), r.truth.tolist())))


def read_scores_csv(path):
    """Returns ``(trials, scores, truth)`` with one row per trial."""
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding=None)
    trials = np.unique(data["trial"])
    K = int(data["user"].max()) + 1
    scores = np.zeros((trials.size, K))
    truth = np.zeros((trials.size, K), dtype=bool)
    pos = {t: i for i, t in enumerate(trials.tolist())}
    rows = np.array([pos[t] for t in data["trial"].tolist()])
    scores[rows, data["user"]] = data["score"]
    truth[rows, data["user"]] = data["truth"].astype(bool)
    return trials, scores, truth


def write_roc_csv(path, roc: RocCurve) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("threshold,pfa,pmd\n")
        for t, a, b in zip(roc.thresholds.tolist(), roc.pfa.tolist(), roc.pmd.tolist()):
            fh.write(f"{t!r},{a!r},{b!r}\n")


def summary_dict(campaign: CampaignResult, roc: RocCurve | None = None,
                 lo: float = 1e-3, hi: float = 1e-1) -> dict:
    roc = roc or compute_roc(campaign.scores, campaign.truth)
    return {
        "scenario": campaign.scenario.to_dict(),
        "n_trials": campaign.scenario.n_trials,
        "completed_trials": len(campaign.results),
        "failures": [dataclasses.asdict(f) for f in campaign.failures],
        "fallback_count": campaign.fallback_count,
        "pauc": {"pfa_range": [lo, hi], "value": partial_auc(roc, lo, hi)},
        "git_describe": git_describe(),
    }


def write_campaign(out_dir, campaign: CampaignResult, plot: bool = True) -> dict:
    """Write scores.csv, roc.csv, summary.json, timings.json and roc.png.

    Everything except timings.json is a deterministic function of the
    scenario and its master seed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    roc = compute_roc(campaign.scores, campaign.truth)
    write_scores_csv(out / "scores.csv", campaign)
    write_roc_csv(out / "roc.csv", roc)
    summary = summary_dict(campaign, roc)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "timings.json").write_text(json.dumps(campaign.timing_summary(), indent=2) + "\n")
    if plot:
        from .plotting import plot_roc
        plot_roc({campaign.scenario.basis_kind: roc}, out / "roc.png")
    return summary


@dataclass
class WlrmaBenchmark:
    rel_errors: dict          # method -> relative covariance error
    em_trace: list            # (J, rel_error) after every EM iteration
    sa_trace: list            # (J, rel_error) after every SA stage


def wlrma_benchmark(seed: int = 0, M: int = 100, n_active: int = 50, T: int = 5, F: int = 10,
                    N: int = 3, snr_db: float = 0.0, stages: int = 10, eps_pert: float = 1.0,
                    em_iterations: int = 40, scenario: Scenario | None = None) -> WlrmaBenchmark:
    """Covariance estimation from Gaussian pilots (EM, SA, unweighted) vs all-one pilots.

    ``n_active`` users with known powers share one T x F block.  The channel
    model is drawn from the families of ``scenario`` (desk defaults) and the
    reference covariance is its exact per-block covariance.
    """
    from .pilots import gen_gaussian_pilots
    from .wlrma import (build_target, em_step, em_weights, lra, objective_J, rel_error,
                        sa_weights, solve_perturbation, weight_from_gamma)

    scenario = scenario or DESK
    layout = cs.GridLayout(T, F)
    L = layout.L
    sigma2 = 1.0
    beta = sigma2 * 10.0 ** (snr_db / 10.0)
    ss = np.random.SeedSequence(seed)
    r_model, r_ch, r_pil, r_noise = (np.random.default_rng(s) for s in ss.spawn(4))
    model = draw_channel_model(scenario, r_model)
    R = cs.channel_covariance(model.profile, model.fading, layout)
    H = cs.generate_channels(model.profile, model.fading, layout, 2 * n_active * M, r_ch)
    H = H.reshape(2, n_active, M, L).transpose(0, 1, 3, 2)
    noise = _cn(r_noise, (2, L, M)) * math.sqrt(sigma2)

    Phi = gen_gaussian_pilots(n_active, L, r_pil)
    gamma = np.full(n_active, beta)
    Y = math.sqrt(beta) * np.einsum("lk,klm->lm", Phi, H[0]) + noise[0]
    weight = weight_from_gamma(Phi, gamma)
    target = build_target(sample_covariance(Y), sigma2, weight.C)

    def record(X):
        return (objective_J(X, weight.C_abs, target), rel_error(R, X @ X.conj().T))

    X_unw = lra(target, N)
    X_em = X_unw
    Ct = em_weights(weight.C_abs)
    em_trace = [record(X_em)]
    for _ in range(em_iterations):
        X_em = em_step(X_em, Ct, target, N)
        em_trace.append(record(X_em))
    X_sa = X_unw
    C0 = np.ones_like(weight.C_abs)
    sa_trace = [record(X_sa)]
    for i in range(stages):
        Ci = sa_weights(C0, weight.C_abs, stages, i + 1)
        X_sa = X_sa + solve_perturbation(X_sa, Ci, target - X_sa @ X_sa.conj().T, eps_pert)
        sa_trace.append(record(X_sa))

    # all-one pilots: the same users, fresh channels and noise on a second block
    Y1 = math.sqrt(beta) * H[1].sum(axis=0) + noise[1]
    X_one = lra((sample_covariance(Y1) - sigma2 * np.eye(L)) / gamma.sum(), N)
    errs = {
        "all-one": rel_error(R, X_one @ X_one.conj().T),
        "em": em_trace[-1][1],
        "sa": sa_trace[-1][1],
        "unweighted": rel_error(R, X_unw @ X_unw.conj().T),
    }
    return WlrmaBenchmark(errs, em_trace, sa_trace)
