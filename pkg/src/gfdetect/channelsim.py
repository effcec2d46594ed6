"""Symbol-by-symbol time/frequency selective channel synthesis.

Path amplitudes follow the improved sum-of-sinusoids model, each path is
pulse-shaped with a root-raised-cosine filter sampled at integer lags, and
the resulting impulse response of every OFDM symbol is taken to the
frequency domain with an ``n_subcarriers``-point DFT.  The ``T x F`` grid is
finally flattened so that every sub-block of the grid occupies a contiguous
run of the channel vector.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InvalidConfig, InvalidInput, UnscalableProfile

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class DelayProfile:
    """Tapped-delay-line power delay profile.

    Powers are normalized to sum to one on construction.
    """

    powers: np.ndarray
    delays: np.ndarray
    name: str = ""

    def __post_init__(self):
        powers = np.atleast_1d(np.asarray(self.powers, dtype=float))
        delays = np.atleast_1d(np.asarray(self.delays, dtype=float))
        if powers.size == 0:
            raise InvalidConfig("delay profile needs at least one tap")
        if powers.shape != delays.shape:
            raise InvalidConfig("powers and delays differ in length")
        if np.any(powers < 0) or np.any(delays < 0):
            raise InvalidConfig("tap powers and delays must be non-negative")
        total = powers.sum()
        if total <= 0:
            raise InvalidConfig("delay profile carries no power")
        object.__setattr__(self, "powers", powers / total)
        object.__setattr__(self, "delays", delays)

    @property
    def n_paths(self) -> int:
        return self.powers.size

    @property
    def max_delay(self) -> float:
        return float(self.delays.max())

    def rms_delay_spread(self) -> float:
        mean = np.dot(self.powers, self.delays)
        return float(np.sqrt(max(np.dot(self.powers, self.delays**2) - mean**2, 0.0)))


@dataclass(frozen=True)
class FadingConfig:
    doppler_rad: float = 0.0
    n_sinusoids: int = 20
    bandwidth: float = 3.84e6
    rolloff: float = 0.22
    l_min: int = -6
    n_subcarriers: int = 128
    # OFDM symbol period; defaults to n_subcarriers / bandwidth (1 / subcarrier spacing)
    symbol_duration: float | None = None

    def __post_init__(self):
        if self.n_sinusoids < 1:
            raise InvalidConfig("n_sinusoids must be >= 1")
        if self.bandwidth <= 0:
            raise InvalidConfig("bandwidth must be positive")
        if not 0.0 <= self.rolloff <= 1.0:
            raise InvalidConfig("rolloff must lie in [0, 1]")
        if self.l_min > 0:
            raise InvalidConfig("l_min must be <= 0")
        if self.n_subcarriers < 1:
            raise InvalidConfig("n_subcarriers must be >= 1")

    @property
    def symbol_period(self) -> float:
        if self.symbol_duration is not None:
            return self.symbol_duration
        return self.n_subcarriers / self.bandwidth

    def l_max(self, max_delay: float) -> int:
        # guard against B*tau landing a hair above an integer
        return int(math.ceil(self.bandwidth * max_delay - 1e-9)) - self.l_min


@dataclass(frozen=True)
class GridLayout:
    T: int
    F: int
    P_time: int = 1
    P_freq: int = 1
    _perm: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if min(self.T, self.F, self.P_time, self.P_freq) < 1:
            raise InvalidConfig("grid dimensions must be positive")
        if self.T % self.P_time or self.F % self.P_freq:
            raise InvalidConfig(
                f"P_time={self.P_time} must divide T={self.T} and "
                f"P_freq={self.P_freq} must divide F={self.F}"
            )
        ts, fs = self.T_sub, self.F_sub
        perm = np.empty(self.L, dtype=np.intp)
        l = 0
        # sub-blocks and cells inside a sub-block both run time-fastest,
        # which keeps kron(1_F, u_T) style bases valid per sub-block
        for pf in range(self.P_freq):
            for pt in range(self.P_time):
                for fl in range(fs):
                    for tl in range(ts):
                        t = pt * ts + tl
                        f = pf * fs + fl
                        perm[l] = t * self.F + f
                        l += 1
        perm.setflags(write=False)
        object.__setattr__(self, "_perm", perm)

    @property
    def L(self) -> int:
        return self.T * self.F

    @property
    def P(self) -> int:
        return self.P_time * self.P_freq

    @property
    def tau(self) -> int:
        return self.L // self.P

    @property
    def T_sub(self) -> int:
        return self.T // self.P_time

    @property
    def F_sub(self) -> int:
        return self.F // self.P_freq

    def index(self, t: int, f: int) -> int:
        """Zero-based vector index of grid cell (t, f)."""
        return int(np.flatnonzero(self._perm == t * self.F + f)[0])

    def block_slice(self, p: int) -> slice:
        return slice(p * self.tau, (p + 1) * self.tau)


def doppler_from_speed(speed_kmh: float, carrier_hz: float) -> float:
    """Maximum Doppler shift in rad/s."""
    v = speed_kmh / 3.6
    return 2.0 * np.pi * v * carrier_hz / SPEED_OF_LIGHT


def gen_path_gain(cfg: FadingConfig, times, rng: np.random.Generator) -> np.ndarray:
    """One realization of a sum-of-sinusoids path amplitude at ``times``."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.size == 0:
        raise InvalidInput("times must be non-empty")
    return _sos_gains(cfg, times, 1, 1, rng)[0, 0]


def _sos_gains(cfg, times, n_links, n_paths, rng):
    n_sin = cfg.n_sinusoids
    psi = rng.uniform(-np.pi, np.pi, size=(n_links, n_paths, n_sin))
    zeta = rng.uniform(-np.pi, np.pi, size=(n_links, n_paths, n_sin))
    alpha = (2.0 * np.pi * np.arange(1, n_sin + 1) + zeta) / n_sin
    phase = cfg.doppler_rad * np.cos(alpha)[..., None] * times + psi[..., None]
    return np.exp(1j * phase).sum(axis=2) / np.sqrt(n_sin)


def rrc_impulse(t, rolloff: float, normalize: bool = True):
    """Root-raised-cosine impulse response at lag ``t`` (in sample periods).

    With ``normalize`` the response has unit peak, p(0) = 1.
    """
    beta = float(rolloff)
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    at_zero = np.isclose(t, 0.0, atol=1e-12)
    if beta > 0:
        at_sing = np.isclose(np.abs(t), 1.0 / (4.0 * beta), atol=1e-12)
    else:
        at_sing = np.zeros_like(t, dtype=bool)
    regular = ~(at_zero | at_sing)
    tr = t[regular]
    num = np.sin(np.pi * tr * (1 - beta)) + 4 * beta * tr * np.cos(np.pi * tr * (1 + beta))
    den = np.pi * tr * (1 - (4 * beta * tr) ** 2)
    out[regular] = num / den
    peak = 1.0 - beta + 4.0 * beta / np.pi
    out[at_zero] = peak
    if beta > 0:
        a = np.pi / (4.0 * beta)
        out[at_sing] = beta / np.sqrt(2) * (
            (1 + 2 / np.pi) * np.sin(a) + (1 - 2 / np.pi) * np.cos(a)
        )
    if normalize:
        out = out / peak
    return out if out.ndim else float(out)


def _lags(profile: DelayProfile, cfg: FadingConfig) -> np.ndarray:
    return np.arange(cfg.l_min, cfg.l_max(profile.max_delay) + 1)


def _pulse_matrix(profile: DelayProfile, cfg: FadingConfig) -> np.ndarray:
    """sqrt(c_i) * p(l - B tau_i) for every path i and lag l."""
    lags = _lags(profile, cfg)
    shifts = lags[None, :] - cfg.bandwidth * profile.delays[:, None]
    return np.sqrt(profile.powers)[:, None] * rrc_impulse(shifts, cfg.rolloff)


def gen_cir(profile: DelayProfile, cfg: FadingConfig, T: int,
            rng: np.random.Generator) -> np.ndarray:
    """Discrete-time impulse response of every OFDM symbol.

    Returns a ``T x (l_max - l_min + 1)`` tap matrix.  Each path draws its
    sinusoid phases from its own child stream of ``rng``.
    """
    if profile.n_paths < 1:
        raise InvalidConfig("empty delay profile")
    times = np.arange(T) * cfg.symbol_period
    gains = np.stack([gen_path_gain(cfg, times, child)
                      for child in rng.spawn(profile.n_paths)])
    return gains.T @ _pulse_matrix(profile, cfg)


def _dft_matrix(n_lags: int, cfg: FadingConfig, F: int) -> np.ndarray:
    if cfg.n_subcarriers < F:
        raise InvalidConfig(f"n_subcarriers={cfg.n_subcarriers} < F={F}")
    if cfg.n_subcarriers < n_lags:
        raise InvalidConfig(
            f"impulse response of {n_lags} taps exceeds n_subcarriers={cfg.n_subcarriers}")
    i = np.arange(n_lags)[:, None]
    f = np.arange(F)[None, :]
    return np.exp(-2j * np.pi * i * f / cfg.n_subcarriers)


def cir_to_freq(taps, cfg: FadingConfig, F: int) -> np.ndarray:
    """Frequency response on the first ``F`` of ``n_subcarriers`` bins."""
    taps = np.asarray(taps)
    return taps @ _dft_matrix(taps.shape[-1], cfg, F)


def grid_to_vector(Q, layout: GridLayout) -> np.ndarray:
    """Flatten (..., T, F) grids into (..., L) channel vectors."""
    Q = np.asarray(Q)
    if Q.shape[-2:] != (layout.T, layout.F):
        raise InvalidInput(f"grid shape {Q.shape[-2:]} does not match layout "
                           f"({layout.T}, {layout.F})")
    flat = Q.reshape(Q.shape[:-2] + (layout.L,))
    return flat[..., layout._perm]


def vector_to_grid(h, layout: GridLayout) -> np.ndarray:
    h = np.asarray(h)
    if h.shape[-1] != layout.L:
        raise InvalidInput(f"vector length {h.shape[-1]} != L={layout.L}")
    out = np.empty(h.shape[:-1] + (layout.L,), dtype=h.dtype)
    out[..., layout._perm] = h
    return out.reshape(h.shape[:-1] + (layout.T, layout.F))


def scale_delay_profile(profile: DelayProfile, target_rms: float) -> DelayProfile:
    if target_rms <= 0:
        raise InvalidConfig("target RMS delay spread must be positive")
    rms = profile.rms_delay_spread()
    if np.unique(profile.delays).size < 2 or rms <= 0:
        raise UnscalableProfile(f"profile {profile.name!r} has zero RMS delay spread")
    return DelayProfile(profile.powers, profile.delays * (target_rms / rms), profile.name)


def expected_power(profile: DelayProfile, cfg: FadingConfig, F: int) -> float:
    """Mean of E|Q_tf|^2 over the F used subcarriers (time invariant)."""
    M = _pulse_matrix(profile, cfg) @ _dft_matrix(_lags(profile, cfg).size, cfg, F)
    return float(np.mean(np.sum(np.abs(M) ** 2, axis=0)))


def generate_channels(profile: DelayProfile, cfg: FadingConfig, layout: GridLayout,
                      n_links: int, rng: np.random.Generator, normalize: bool = True,
                      chunk: int = 512) -> np.ndarray:
    """Draw ``n_links`` independent channel vectors of length L.

    With ``normalize`` the vectors are scaled so that E|h_l|^2 = 1, which
    stands in for ideal channel-inversion power control.
    """
    times = np.arange(layout.T) * cfg.symbol_period
    M = _pulse_matrix(profile, cfg) @ _dft_matrix(_lags(profile, cfg).size, cfg, layout.F)
    scale = 1.0
    if normalize:
        scale = 1.0 / np.sqrt(np.mean(np.sum(np.abs(M) ** 2, axis=0)))
    out = np.empty((n_links, layout.L), dtype=complex)
    for start in range(0, n_links, chunk):
        stop = min(start + chunk, n_links)
        q = _sos_gains(cfg, times, stop - start, profile.n_paths, rng)
        Q = np.einsum("nit,if->ntf", q, M)
        out[start:stop] = grid_to_vector(Q, layout) * scale
    return out


def channel_covariance(profile: DelayProfile, cfg: FadingConfig, layout: GridLayout,
                       normalize: bool = True) -> np.ndarray:
    """Exact L x L covariance of the vectors drawn by ``generate_channels``.

    The sinusoid angles of every path cover the circle uniformly, so a path
    amplitude has autocorrelation J0(doppler * dt); paths are independent,
    which makes the grid covariance a Kronecker product of the time
    correlation and the frequency covariance of the filtered profile.
    """
    from scipy.special import j0

    times = np.arange(layout.T) * cfg.symbol_period
    time_corr = j0(cfg.doppler_rad * (times[:, None] - times[None, :]))
    M = _pulse_matrix(profile, cfg) @ _dft_matrix(_lags(profile, cfg).size, cfg, layout.F)
    freq_cov = M.T @ M.conj()
    if normalize:
        freq_cov = freq_cov / np.mean(np.real(np.diag(freq_cov)))
    R = np.kron(time_corr, freq_cov)
    perm = layout._perm
    return R[np.ix_(perm, perm)]


def parse_profile(text: str, name: str = "") -> DelayProfile:
    powers, delays = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InvalidInput(f"{name or 'profile'} line {lineno}: expected "
                               f"'power_fraction delay_seconds', got {raw!r}")
        powers.append(float(parts[0]))
        delays.append(float(parts[1]))
    return DelayProfile(np.array(powers), np.array(delays), name)


def bundled_profiles() -> list[str]:
    root = resources.files("gfdetect") / "data" / "profiles"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".txt"))


def load_profile(name_or_path) -> DelayProfile:
    """Load a bundled profile by name (e.g. ``"TDL-B"``) or a profile file."""
    path = Path(name_or_path)
    if path.suffix == ".txt" and path.exists():
        return parse_profile(path.read_text(), path.stem)
    res = resources.files("gfdetect") / "data" / "profiles" / f"{name_or_path}.txt"
    if not res.is_file():
        raise InvalidConfig(f"unknown delay profile {name_or_path!r}; "
                            f"bundled: {', '.join(bundled_profiles())}")
    return parse_profile(res.read_text(), str(name_or_path))
