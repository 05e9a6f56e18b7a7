"""Frequency-selective MIMO channels from a tapped-delay-line power-delay profile.

Tap gains are i.i.d. circularly-symmetric complex Gaussian per
``(tap, rx, tx)`` with variance equal to the tap's normalized power; no
spatial correlation or Doppler is modelled.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .rng import stream

BUILTIN_PROFILES = ("flat1", "model-b")
# Delays within this many seconds of the 1/bandwidth grid count as on-grid.
GRID_TOLERANCE_S = 1e-9


class ProfileError(ValueError):
    """Unknown or malformed power-delay profile."""


class OffGridDelayError(ValueError):
    """A tap delay is not a whole number of samples at the configured bandwidth."""


def vht80_subcarriers() -> tuple[int, ...]:
    """Populated 80 MHz VHT subcarriers: -122..-2 and 2..122 (234 data + 8 pilots)."""
    return tuple(range(-122, -1)) + tuple(range(2, 123))


@dataclass(frozen=True)
class SimConfig:
    n_tx: int = 2
    n_rx: int = 2
    carrier_freq_hz: float = 5.25e9
    bandwidth_hz: float = 80e6
    fft_size: int = 256
    occupied_subcarriers: tuple[int, ...] = field(default_factory=vht80_subcarriers)
    n_samples: int = 10_000
    seed: int = 0
    # Measurement noise on the simulated CSI; the reference pipeline is noiseless.
    csi_noise_var: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "occupied_subcarriers",
                           tuple(int(k) for k in self.occupied_subcarriers))
        if self.n_tx < 1 or self.n_rx < 1:
            raise ValueError("n_tx and n_rx must be >= 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        ks = self.occupied_subcarriers
        if not ks:
            raise ValueError("occupied_subcarriers is empty")
        if len(set(ks)) != len(ks):
            raise ValueError("occupied_subcarriers contains duplicates")
        half = self.fft_size // 2
        if min(ks) < -half or max(ks) >= half:
            raise ValueError(f"subcarrier index outside [-{half}, {half})")
        if self.bandwidth_hz <= 0 or self.csi_noise_var < 0:
            raise ValueError("bandwidth must be positive and csi_noise_var non-negative")

    @property
    def subcarrier_spacing_hz(self) -> float:
        return self.bandwidth_hz / self.fft_size

    @property
    def n_subcarriers(self) -> int:
        return len(self.occupied_subcarriers)

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["occupied_subcarriers"] = list(self.occupied_subcarriers)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SimConfig":
        d = dict(d)
        if "occupied_subcarriers" in d:
            d["occupied_subcarriers"] = tuple(d["occupied_subcarriers"])
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class ChannelProfile:
    name: str
    delays_ns: np.ndarray
    powers_db: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.delays_ns, dtype=float)
        p = np.asarray(self.powers_db, dtype=float)
        if d.size == 0:
            raise ProfileError(f"profile {self.name!r} has no taps")
        if d.shape != p.shape:
            raise ProfileError("delay and power lists differ in length")
        if d[0] != 0:
            raise ProfileError(f"first tap delay must be 0 ns, got {d[0]}")
        if np.any(np.diff(d) <= 0):
            raise ProfileError(f"profile {self.name!r}: delays must be strictly increasing")
        if not (np.isfinite(d).all() and np.isfinite(p).all()):
            raise ProfileError("non-finite delay or power")
        object.__setattr__(self, "delays_ns", d)
        object.__setattr__(self, "powers_db", p)

    @property
    def n_taps(self) -> int:
        return self.delays_ns.size

    @property
    def powers(self) -> np.ndarray:
        """Linear tap powers normalized to unit sum."""
        lin = 10.0 ** (self.powers_db / 10.0)
        return lin / lin.sum()

    @property
    def delays_s(self) -> np.ndarray:
        return self.delays_ns * 1e-9


def parse_profile(text: str, name: str = "custom") -> ChannelProfile:
    """Parse ``delay_ns<TAB>power_db`` lines; ``#`` starts a comment."""
    delays, powers = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ProfileError(f"{name}:{lineno}: expected 'delay_ns<TAB>power_db', got {raw!r}")
        try:
            delays.append(float(parts[0]))
            powers.append(float(parts[1]))
        except ValueError as exc:
            raise ProfileError(f"{name}:{lineno}: {exc}") from None
    return ChannelProfile(name, np.array(delays), np.array(powers))


def load_profile(source) -> ChannelProfile:
    """A built-in profile by name, or a profile file by path."""
    if isinstance(source, ChannelProfile):
        return source
    key = str(source)
    if key.lower() in BUILTIN_PROFILES:
        text = resources.files("bfmlab").joinpath("profiles", f"{key.lower()}.tsv").read_text("utf-8")
        return parse_profile(text, key.lower())
    path = Path(key)
    if not path.is_file():
        raise ProfileError(f"unknown profile {key!r}; built-ins are {BUILTIN_PROFILES}")
    return parse_profile(path.read_text("utf-8"), path.stem)


@dataclass(frozen=True)
class ChannelRealization:
    taps: np.ndarray  # (n_taps, n_rx, n_tx) complex
    delays_s: np.ndarray


@dataclass(frozen=True)
class CsiTensor:
    h: np.ndarray  # (K, n_rx, n_tx) complex
    subcarrier_indices: tuple[int, ...]

    def __post_init__(self):
        if self.h.ndim != 3 or self.h.shape[0] != len(self.subcarrier_indices):
            raise ValueError(f"CSI shape {self.h.shape} does not match "
                             f"{len(self.subcarrier_indices)} subcarriers")


@dataclass(frozen=True)
class AmplitudePhase:
    amplitude: np.ndarray
    phase: np.ndarray


def complex_gaussian(rng: np.random.Generator, shape, var=1.0) -> np.ndarray:
    """Circularly-symmetric complex normal samples with per-entry variance ``var``."""
    scale = np.sqrt(np.asarray(var, dtype=float) / 2.0)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return scale * (re + 1j * im)


def draw_realization(profile: ChannelProfile, config: SimConfig, index: int) -> ChannelRealization:
    """Tap gains for sample ``index``; depends only on ``(config.seed, index)``."""
    rng = stream(config.seed, "channel", index)
    shape = (profile.n_taps, config.n_rx, config.n_tx)
    taps = complex_gaussian(rng, shape, profile.powers[:, None, None])
    return ChannelRealization(taps, profile.delays_s)


def _subcarrier_freqs(config: SimConfig) -> np.ndarray:
    return np.asarray(config.occupied_subcarriers, dtype=float) * config.subcarrier_spacing_hz


def to_frequency_response(r: ChannelRealization, config: SimConfig) -> CsiTensor:
    """H[k] = sum_t g_t exp(-j 2 pi f_k tau_t) at every occupied subcarrier."""
    phase = np.exp(-2j * np.pi * np.outer(_subcarrier_freqs(config), r.delays_s))
    h = np.tensordot(phase, r.taps, axes=(1, 0))
    return CsiTensor(h, config.occupied_subcarriers)


def to_frequency_response_fft(r: ChannelRealization, config: SimConfig) -> CsiTensor:
    """FFT evaluation of the same response; requires delays on the 1/bandwidth grid."""
    samples = r.delays_s * config.bandwidth_hz
    idx = np.rint(samples).astype(int)
    if np.any(np.abs(samples - idx) / config.bandwidth_hz > GRID_TOLERANCE_S):
        raise OffGridDelayError(f"delays {r.delays_s} s are not multiples of 1/{config.bandwidth_hz:g} s")
    if idx.max() >= config.fft_size:
        raise OffGridDelayError("delay spread exceeds the FFT length")
    impulse = np.zeros((config.fft_size, *r.taps.shape[1:]), dtype=complex)
    np.add.at(impulse, idx, r.taps)
    spectrum = np.fft.fft(impulse, axis=0)
    bins = np.mod(config.occupied_subcarriers, config.fft_size)
    return CsiTensor(spectrum[bins], config.occupied_subcarriers)


def simulate_csi(profile: ChannelProfile, config: SimConfig, indices=None) -> np.ndarray:
    """CSI for many realizations at once, shape ``(n, K, n_rx, n_tx)``.

    Row ``n`` equals ``to_frequency_response(draw_realization(profile, config, indices[n]))``
    plus optional measurement noise drawn from the matching ``"noise"`` stream.
    """
    if indices is None:
        indices = range(config.n_samples)
    indices = list(indices)
    taps = np.stack([draw_realization(profile, config, i).taps for i in indices]) if indices else \
        np.zeros((0, profile.n_taps, config.n_rx, config.n_tx), complex)
    phase = np.exp(-2j * np.pi * np.outer(_subcarrier_freqs(config), profile.delays_s))
    h = np.einsum("kt,ntij->nkij", phase, taps)
    if config.csi_noise_var > 0:
        for row, i in enumerate(indices):
            h[row] += complex_gaussian(stream(config.seed, "noise", i), h.shape[1:], config.csi_noise_var)
    return h


def amp_phase(h) -> AmplitudePhase:
    """Amplitude and phase with the phase in (-pi, pi]."""
    h = np.asarray(h, dtype=complex)
    phase = np.angle(h)
    phase = np.where(phase <= -np.pi, np.pi, phase)
    return AmplitudePhase(np.abs(h), phase)


def apply_channel(H, x, noise_var: float, rng: np.random.Generator | None = None) -> np.ndarray:
    """Received vector y = H x + z with complex AWGN of per-entry variance ``noise_var``."""
    H = np.asarray(H, dtype=complex)
    x = np.asarray(x, dtype=complex)
    if H.ndim != 2 or x.shape != (H.shape[1],):
        raise ValueError(f"H {H.shape} and x {x.shape} are not conformable")
    if noise_var < 0:
        raise ValueError("noise_var must be non-negative")
    y = H @ x
    if noise_var > 0:
        if rng is None:
            raise ValueError("a random generator is required when noise_var > 0")
        y = y + complex_gaussian(rng, y.shape, noise_var)
    return y
