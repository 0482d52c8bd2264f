"""Scenario construction: configuration, channel draws, transmit frames and SNR metrics.

Everything here works in linear SI units (watts, meters, radians). Decibel
quantities only appear in scenario files and are converted by :func:`load_scenario`.

Complex Gaussian samples follow the CSCG convention: real and imaginary parts are
independent N(0, var/2).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

SPEED_OF_LIGHT = 299792458.0  # m/s

# stream ids for the counter-based generator
STREAM_CHANNEL = 1
STREAM_TARGET_PHASE = 2


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Philox generator addressed by ``(seed, *key)``.

    Streams with different keys are statistically independent and each one is
    reproducible on its own, so realization ``i`` never depends on whether
    realizations ``0..i-1`` were drawn first.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def cscg(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """Circularly symmetric complex Gaussian samples with variance ``var``."""
    scale = math.sqrt(0.5 * var)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return scale * (re + 1j * im)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class SystemConfig:
    """Array sizes, frame length, power budget, noise powers and SINR target (linear units)."""

    M_t: int = 16
    M_r: int = 16
    L: int = 1024
    P: float = 1.0
    sigma_c2: float = 1e-11
    sigma_s2: float = 1e-11
    gamma_0: float = 1.0

    def __post_init__(self):
        for name in ("M_t", "M_r", "L"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        for name in ("P", "sigma_c2", "sigma_s2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not self.gamma_0 >= 0:
            raise ValueError("gamma_0 must be nonnegative")

    def with_rate_threshold(self, rate: float) -> "SystemConfig":
        """Copy with the SINR target set from a rate threshold, gamma_0 = 2**rate - 1."""
        return dataclasses.replace(self, gamma_0=2.0 ** rate - 1.0)


@dataclass(frozen=True)
class ChannelModelParams:
    """Large-scale propagation parameters and the (unstated in the source) array angles.

    Angles are in radians; ``theta_cu`` points the CU line-of-sight component,
    ``theta_t``/``theta_r`` point the target as seen from the BS and sensing receiver.
    """

    K: float = 1.0
    L0_db: float = -30.0
    d0: float = 1.0
    beta0: float = 2.5
    d_bc: float = 1000.0
    d1: float = 260.0
    d2: float = 260.0
    sigma_t: float = 0.5
    f: float = 8e8
    c: float = SPEED_OF_LIGHT
    theta_cu: float = 0.0
    theta_t: float = math.radians(20.0)
    theta_r: float = math.radians(20.0)

    def __post_init__(self):
        for name in ("d0", "d_bc", "d1", "d2", "f", "c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not self.K >= 0:
            raise ValueError("K must be nonnegative")
        if not self.sigma_t >= 0:
            raise ValueError("sigma_t must be nonnegative")


@dataclass
class ChannelSet:
    h: np.ndarray
    a: np.ndarray
    b: np.ndarray
    alpha: complex

    @property
    def M_t(self) -> int:
        return self.a.shape[0]

    @property
    def M_r(self) -> int:
        return self.b.shape[0]


@dataclass
class BeamformerDesign:
    """Information beamformer ``w`` and deterministic-signal covariance ``R0``."""

    w: np.ndarray
    R0: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=complex).reshape(-1)
        self.R0 = np.asarray(self.R0, dtype=complex)
        n = self.w.shape[0]
        if self.R0.shape != (n, n):
            raise ValueError(f"R0 must be {n}x{n}, got {self.R0.shape}")
        # drop the anti-Hermitian roundoff that solvers leave behind
        self.R0 = 0.5 * (self.R0 + self.R0.conj().T)

    @property
    def comm_power(self) -> float:
        return float(np.vdot(self.w, self.w).real)

    @property
    def sensing_power(self) -> float:
        return float(np.trace(self.R0).real)

    @property
    def total_power(self) -> float:
        return self.comm_power + self.sensing_power

    def validate(self, P: float, tol: float = 1e-9) -> None:
        tr = max(self.sensing_power, 0.0)
        lam_min = float(np.linalg.eigvalsh(self.R0)[0]) if self.R0.size else 0.0
        if lam_min < -tol * max(tr, 1.0):
            raise ValueError(f"R0 is not PSD (min eigenvalue {lam_min:.3e})")
        if self.total_power > P + tol * max(P, 1.0):
            raise ValueError(f"power {self.total_power:.6e} exceeds budget {P:.6e}")

    @classmethod
    def zeros(cls, M_t: int) -> "BeamformerDesign":
        return cls(np.zeros(M_t, complex), np.zeros((M_t, M_t), complex))


@dataclass
class TransmitFrame:
    """Deterministic slots ``X0`` (M_t x L) and, when sampled, the symbols ``s`` (length L)."""

    X0: np.ndarray
    s: np.ndarray | None = None

    @property
    def L(self) -> int:
        return self.X0.shape[1]

    def sample_covariance(self) -> np.ndarray:
        return self.X0 @ self.X0.conj().T / self.L


@dataclass(frozen=True)
class OperatingPoint:
    """Sufficient statistics of the closed-form detection expressions.

    ``gamma_c`` is the received Gaussian-signal-to-noise ratio, ``gamma_s`` the
    received deterministic-signal-to-noise ratio, ``L`` the number of slots.
    """

    gamma_c: float
    gamma_s: float
    L: int

    def __post_init__(self):
        if not (self.gamma_c >= 0 and self.gamma_s >= 0):
            raise ValueError(f"SNR ratios must be nonnegative, got {self.gamma_c!r}, {self.gamma_s!r}")
        if int(self.L) != self.L or self.L < 1:
            raise ValueError(f"L must be a positive integer, got {self.L!r}")

    @property
    def lambda_h0(self) -> float:
        return 2.0 * self.L * self.gamma_s / self.gamma_c ** 2

    @property
    def lambda_h1(self) -> float:
        return self.lambda_h0 * (1.0 + self.gamma_c)

    @classmethod
    def from_db(cls, gamma_c_db: float, gamma_s_db: float, L: int) -> "OperatingPoint":
        return cls(db_to_linear(gamma_c_db), db_to_linear(gamma_s_db), L)


def path_loss(d: float, params: ChannelModelParams) -> float:
    """Linear power gain L0 * (d / d0) ** (-beta0)."""
    if not d > 0:
        raise ValueError(f"distance must be positive, got {d!r}")
    return db_to_linear(params.L0_db) * (d / params.d0) ** (-params.beta0)


def target_channel_gain(params: ChannelModelParams) -> float:
    """|alpha|^2 = eta * sigma_t / (d1^2 d2^2) with eta = c^2 / (64 pi^3 f^2)."""
    eta = params.c ** 2 / (64.0 * math.pi ** 3 * params.f ** 2)
    return eta * params.sigma_t / (params.d1 ** 2 * params.d2 ** 2)


def ula_steering(angle: float, n: int) -> np.ndarray:
    """Half-wavelength ULA phase ramp exp(j pi k sin(angle)), k = 0..n-1."""
    return np.exp(1j * math.pi * math.sin(angle) * np.arange(n))


def steering_vectors(angle_t: float, angle_r: float, config: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    return ula_steering(angle_t, config.M_t), ula_steering(angle_r, config.M_r)


def sample_rician_channel(
    params: ChannelModelParams, config: SystemConfig, seed: int, realization: int = 0
) -> np.ndarray:
    """BS-to-CU channel h = sqrt(PL) * (sqrt(K/(K+1)) h_los + sqrt(1/(K+1)) h_nlos).

    The LoS part is the conjugate ULA steering vector toward ``theta_cu``, so that
    ``h^H x`` and the target's ``a^T x`` use the same array convention.
    """
    rng = rng_stream(seed, STREAM_CHANNEL, realization)
    h_los = np.conj(ula_steering(params.theta_cu, config.M_t))
    h_nlos = cscg(rng, config.M_t)
    K = params.K
    h = math.sqrt(K / (K + 1.0)) * h_los + math.sqrt(1.0 / (K + 1.0)) * h_nlos
    return math.sqrt(path_loss(params.d_bc, params)) * h


def make_channels(
    params: ChannelModelParams, config: SystemConfig, seed: int, realization: int = 0
) -> ChannelSet:
    """Draw one scenario: Rician h, steering vectors, and alpha with a uniform random phase."""
    h = sample_rician_channel(params, config, seed, realization)
    a, b = steering_vectors(params.theta_t, params.theta_r, config)
    phase = rng_stream(seed, STREAM_TARGET_PHASE, realization).uniform(0.0, 2.0 * math.pi)
    alpha = math.sqrt(target_channel_gain(params)) * complex(math.cos(phase), math.sin(phase))
    return ChannelSet(h=h, a=a, b=b, alpha=alpha)


def psd_factor(R: np.ndarray) -> np.ndarray:
    """F with F F^H = R (negative roundoff eigenvalues clipped)."""
    R = 0.5 * (R + R.conj().T)
    lam, V = np.linalg.eigh(R)
    return V * np.sqrt(np.clip(lam, 0.0, None))


def synthesize_deterministic_frame(R0: np.ndarray, L: int) -> np.ndarray:
    """Deterministic slots X0 whose sample covariance (1/L) X0 X0^H equals R0.

    Built as sqrt(L) * F * U where F F^H = R0 and U holds the first M_t rows of the
    unitary L-point DFT, so the covariance is exact instead of approximate.
    """
    R0 = np.asarray(R0, dtype=complex)
    M_t = R0.shape[0]
    if L < M_t:
        raise ValueError(f"exact covariance synthesis needs L >= M_t ({L} < {M_t})")
    k = np.arange(M_t)[:, None]
    l = np.arange(L)[None, :]
    U = np.exp(-2j * math.pi * k * l / L) / math.sqrt(L)
    return math.sqrt(L) * psd_factor(R0) @ U


def comm_metrics(design: BeamformerDesign, h: np.ndarray, sigma_c2: float) -> tuple[float, float]:
    """CU SINR |h^H w|^2 / (h^H R0 h + sigma_c2) and rate log2(1 + SINR)."""
    signal = abs(np.vdot(h, design.w)) ** 2
    interference = float(np.vdot(h, design.R0 @ h).real)
    gamma = signal / (interference + sigma_c2)
    return float(gamma), float(math.log2(1.0 + gamma))


def sensing_snrs(design: BeamformerDesign, alpha: complex, a: np.ndarray, config: SystemConfig) -> OperatingPoint:
    """Received Gaussian and deterministic SNRs (gamma_c, gamma_s) at the sensing receiver."""
    k = abs(alpha) ** 2 * config.M_r / config.sigma_s2
    gamma_c = k * abs(a @ design.w) ** 2
    gamma_s = k * max(float((a @ design.R0 @ a.conj()).real), 0.0)
    return OperatingPoint(float(gamma_c), float(gamma_s), config.L)


# ---- scenario files -------------------------------------------------------------

_SYSTEM_KEYS = {
    "M_t": ("M_t", int),
    "M_r": ("M_r", int),
    "L": ("L", int),
    "P_dbm": ("P", dbm_to_watt),
    "sigma_c2_dbm": ("sigma_c2", dbm_to_watt),
    "sigma_s2_dbm": ("sigma_s2", dbm_to_watt),
    "gamma_0_db": ("gamma_0", db_to_linear),
    "gamma_0": ("gamma_0", float),
    "rate_threshold": ("gamma_0", lambda r: 2.0 ** float(r) - 1.0),
}
_CHANNEL_KEYS = {
    "K": ("K", float),
    "L0_db": ("L0_db", float),
    "d0": ("d0", float),
    "beta0": ("beta0", float),
    "d_bc": ("d_bc", float),
    "d1": ("d1", float),
    "d2": ("d2", float),
    "sigma_t": ("sigma_t", float),
    "f": ("f", float),
    "c": ("c", float),
    "theta_cu_deg": ("theta_cu", math.radians),
    "theta_t_deg": ("theta_t", math.radians),
    "theta_r_deg": ("theta_r", math.radians),
}


def _convert(section: dict[str, Any], table: dict, where: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in section.items():
        if key not in table:
            raise ValueError(f"unknown key {key!r} in scenario section {where!r}")
        name, conv = table[key]
        if name in out:
            raise ValueError(f"{where}: {name} given more than once")
        out[name] = conv(value)
    return out


def scenario_from_dict(data: dict[str, Any]) -> tuple[SystemConfig, ChannelModelParams]:
    """Validate a scenario mapping with ``system`` and ``channel`` sections (dBm / dB / degrees)."""
    extra = set(data) - {"system", "channel", "name", "description"}
    if extra:
        raise ValueError(f"unknown top-level scenario keys: {sorted(extra)}")
    config = SystemConfig(**_convert(data.get("system", {}), _SYSTEM_KEYS, "system"))
    params = ChannelModelParams(**_convert(data.get("channel", {}), _CHANNEL_KEYS, "channel"))
    return config, params


def load_scenario(path: str | Path) -> tuple[SystemConfig, ChannelModelParams]:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


def scenario_to_dict(config: SystemConfig, params: ChannelModelParams) -> dict[str, Any]:
    """Inverse of :func:`scenario_from_dict`, used for provenance hashing."""
    return {
        "system": {
            "M_t": config.M_t,
            "M_r": config.M_r,
            "L": config.L,
            "P_dbm": 30.0 + linear_to_db(config.P),
            "sigma_c2_dbm": 30.0 + linear_to_db(config.sigma_c2),
            "sigma_s2_dbm": 30.0 + linear_to_db(config.sigma_s2),
            "gamma_0": config.gamma_0,
        },
        "channel": {
            "K": params.K,
            "L0_db": params.L0_db,
            "d0": params.d0,
            "beta0": params.beta0,
            "d_bc": params.d_bc,
            "d1": params.d1,
            "d2": params.d2,
            "sigma_t": params.sigma_t,
            "f": params.f,
            "c": params.c,
            "theta_cu_deg": math.degrees(params.theta_cu),
            "theta_t_deg": math.degrees(params.theta_t),
            "theta_r_deg": math.degrees(params.theta_r),
        },
    }
