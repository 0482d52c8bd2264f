"""Neyman-Pearson detection with superimposed deterministic and Gaussian signals.

Observations are arrays of shape ``(..., L, M_r)``: slot ``l`` of the last two
axes is the receive vector y_s(l). Leading axes batch independent trials. All
statistics are evaluated slot-wise through the Woodbury form of the stacked
inverse, so the M_r L x M_r L covariance is never built.
"""

from __future__ import annotations

import math

import numpy as np

from .model import BeamformerDesign, ChannelSet, OperatingPoint, TransmitFrame
from .specfun import gaussian_q, gaussian_q_inv, nc_chi2_tail, nc_chi2_tail_inv

__all__ = [
    "OperatingPoint",
    "UnsupportedOperatingPoint",
    "DegenerateDetector",
    "np_statistic",
    "np_statistic_projected",
    "mf_statistic_projected",
    "np_statistic_square_form",
    "normalized_statistic",
    "mf_statistic",
    "calibrate_threshold",
    "pfa_closed_form",
    "pd_closed_form",
    "pd_given_pfa",
    "pd_approx",
    "mf_pd_given_pfa",
    "ts_pd_given_pfa",
    "detection_probability",
    "roc_curve",
]

# Past this noncentrality the H0 law is Gaussian to ~1e-10 and 1 + gamma_c stops
# being resolvable next to lambda, so the large-lambda limit is used instead.
_HUGE_NC = 1e20


class UnsupportedOperatingPoint(ValueError):
    """The NP closed forms need gamma_c > 0."""


class DegenerateDetector(ValueError):
    """The requested detector has no deterministic energy to work with."""


def _check_pfa(p_fa: float) -> float:
    p_fa = float(p_fa)
    if not 0.0 < p_fa < 1.0:
        raise ValueError(f"false-alarm probability must lie in (0, 1), got {p_fa!r}")
    return p_fa


def _require_gaussian_part(op: OperatingPoint) -> None:
    if not op.gamma_c > 0:
        raise UnsupportedOperatingPoint("NP closed forms require gamma_c > 0; use the matched-filter path")


def _received_terms(y, frame: TransmitFrame, channels: ChannelSet):
    y = np.asarray(y)
    L = frame.X0.shape[1]
    if y.shape[-2:] != (L, channels.M_r):
        raise ValueError(f"observation must end in shape ({L}, {channels.M_r}), got {y.shape}")
    z = y @ channels.b.conj()  # b^H y_s(l), shape (..., L)
    g = channels.alpha * (channels.a @ frame.X0)  # alpha a^T x0(l), shape (L,)
    return z, g


def _gamma_c(design: BeamformerDesign, channels: ChannelSet, sigma_s2: float) -> float:
    return abs(channels.alpha) ** 2 * abs(channels.a @ design.w) ** 2 * channels.M_r / sigma_s2


def np_statistic_projected(z, g, gamma_c: float, M_r: int, sigma_s2: float):
    """NP statistic from the receive-combined samples z_l = b^H y_s(l) and echoes g_l = alpha a^T x0(l)."""
    if not gamma_c > 0:
        raise UnsupportedOperatingPoint("w has no component toward the target; use the matched filter")
    z = np.asarray(z)
    energy = np.sum(z.real ** 2 + z.imag ** 2, axis=-1)
    corr = np.real(z @ np.conj(g))
    return gamma_c / (M_r * sigma_s2 * (1.0 + gamma_c)) * energy + 2.0 / (sigma_s2 * (1.0 + gamma_c)) * corr


def mf_statistic_projected(z, g, gamma_c: float, sigma_s2: float):
    return 2.0 / (sigma_s2 * (1.0 + gamma_c)) * np.real(np.asarray(z) @ np.conj(g))


def np_statistic(y, frame: TransmitFrame, design: BeamformerDesign, channels: ChannelSet, sigma_s2: float):
    """NP test statistic T: weighted energy of b^H y plus the correlation with the known echo."""
    gc = _gamma_c(design, channels, sigma_s2)
    if not gc > 0:
        raise UnsupportedOperatingPoint("w has no component toward the target; use mf_statistic")
    z, g = _received_terms(y, frame, channels)
    return np_statistic_projected(z, g, gc, channels.M_r, sigma_s2)


def np_statistic_square_form(
    y, frame: TransmitFrame, design: BeamformerDesign, channels: ChannelSet, sigma_s2: float
):
    """Same statistic written as a completed square minus L gamma_s / ((1 + gamma_c) gamma_c)."""
    gc = _gamma_c(design, channels, sigma_s2)
    if not gc > 0:
        raise UnsupportedOperatingPoint("w has no component toward the target")
    z, g = _received_terms(y, frame, channels)
    M_r = channels.M_r
    L = frame.X0.shape[1]
    R0 = frame.sample_covariance()
    gs = abs(channels.alpha) ** 2 * float((channels.a @ R0 @ channels.a.conj()).real) * M_r / sigma_s2
    square = np.sum(np.abs(z + (M_r / gc) * g) ** 2, axis=-1)
    return gc / (M_r * sigma_s2 * (1.0 + gc)) * square - L * gs / ((1.0 + gc) * gc)


def normalized_statistic(T, op: OperatingPoint, hypothesis: str):
    """Map T to the variable that is chi2_{2L}(lambda_1) under H0 or chi2_{2L}(lambda_2) under H1."""
    _require_gaussian_part(op)
    gc, gs, L = op.gamma_c, op.gamma_s, op.L
    T = np.asarray(T, dtype=float)
    if hypothesis == "H0":
        return 2.0 * (1.0 + gc) / gc * T + 2.0 * L * gs / gc ** 2
    if hypothesis == "H1":
        return 2.0 / gc * T + 2.0 * L * gs / ((1.0 + gc) * gc ** 2)
    raise ValueError(f"hypothesis must be 'H0' or 'H1', got {hypothesis!r}")


def mf_statistic(y, frame: TransmitFrame, design: BeamformerDesign, channels: ChannelSet, sigma_s2: float):
    """Matched filter 2 Re{u2^H (C + sigma^2 I)^{-1} y}; valid for gamma_c = 0 as well."""
    gc = _gamma_c(design, channels, sigma_s2)
    z, g = _received_terms(y, frame, channels)
    return mf_statistic_projected(z, g, gc, sigma_s2)


def calibrate_threshold(p_fa: float, op: OperatingPoint) -> float:
    """Threshold on T giving false-alarm probability ``p_fa``."""
    p_fa = _check_pfa(p_fa)
    _require_gaussian_part(op)
    gc, gs, L = op.gamma_c, op.gamma_s, op.L
    q = nc_chi2_tail_inv(p_fa, 2 * L, op.lambda_h0)
    return gc / (2.0 * (1.0 + gc)) * (q - 2.0 * L * gs / gc ** 2)


def pfa_closed_form(threshold: float, op: OperatingPoint) -> float:
    _require_gaussian_part(op)
    gc, gs, L = op.gamma_c, op.gamma_s, op.L
    x = 2.0 * (1.0 + gc) * threshold / gc + 2.0 * L * gs / gc ** 2
    return nc_chi2_tail(x, 2 * L, op.lambda_h0)


def pd_closed_form(threshold: float, op: OperatingPoint) -> float:
    _require_gaussian_part(op)
    gc, gs, L = op.gamma_c, op.gamma_s, op.L
    x = 2.0 * threshold / gc + 2.0 * L * gs / ((1.0 + gc) * gc ** 2)
    return nc_chi2_tail(x, 2 * L, op.lambda_h1)


def pd_given_pfa(p_fa: float, op: OperatingPoint) -> float:
    """Exact NP detection probability at a fixed false-alarm probability.

    P_D = Qchi2_{2L}(lambda_1 (1 + gamma_c)) evaluated at Qchi2^{-1}_{2L}(lambda_1)(P_FA) / (1 + gamma_c).
    """
    p_fa = _check_pfa(p_fa)
    _require_gaussian_part(op)
    q = nc_chi2_tail_inv(p_fa, 2 * op.L, op.lambda_h0)
    return nc_chi2_tail(q / (1.0 + op.gamma_c), 2 * op.L, op.lambda_h1)


def pd_approx(p_fa: float, op: OperatingPoint, variant: str = "a2") -> float:
    """Large-L Gaussian approximations of :func:`pd_given_pfa`.

    ``a1`` matches the first two moments of both normalized statistics; ``a2``
    further drops the 1 + gamma_c factors and reads Q(Q^{-1}(P_FA) - sqrt(L (gamma_c^2 + 2 gamma_s))).
    """
    p_fa = _check_pfa(p_fa)
    gc, gs, L = op.gamma_c, op.gamma_s, op.L
    z = gaussian_q_inv(p_fa)
    s0 = gc * gc + 2.0 * gs
    if variant == "a2":
        return gaussian_q(z - math.sqrt(L * s0))
    if variant == "a1":
        s1 = gc * gc + 2.0 * gs * (1.0 + gc)
        if s1 == 0.0:
            return p_fa
        num = z * math.sqrt(s0) - math.sqrt(L) * (gc * gc + gs * (2.0 + gc))
        return gaussian_q(num / ((1.0 + gc) * math.sqrt(s1)))
    raise ValueError(f"variant must be 'a1' or 'a2', got {variant!r}")


def mf_pd_given_pfa(p_fa: float, op: OperatingPoint) -> float:
    """Matched-filter detection probability, Gaussian under both hypotheses.

    H0: N(0, 2 L gamma_s / (1 + gamma_c)^2); H1: N(2 L gamma_s / (1 + gamma_c), 2 L gamma_s / (1 + gamma_c)).
    """
    p_fa = _check_pfa(p_fa)
    if not op.gamma_s > 0:
        raise DegenerateDetector("matched filter is identically zero when gamma_s = 0")
    gc, gs, L = op.gamma_c, op.gamma_s, op.L
    z = gaussian_q_inv(p_fa)
    return gaussian_q(z / math.sqrt(1.0 + gc) - math.sqrt(2.0 * L * gs / (1.0 + gc)))


def ts_pd_given_pfa(p_fa: float, L_s: int, gamma_s: float) -> float:
    """Coherent detection over ``L_s`` deterministic-only sensing slots."""
    p_fa = _check_pfa(p_fa)
    if L_s < 0:
        raise ValueError("L_s must be nonnegative")
    return gaussian_q(gaussian_q_inv(p_fa) - math.sqrt(2.0 * L_s * max(gamma_s, 0.0)))


def detection_probability(p_fa: float, op: OperatingPoint) -> float:
    """NP detection probability at any operating point, including gamma_c = 0.

    With no Gaussian component the NP test is the coherent matched filter; for
    noncentralities beyond double-precision reach the moment-matched form is exact
    to within the Gaussian limit of the chi-squared law.
    """
    p_fa = _check_pfa(p_fa)
    if op.gamma_c == 0.0:
        if op.gamma_s == 0.0:
            return p_fa
        return ts_pd_given_pfa(p_fa, op.L, op.gamma_s)
    if op.lambda_h0 > _HUGE_NC:
        return pd_approx(p_fa, op, "a1")
    return pd_given_pfa(p_fa, op)


def roc_curve(op: OperatingPoint, p_fa_grid, detector: str = "np") -> np.ndarray:
    """Rows of (P_FA, P_D) for the NP detector or the matched filter."""
    rows = []
    for p in p_fa_grid:
        pd = detection_probability(p, op) if detector == "np" else mf_pd_given_pfa(p, op)
        rows.append((float(p), pd))
    return np.array(rows)
