"""Monte Carlo trial engine for the detection statistics.

Trials are grouped in fixed blocks of ``BLOCK_SIZE``; block ``j`` draws from a
Philox stream keyed by (seed, stream id, hypothesis, observation mode, j), so
any partition of the trial index range (by ``first_trial`` or across workers)
reproduces exactly the same statistics.

Two observation modes are available. ``full`` draws the whole M_r x L receive
array and applies the detector to it. ``projected`` draws the combined samples
z_l = b^H y_s(l) directly: since b^H n_s(l) ~ CN(0, |b|^2 sigma_s^2) this has
exactly the same law and costs a factor M_r less.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .detector import mf_statistic_projected, np_statistic_projected
from .specfun import gaussian_q_inv
from .model import (
    BeamformerDesign,
    ChannelSet,
    OperatingPoint,
    SystemConfig,
    TransmitFrame,
    cscg,
    rng_stream,
    synthesize_deterministic_frame,
)

STREAM_MONTECARLO = 3
BLOCK_SIZE = 4096

_HYPOTHESES = {"H0": 0, "H1": 1}
_MODES = {"projected": 0, "full": 1}
CSV_FIELDS = ("hypothesis", "detector", "gamma_c", "gamma_s", "L", "threshold", "p_hat", "ci", "n", "seed")


@dataclass
class TrialBatch:
    n_trials: int
    hypothesis: str
    seed: int
    statistics: np.ndarray
    detector: str = "np"
    op: OperatingPoint | None = None

    def __post_init__(self):
        if self.statistics.shape != (self.n_trials,):
            raise ValueError("one statistic per trial is required")


@dataclass(frozen=True)
class RateEstimate:
    p_hat: float
    ci_halfwidth: float
    n_trials: int

    @classmethod
    def from_counts(cls, hits: int, n: int) -> "RateEstimate":
        p = hits / n
        return cls(p, 1.96 * math.sqrt(p * (1.0 - p) / n), n)


def binomial_z(p_hat: float, p_ref: float, n: int) -> float:
    """Standardized gap between an empirical rate and a reference probability."""
    se = math.sqrt(p_ref * (1.0 - p_ref) / n)
    if se == 0.0:
        return 0.0 if p_hat == p_ref else math.inf
    return (p_hat - p_ref) / se


def exact_binomial_z(hits: int, n: int, p_ref: float) -> float:
    """Two-sided exact binomial test of ``hits``/``n`` against ``p_ref``, as a signed normal deviate.

    Agrees with :func:`binomial_z` when n p (1 - p) is large and stays calibrated
    for nearly saturated rates, where a single event moves the normal z by several units.
    """
    pv = float(stats.binomtest(int(hits), int(n), float(p_ref)).pvalue)
    if pv >= 1.0:
        return 0.0
    z = math.inf if pv <= 0.0 else gaussian_q_inv(0.5 * pv)
    return math.copysign(z, hits / n - p_ref)


def design_for_operating_point(
    op: OperatingPoint, channels: ChannelSet, config: SystemConfig
) -> tuple[BeamformerDesign, TransmitFrame]:
    """Beamformer and deterministic frame realizing the SNR pair ``op`` on ``channels``.

    Both components are steered to a*, with powers chosen so that the received
    ratios equal ``op.gamma_c`` and ``op.gamma_s`` exactly; the transmit power
    budget is not enforced here.
    """
    a = channels.a
    k = abs(channels.alpha) ** 2 * config.M_r / config.sigma_s2
    if k == 0.0:
        raise ValueError("target path gain is zero")
    aa = float(np.vdot(a, a).real)
    u = a.conj() / math.sqrt(aa)
    w = math.sqrt(op.gamma_c / (k * aa)) * u
    R0 = op.gamma_s / (k * aa) * np.outer(u, u.conj())
    design = BeamformerDesign(w, R0)
    return design, TransmitFrame(synthesize_deterministic_frame(design.R0, op.L))


def _block(
    j: int,
    design: BeamformerDesign,
    frame: TransmitFrame,
    channels: ChannelSet,
    config: SystemConfig,
    hypothesis: str,
    detector_kind: str,
    seed: int,
    observation: str,
    true_alpha: complex,
) -> np.ndarray:
    rng = rng_stream(seed, STREAM_MONTECARLO, _HYPOTHESES[hypothesis], _MODES[observation], j)
    L, M_r, sigma2 = frame.L, channels.M_r, config.sigma_s2
    a, b = channels.a, channels.b
    s = cscg(rng, (BLOCK_SIZE, L))
    clean = a @ design.w * s + (a @ frame.X0)[None, :]  # a^T x(l) per trial and slot
    if observation == "full":
        noise = cscg(rng, (BLOCK_SIZE, L, M_r), sigma2)
        y = noise
        if hypothesis == "H1":
            y = y + true_alpha * clean[..., None] * b[None, None, :]
        z = y @ b.conj()
    else:
        bb = float(np.vdot(b, b).real)
        z = cscg(rng, (BLOCK_SIZE, L), sigma2 * bb)
        if hypothesis == "H1":
            z = z + true_alpha * bb * clean

    g = channels.alpha * (a @ frame.X0)
    gamma_c = abs(channels.alpha) ** 2 * abs(a @ design.w) ** 2 * M_r / sigma2
    if detector_kind == "np":
        return np_statistic_projected(z, g, gamma_c, M_r, sigma2)
    return mf_statistic_projected(z, g, gamma_c, sigma2)


def simulate_batch(
    design: BeamformerDesign,
    frame: TransmitFrame,
    channels: ChannelSet,
    config: SystemConfig,
    hypothesis: str,
    detector_kind: str,
    n_trials: int,
    seed: int,
    *,
    first_trial: int = 0,
    observation: str = "projected",
    true_alpha: complex | None = None,
    workers: int = 1,
) -> TrialBatch:
    """Draw ``n_trials`` test statistics under ``hypothesis``.

    Parameters
    ----------
    detector_kind : {"np", "mf"}
        Neyman-Pearson statistic or matched filter.
    first_trial : int
        Global index of the first trial; splitting a range by this offset
        yields the same statistics as drawing it at once.
    observation : {"projected", "full"}
        Whether to draw the combined samples or the whole receive array.
    true_alpha : complex, optional
        Path gain used to generate echoes; the detector always assumes
        ``channels.alpha``.
    workers : int
        Threads drawing disjoint blocks.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    if hypothesis not in _HYPOTHESES:
        raise ValueError(f"hypothesis must be 'H0' or 'H1', got {hypothesis!r}")
    if detector_kind not in ("np", "mf"):
        raise ValueError(f"detector_kind must be 'np' or 'mf', got {detector_kind!r}")
    if observation not in _MODES:
        raise ValueError(f"observation must be one of {tuple(_MODES)}, got {observation!r}")
    alpha = channels.alpha if true_alpha is None else true_alpha
    stop = first_trial + n_trials
    blocks = range(first_trial // BLOCK_SIZE, (stop - 1) // BLOCK_SIZE + 1)

    def run(j):
        return _block(j, design, frame, channels, config, hypothesis, detector_kind, seed, observation, alpha)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(j) for j in blocks]
    stats = np.concatenate(parts)
    offset = first_trial - blocks[0] * BLOCK_SIZE
    stats = stats[offset : offset + n_trials]
    op = OperatingPoint(
        abs(channels.alpha) ** 2 * abs(channels.a @ design.w) ** 2 * config.M_r / config.sigma_s2,
        abs(channels.alpha) ** 2 * float((channels.a @ frame.sample_covariance() @ channels.a.conj()).real)
        * config.M_r / config.sigma_s2,
        frame.L,
    )
    return TrialBatch(n_trials, hypothesis, seed, stats, detector_kind, op)


def estimate_rate(batch: TrialBatch, threshold: float) -> RateEstimate:
    """Fraction of statistics at or above ``threshold`` with a 95% normal interval."""
    hits = int(np.count_nonzero(batch.statistics >= threshold))
    return RateEstimate.from_counts(hits, batch.n_trials)


def csv_row(batch: TrialBatch, threshold: float, estimate: RateEstimate | None = None) -> dict:
    est = estimate if estimate is not None else estimate_rate(batch, threshold)
    op = batch.op
    return {
        "hypothesis": batch.hypothesis,
        "detector": batch.detector,
        "gamma_c": op.gamma_c if op else math.nan,
        "gamma_s": op.gamma_s if op else math.nan,
        "L": op.L if op else 0,
        "threshold": threshold,
        "p_hat": est.p_hat,
        "ci": est.ci_halfwidth,
        "n": est.n_trials,
        "seed": batch.seed,
    }
