"""Scalar special functions behind every detection-probability expression.

All probabilities are linear-scale floats. Values below ``PROB_FLOOR`` are not
resolved and may come back as exactly 0.
"""

from __future__ import annotations

import functools
import math

import numpy as np
from scipy import integrate, optimize, special, stats

PROB_FLOOR = 1e-300

# Above this noncentrality the Poisson mixture needs O(sqrt(nc)) central tails per
# evaluation; switch to the one-dimensional conditional integral instead.
SERIES_MAX_NC = 1e5

_SERIES_CHUNK = 256
_SERIES_RTOL = 1e-17
_QUANTILE_MAXITER = 200


def gaussian_q(x: float) -> float:
    """Standard normal right tail P{N(0,1) > x}."""
    x = float(x)
    if math.isnan(x):
        raise ValueError("gaussian_q: x must not be NaN")
    return float(special.ndtr(-x))


def gaussian_q_inv(p: float) -> float:
    """Inverse of :func:`gaussian_q` on the open interval (0, 1)."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"gaussian_q_inv: p must lie in (0, 1), got {p!r}")
    return float(-special.ndtri(p))


def bessel_i(m: int, x: float) -> float:
    """Modified Bessel function of the first kind I_m(x) for integer m >= 0, x >= 0."""
    if int(m) != m or m < 0:
        raise ValueError(f"bessel_i: order must be a nonnegative integer, got {m!r}")
    if not x >= 0.0:
        raise ValueError(f"bessel_i: argument must be nonnegative, got {x!r}")
    return float(special.iv(int(m), float(x)))


def _check_params(dof: int, nc: float) -> None:
    if int(dof) != dof or dof < 2 or int(dof) % 2:
        raise ValueError(f"degrees of freedom must be an even integer >= 2, got {dof!r}")
    if not (nc >= 0.0 and math.isfinite(nc)):
        raise ValueError(f"noncentrality must be finite and >= 0, got {nc!r}")


def central_chi2_tail(x: float, dof: float) -> float:
    """Right tail of the central chi-squared law, Gamma(dof/2, x/2) / Gamma(dof/2)."""
    if x <= 0.0:
        return 1.0
    return float(special.gammaincc(0.5 * dof, 0.5 * x))


def _series_terms(x: float, dof: int, half: float, ks: np.ndarray, upper: bool) -> tuple[np.ndarray, np.ndarray]:
    log_w = -half + ks * math.log(half) - special.gammaln(ks + 1.0)
    w = np.exp(log_w)
    inc = special.gammaincc if upper else special.gammainc
    return w, w * inc(0.5 * dof + ks, 0.5 * x)


def _poisson_series(x: float, dof: int, nc: float, upper: bool) -> float:
    """Poisson mixture of central tails (``upper``) or central CDFs."""
    half = 0.5 * nc
    mode = int(math.floor(half))
    total = 0.0

    # upward from the mode; beyond it the weights decay geometrically and bound the terms
    start = mode
    while True:
        ks = np.arange(start, start + _SERIES_CHUNK, dtype=float)
        w, terms = _series_terms(x, dof, half, ks, upper)
        total += float(terms.sum())
        if w[-1] <= _SERIES_RTOL * max(total, PROB_FLOOR):
            break
        start += _SERIES_CHUNK

    # downward from the mode; the central tail shrinks with k, the central CDF does not
    stop = mode
    while stop > 0:
        lo = max(0, stop - _SERIES_CHUNK)
        ks = np.arange(lo, stop, dtype=float)
        w, terms = _series_terms(x, dof, half, ks, upper)
        total += float(terms.sum())
        bound = terms[0] if upper else w[0]
        if bound <= _SERIES_RTOL * max(total, PROB_FLOOR):
            break
        stop = lo
    return min(total, 1.0)


def _tail_poisson_series(x: float, dof: int, nc: float) -> float:
    tail = _poisson_series(x, dof, nc, upper=True)
    if tail > 0.5:
        # near 1 the complement is resolved to full relative precision
        return 1.0 - _poisson_series(x, dof, nc, upper=False)
    return tail


@functools.lru_cache(maxsize=256)
def _chi_support(k: int) -> tuple[float, float, float, float]:
    chi = stats.chi(k)
    u_lo = float(chi.ppf(1e-22)) if k > 1 else 0.0
    log_norm = -(0.5 * k - 1.0) * math.log(2.0) - math.lgamma(0.5 * k)
    return u_lo, float(chi.isf(1e-22)), float(chi.mean()), log_norm


def _conditional_integral(x: float, dof: int, nc: float, upper: bool) -> float:
    # X = (Z + sqrt(nc))^2 + Y with Y ~ chi2(dof - 1); integrate over U = sqrt(Y) ~ chi(dof - 1).
    k = dof - 1
    root_nc = math.sqrt(nc)
    u_lo, u_hi, mid, log_norm = _chi_support(k)
    upper_u = min(u_hi, math.sqrt(x))
    outside = central_chi2_tail(x, k) if upper else 0.0
    if upper_u <= u_lo:
        return min(outside, 1.0)

    def integrand(u: float) -> float:
        if u <= 0.0:
            dens = math.exp(log_norm) if k == 1 else 0.0
        else:
            dens = math.exp(log_norm + (k - 1) * math.log(u) - 0.5 * u * u)
        r2 = x - u * u
        if r2 <= 0.0:
            return dens if upper else 0.0
        r = math.sqrt(r2)
        # (r - sqrt(nc)) evaluated without cancellation
        shift = (r2 - nc) / (r + root_nc)
        if upper:
            return dens * (special.ndtr(-shift) + special.ndtr(-(r + root_nc)))
        # P{|Z + sqrt(nc)| <= r} = Phi(r - sqrt(nc)) - Phi(-r - sqrt(nc))
        return dens * (special.ndtr(shift) - special.ndtr(-(r + root_nc)))

    pts = [mid] if u_lo < mid < upper_u else None
    # full_output keeps quad quiet when it reports roundoff at the requested precision
    val = integrate.quad(
        integrand, u_lo, upper_u, points=pts, epsabs=1e-300, epsrel=1e-13, limit=400, full_output=1
    )[0]
    return float(min(max(val + outside, 0.0), 1.0))


def _tail_conditional_integral(x: float, dof: int, nc: float) -> float:
    tail = _conditional_integral(x, dof, nc, upper=True)
    if tail > 0.5:
        return 1.0 - _conditional_integral(x, dof, nc, upper=False)
    return tail


def nc_chi2_tail(x: float, dof: int, nc: float) -> float:
    """Right-tail probability of the non-central chi-squared law.

    Parameters
    ----------
    x : float
        Evaluation point; any ``x <= 0`` returns 1.
    dof : int
        Even degrees of freedom (2L in the detector).
    nc : float
        Noncentrality, finite and nonnegative.
    """
    _check_params(dof, nc)
    x = float(x)
    if x <= 0.0:
        return 1.0
    if nc == 0.0:
        return central_chi2_tail(x, dof)
    if nc <= SERIES_MAX_NC:
        return _tail_poisson_series(x, int(dof), float(nc))
    return _tail_conditional_integral(x, int(dof), float(nc))


def _quantile_seed(p: float, dof: int, nc: float) -> float:
    # Patnaik two-moment fit c * chi2_f, inverted with Wilson-Hilferty
    c = (dof + 2.0 * nc) / (dof + nc)
    f = (dof + nc) ** 2 / (dof + 2.0 * nc)
    z = gaussian_q_inv(p)
    h = 2.0 / (9.0 * f)
    return max(c * f * max(1.0 - h + z * math.sqrt(h), 0.0) ** 3, 0.0)


def nc_chi2_tail_inv(p: float, dof: int, nc: float) -> float:
    """Point x with ``nc_chi2_tail(x, dof, nc) == p``, by a bracketed Brent search."""
    _check_params(dof, nc)
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"nc_chi2_tail_inv: p must lie in (0, 1), got {p!r}")
    if nc == 0.0:
        return float(2.0 * special.gammainccinv(0.5 * dof, p))

    def tail(v: float) -> float:
        return nc_chi2_tail(v, dof, nc)

    seed = _quantile_seed(p, dof, nc)
    step = math.sqrt(2.0 * (dof + 2.0 * nc))
    lo = hi = seed
    t_lo = t_hi = tail(seed)
    s = step
    while t_lo < p and lo > 0.0:
        lo = max(lo - s, 0.0)
        t_lo = tail(lo)
        s *= 2.0
    s = step
    while t_hi > p:
        hi = hi + s
        t_hi = tail(hi)
        s *= 2.0

    if t_lo == p:
        return lo
    if t_hi == p:
        return hi
    return float(optimize.brentq(lambda v: tail(v) - p, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                                 maxiter=_QUANTILE_MAXITER))
