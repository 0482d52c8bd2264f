import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from isacdet.detector import (
    DegenerateDetector,
    UnsupportedOperatingPoint,
    calibrate_threshold,
    detection_probability,
    mf_pd_given_pfa,
    mf_statistic,
    normalized_statistic,
    np_statistic,
    np_statistic_square_form,
    pd_approx,
    pd_closed_form,
    pd_given_pfa,
    pfa_closed_form,
    roc_curve,
    ts_pd_given_pfa,
)
from isacdet.model import BeamformerDesign, ChannelSet, OperatingPoint, TransmitFrame, cscg, ula_steering


def _setup(M_t, M_r, L, gamma_c, gamma_s, sigma2=1.0, seed=0, alpha=0.8 * np.exp(0.7j)):
    """Channels, design and frame hitting (gamma_c, gamma_s) with a random (non-steered) X0."""
    rng = np.random.default_rng(seed)
    a = ula_steering(0.3, M_t)
    b = ula_steering(-0.2, M_r)
    k = abs(alpha) ** 2 * M_r / sigma2
    w = cscg(rng, M_t)
    w *= math.sqrt(gamma_c / k) / abs(a @ w)
    X0 = cscg(rng, (M_t, L))
    R = X0 @ X0.conj().T / L
    X0 *= math.sqrt(gamma_s / (k * float((a @ R @ a.conj()).real)))
    frame = TransmitFrame(X0)
    design = BeamformerDesign(w, frame.sample_covariance())
    return ChannelSet(h=np.zeros(M_t, complex), a=a, b=b, alpha=alpha), design, frame


def _dense(y, ch, design, frame, sigma2):
    """Stacked-vector evaluation with an explicit M_r L x M_r L inverse."""
    L = frame.L
    M_r = ch.M_r
    col = ch.alpha * np.outer(ch.b, ch.a) @ design.w  # received direction of s(l)
    C = np.kron(np.eye(L), np.outer(col, col.conj()))
    u2 = np.concatenate([ch.alpha * ch.b * (ch.a @ frame.X0[:, l]) for l in range(L)])
    Kinv = np.linalg.inv(C + sigma2 * np.eye(M_r * L))
    yv = y.reshape(-1)
    quad = float(np.real(yv.conj() @ (np.eye(M_r * L) / sigma2 - Kinv) @ yv))
    lin = float(2 * np.real(u2.conj() @ Kinv @ yv))
    return quad + lin, lin


# ---- statistics ---------------------------------------------------------------


def test_np_statistic_against_dense_inverse():
    sigma2 = 0.7
    ch, design, frame = _setup(3, 2, 3, 0.9, 1.4, sigma2, seed=1)
    rng = np.random.default_rng(2)
    for _ in range(5):
        y = cscg(rng, (3, 2), 2.0)
        full, lin = _dense(y, ch, design, frame, sigma2)
        assert np_statistic(y, frame, design, ch, sigma2) == pytest.approx(full, rel=1e-10)
        assert mf_statistic(y, frame, design, ch, sigma2) == pytest.approx(lin, rel=1e-10, abs=1e-12)


def test_zero_observation():
    ch, design, frame = _setup(3, 2, 4, 0.5, 2.0)
    y = np.zeros((4, 2), complex)
    assert np_statistic(y, frame, design, ch, 1.0) == 0.0
    assert mf_statistic(y, frame, design, ch, 1.0) == 0.0
    op = OperatingPoint(0.5, 2.0, 4)
    # completed square minus its offset, so it vanishes at y = 0 as well
    assert np_statistic_square_form(y, frame, design, ch, 1.0) == pytest.approx(0.0, abs=1e-12)
    assert normalized_statistic(0.0, op, "H0") == pytest.approx(op.lambda_h0)


def test_absent_deterministic_part_is_energy_detector():
    ch, design, frame = _setup(3, 2, 4, 0.5, 1.0)
    frame = TransmitFrame(np.zeros_like(frame.X0))
    y = cscg(np.random.default_rng(3), (4, 2))
    z = y @ ch.b.conj()
    energy = 0.5 / (2 * 1.5) * np.sum(np.abs(z) ** 2)
    assert np_statistic(y, frame, design, ch, 1.0) == pytest.approx(energy, rel=1e-12)


def test_mf_without_gaussian_part():
    ch, design, frame = _setup(3, 2, 4, 0.5, 1.0)
    design = BeamformerDesign(np.zeros(3, complex), design.R0)
    y = cscg(np.random.default_rng(4), (4, 2))
    ref = 2 * np.real(np.sum(np.conj(ch.alpha * (ch.a @ frame.X0)) * (y @ ch.b.conj())))
    assert mf_statistic(y, frame, design, ch, 1.0) == pytest.approx(ref, rel=1e-12)
    with pytest.raises(UnsupportedOperatingPoint):
        np_statistic(y, frame, design, ch, 1.0)


@pytest.mark.parametrize("M_r", [2, 4, 16])
@pytest.mark.parametrize("L", [4, 64])
def test_square_form_equivalence(M_r, L):
    ch, design, frame = _setup(4, M_r, L, 0.3, 0.8, seed=M_r + L)
    y = cscg(np.random.default_rng(L), (7, L, M_r), 3.0)
    t12 = np_statistic(y, frame, design, ch, 1.0)
    t13 = np_statistic_square_form(y, frame, design, ch, 1.0)
    np.testing.assert_allclose(t12, t13, rtol=1e-9, atol=1e-9 * np.max(np.abs(t12)))


def test_statistic_shape_mismatch():
    ch, design, frame = _setup(3, 2, 4, 0.5, 1.0)
    with pytest.raises(ValueError):
        np_statistic(np.zeros((5, 2), complex), frame, design, ch, 1.0)
    with pytest.raises(ValueError):
        mf_statistic(np.zeros((4, 3), complex), frame, design, ch, 1.0)


def test_normalized_statistic_mean_matches_chi2():
    # E[chi2_{2L}(lam)] = 2L + lam under each hypothesis
    L, gc, gs, sigma2 = 6, 0.8, 0.5, 1.0
    ch, design, frame = _setup(3, 2, L, gc, gs, seed=9)
    op = OperatingPoint(gc, gs, L)
    rng = np.random.default_rng(10)
    n = 200_000
    s = cscg(rng, (n, L))
    noise = cscg(rng, (n, L, 2), sigma2)
    clean = (ch.a @ design.w) * s + (ch.a @ frame.X0)[None, :]
    y1 = noise + ch.alpha * clean[..., None] * ch.b[None, None, :]
    t0 = normalized_statistic(np_statistic(noise, frame, design, ch, sigma2), op, "H0")
    t1 = normalized_statistic(np_statistic(y1, frame, design, ch, sigma2), op, "H1")
    for t, lam in ((t0, op.lambda_h0), (t1, op.lambda_h1)):
        sd = math.sqrt(2 * (2 * L + 2 * lam) / n)
        assert abs(t.mean() - (2 * L + lam)) < 5 * sd
        assert stats.kstest(t, stats.ncx2(2 * L, lam).cdf).pvalue > 1e-3
    with pytest.raises(ValueError):
        normalized_statistic(0.0, op, "H2")


# ---- thresholds and closed forms --------------------------------------------------


def test_calibrate_central_two_dof():
    delta = calibrate_threshold(0.1, OperatingPoint(1.0, 0.0, 1))
    assert delta == pytest.approx(0.25 * (-2 * math.log(0.1)), rel=1e-10)
    assert delta == pytest.approx(1.1513, abs=1e-4)
    assert pfa_closed_form(1.1513, OperatingPoint(1.0, 0.0, 1)) == pytest.approx(0.1, abs=1e-5)


def test_calibrate_near_one_approaches_floor():
    op = OperatingPoint(1.0, 0.01, 1)
    floor = -op.L * op.gamma_s / ((1 + op.gamma_c) * op.gamma_c)
    deltas = [calibrate_threshold(1 - 10.0 ** -k, op) for k in (2, 4, 8, 12)]
    assert all(a > b > floor for a, b in zip(deltas, deltas[1:]))
    assert deltas[-1] == pytest.approx(floor, abs=1e-9)
    assert pfa_closed_form(floor, op) == 1.0


@pytest.mark.parametrize("p", [0.05, 0.2])
def test_calibration_round_trip_examples(p):
    for op in (OperatingPoint(0.5, 2.0, 16), OperatingPoint(0.5, 1.0, 8)):
        assert pfa_closed_form(calibrate_threshold(p, op), op) == pytest.approx(p, abs=1e-8)


@pytest.mark.parametrize("p", [1e-4, 1e-2, 0.1, 0.5])
def test_calibration_round_trip_grid(p):
    for gc_db in np.linspace(-20, 10, 5):
        for gs_db in np.linspace(-30, 10, 5):
            op = OperatingPoint.from_db(gc_db, gs_db, 64)
            assert pfa_closed_form(calibrate_threshold(p, op), op) == pytest.approx(p, rel=1e-8)


def test_calibrate_errors():
    with pytest.raises(ValueError):
        calibrate_threshold(0.0, OperatingPoint(1.0, 1.0, 4))
    with pytest.raises(ValueError):
        calibrate_threshold(1.0, OperatingPoint(1.0, 1.0, 4))
    with pytest.raises(UnsupportedOperatingPoint):
        calibrate_threshold(0.1, OperatingPoint(0.0, 1.0, 4))
    with pytest.raises(UnsupportedOperatingPoint):
        pd_given_pfa(0.1, OperatingPoint(0.0, 1.0, 4))


def test_pfa_decreasing_and_pd_dominates():
    op = OperatingPoint(0.7, 0.4, 8)
    deltas = np.linspace(-3, 20, 60)
    pfa = [pfa_closed_form(d, op) for d in deltas]
    pd = [pd_closed_form(d, op) for d in deltas]
    assert all(a >= b for a, b in zip(pfa, pfa[1:]))
    assert all(d >= f for d, f in zip(pd, pfa))
    assert pd_closed_form(-1e6, op) == 1.0


def test_pd_power_law_when_no_deterministic_part():
    op = OperatingPoint(1.0, 0.0, 1)
    assert pd_given_pfa(0.1, op) == pytest.approx(math.sqrt(0.1), rel=1e-10)
    assert pd_closed_form(calibrate_threshold(0.1, op), op) == pytest.approx(0.31623, abs=1e-5)
    for gc in (0.2, 3.0):
        assert pd_given_pfa(0.01, OperatingPoint(gc, 0.0, 1)) == pytest.approx(0.01 ** (1 / (1 + gc)), rel=1e-9)


def test_pd_near_certain_false_alarm():
    assert pd_given_pfa(0.999999, OperatingPoint(1.0, 1.0, 4)) == pytest.approx(1.0, abs=1e-5)


def test_pd_against_monte_carlo():
    # full detector simulated from raw observations, 1e6 trials
    L, gc, gs, sigma2 = 4, 1.0, 1.0, 1.0
    ch, design, frame = _setup(3, 2, L, gc, gs, seed=11)
    op = OperatingPoint(gc, gs, L)
    delta = calibrate_threshold(0.1, op)
    rng = np.random.default_rng(12)
    hits = 0
    n = 10**6
    for _ in range(10):
        m = n // 10
        s = cscg(rng, (m, L))
        y = cscg(rng, (m, L, 2), sigma2)
        clean = (ch.a @ design.w) * s + (ch.a @ frame.X0)[None, :]
        y += ch.alpha * clean[..., None] * ch.b[None, None, :]
        hits += int(np.count_nonzero(np_statistic(y, frame, design, ch, sigma2) >= delta))
    assert pd_closed_form(delta, op) == pytest.approx(hits / n, abs=0.003)


def test_composition_identity_random_points():
    rng = np.random.default_rng(13)
    worst = 0.0
    for _ in range(100):
        op = OperatingPoint.from_db(rng.uniform(-30, 10), rng.uniform(-40, 10), int(rng.integers(1, 2048)))
        p = 10 ** rng.uniform(-6, -0.5)
        worst = max(worst, abs(pd_given_pfa(p, op) - pd_closed_form(calibrate_threshold(p, op), op)))
    assert worst < 1e-9


@settings(max_examples=80, deadline=None)
@given(st.floats(-30, 10), st.floats(-40, 10), st.integers(1, 1024), st.floats(1e-6, 0.9))
def test_dominance(gc_db, gs_db, L, p):
    op = OperatingPoint.from_db(gc_db, gs_db, L)
    assert pd_given_pfa(p, op) >= p * (1 - 1e-9)


@pytest.fixture(scope="module")
def pd_grid():
    grid = np.linspace(-40, 10, 20)
    return np.array([[pd_given_pfa(1e-4, OperatingPoint.from_db(gc, gs, 1024)) for gs in grid] for gc in grid])


def test_monotone_along_gamma_s(pd_grid):
    assert np.all(np.diff(pd_grid, axis=1) >= -1e-12)


@pytest.mark.xfail(
    strict=True,
    reason="exact P_D dips by up to ~2e-4 along gamma_c where P_D > 0.5 and gamma_c is small: "
    "the Gaussian component adds H1-only variance (confirmed against scipy.stats.ncx2)",
)
def test_monotone_along_gamma_c(pd_grid):
    assert np.all(np.diff(pd_grid, axis=0) >= -1e-12)


def test_gamma_c_dip_is_the_variance_effect(pd_grid):
    # every decrease sits above the median, where extra H1 spread loses mass below the threshold
    d = np.diff(pd_grid, axis=0)
    bad = d < -1e-12
    assert np.all(pd_grid[:-1][bad] > 0.5)
    assert d.min() > -1e-3
    # same dip from an independent noncentral chi-squared implementation
    gs = 10 ** (-18.94736842105263 / 10)

    def ref(gc):
        l1 = 2 * 1024 * gs / gc ** 2
        return stats.ncx2.sf(stats.ncx2.isf(1e-4, 2048, l1) / (1 + gc), 2048, l1 * (1 + gc))

    assert ref(1e-4) > ref(10 ** -2.9)


# ---- approximations ----------------------------------------------------------------


def test_a2_zero_snr_and_example():
    assert pd_approx(0.01, OperatingPoint(0.0, 0.0, 64), "a2") == pytest.approx(0.01, rel=1e-12)
    ref = stats.norm.sf(stats.norm.isf(0.01) - 32 * math.sqrt(0.0201))
    assert pd_approx(0.01, OperatingPoint(0.01, 0.01, 1024), "a2") == pytest.approx(ref, abs=1e-6)


def test_a2_increasing():
    base = OperatingPoint(0.05, 0.02, 256)
    v0 = pd_approx(0.01, base)
    assert pd_approx(0.01, OperatingPoint(0.05, 0.02, 512)) > v0
    assert pd_approx(0.01, OperatingPoint(0.08, 0.02, 256)) > v0
    assert pd_approx(0.01, OperatingPoint(0.05, 0.04, 256)) > v0


def test_approximations_close_at_large_L():
    for gc_db in (-20, -10, 0):
        for gs_db in (-25, -15, -5):
            op = OperatingPoint.from_db(gc_db, gs_db, 1024)
            exact = pd_given_pfa(0.1, op)
            assert abs(pd_approx(0.1, op, "a1") - exact) < 0.01
            assert abs(pd_approx(0.1, op, "a2") - exact) < 0.02


def test_a1_reduces_to_a2_in_small_snr_limit():
    op = OperatingPoint(1e-6, 1e-5, 10**6)
    assert pd_approx(0.01, op, "a1") == pytest.approx(pd_approx(0.01, op, "a2"), rel=1e-4)
    with pytest.raises(ValueError):
        pd_approx(0.01, op, "a3")


# ---- benchmarks ----------------------------------------------------------------------


def test_mf_degenerate_and_coherent_limit():
    with pytest.raises(DegenerateDetector):
        mf_pd_given_pfa(0.1, OperatingPoint(1.0, 0.0, 8))
    ref = stats.norm.sf(stats.norm.isf(0.05) - math.sqrt(2 * 8 * 0.3))
    assert mf_pd_given_pfa(0.05, OperatingPoint(0.0, 0.3, 8)) == pytest.approx(ref, rel=1e-10)


def _mf_monte_carlo(L, gc, gs, p_fa, n, seed):
    sigma2 = 1.0
    ch, design, frame = _setup(3, 2, L, gc, gs, sigma2, seed=seed)
    rng = np.random.default_rng(seed + 1)
    t0, t1 = [], []
    for _ in range(10):
        m = n // 10
        noise = cscg(rng, (m, L, 2), sigma2)
        t0.append(mf_statistic(noise, frame, design, ch, sigma2))
        s = cscg(rng, (m, L))
        clean = (ch.a @ design.w) * s + (ch.a @ frame.X0)[None, :]
        y = cscg(rng, (m, L, 2), sigma2) + ch.alpha * clean[..., None] * ch.b[None, None, :]
        t1.append(mf_statistic(y, frame, design, ch, sigma2))
    t0, t1 = np.concatenate(t0), np.concatenate(t1)
    # threshold from the analytic H0 law: N(0, 2 L gs / (1 + gc)^2)
    thr = stats.norm.isf(p_fa) * math.sqrt(2 * L * gs) / (1 + gc)
    return np.mean(t0 >= thr), np.mean(t1 >= thr)


def test_mf_against_monte_carlo():
    n = 10**6
    p0, p1 = _mf_monte_carlo(16, 1.0, 0.5, 0.1, n, seed=20)
    ref = mf_pd_given_pfa(0.1, OperatingPoint(1.0, 0.5, 16))
    assert abs(p0 - 0.1) < 2.5 * math.sqrt(0.09 / n)
    assert abs(p1 - ref) < 2.5 * math.sqrt(ref * (1 - ref) / n)


def test_ts_forms():
    assert ts_pd_given_pfa(0.03, 0, 5.0) == pytest.approx(0.03, rel=1e-12)
    assert ts_pd_given_pfa(0.5, 100, 0.0) == pytest.approx(0.5, abs=1e-15)
    ref = stats.norm.sf(stats.norm.isf(0.01) - math.sqrt(2 * 512 * 0.01))
    assert ts_pd_given_pfa(0.01, 512, 0.01) == pytest.approx(ref, rel=1e-10)
    with pytest.raises(ValueError):
        ts_pd_given_pfa(0.01, -1, 0.01)


def test_ts_against_monte_carlo():
    # coherent detection of a known signal in white noise over L_s slots
    L_s, gs, n = 512, 0.01, 10**6
    rng = np.random.default_rng(30)
    thr = stats.norm.isf(0.01)
    shift = math.sqrt(2 * L_s * gs)
    draws = rng.standard_normal(n) + shift
    p_hat = np.mean(draws >= thr)
    ref = ts_pd_given_pfa(0.01, L_s, gs)
    assert abs(p_hat - ref) < 2 * math.sqrt(ref * (1 - ref) / n)


def test_detection_probability_dispatch():
    assert detection_probability(0.1, OperatingPoint(0.0, 0.0, 4)) == 0.1
    assert detection_probability(0.1, OperatingPoint(0.0, 0.2, 4)) == ts_pd_given_pfa(0.1, 4, 0.2)
    op = OperatingPoint(0.5, 0.3, 32)
    assert detection_probability(0.1, op) == pd_given_pfa(0.1, op)
    huge = OperatingPoint(1e-12, 1e-3, 1024)
    assert detection_probability(0.1, huge) == pd_approx(0.1, huge, "a1")


def test_roc_curve_rows():
    op = OperatingPoint(0.5, 0.1, 16)
    grid = np.logspace(-5, -0.5, 9)
    curve = roc_curve(op, grid)
    assert curve.shape == (9, 2)
    assert np.all(np.diff(curve[:, 1]) > 0)
    assert np.all(curve[:, 1] >= curve[:, 0])
    mf = roc_curve(op, grid, "mf")
    assert np.all(mf[:, 1] <= curve[:, 1] + 1e-12)
