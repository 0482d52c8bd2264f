import cmath
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isacdet.model import (
    BeamformerDesign,
    ChannelModelParams,
    OperatingPoint,
    SystemConfig,
    TransmitFrame,
    comm_metrics,
    cscg,
    dbm_to_watt,
    load_scenario,
    make_channels,
    path_loss,
    rng_stream,
    sample_rician_channel,
    scenario_from_dict,
    scenario_to_dict,
    sensing_snrs,
    steering_vectors,
    synthesize_deterministic_frame,
    target_channel_gain,
    ula_steering,
)


def random_psd(rng, n, rank=None):
    rank = n if rank is None else rank
    A = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    return A @ A.conj().T


# ---- configuration ---------------------------------------------------------------


def test_defaults_match_simulation_setup():
    cfg = SystemConfig()
    assert (cfg.M_t, cfg.M_r, cfg.L) == (16, 16, 1024)
    assert cfg.P == pytest.approx(dbm_to_watt(30.0))
    assert cfg.sigma_c2 == pytest.approx(dbm_to_watt(-80.0))
    assert cfg.sigma_s2 == pytest.approx(dbm_to_watt(-80.0))
    prm = ChannelModelParams()
    assert (prm.K, prm.L0_db, prm.d0, prm.beta0, prm.d_bc) == (1.0, -30.0, 1.0, 2.5, 1000.0)
    assert (prm.d1, prm.d2, prm.sigma_t, prm.f) == (260.0, 260.0, 0.5, 8e8)


@pytest.mark.parametrize("field,value", [("M_t", 0), ("L", 2.5), ("P", 0.0), ("sigma_s2", -1.0), ("gamma_0", -0.1)])
def test_config_validation(field, value):
    with pytest.raises(ValueError):
        SystemConfig(**{field: value})


def test_rate_threshold_sets_sinr_target():
    assert SystemConfig().with_rate_threshold(4).gamma_0 == 15.0
    assert SystemConfig().with_rate_threshold(0).gamma_0 == 0.0


# ---- propagation -----------------------------------------------------------------


def test_path_loss_examples():
    prm = ChannelModelParams()
    assert path_loss(1.0, prm) == pytest.approx(1e-3, rel=1e-14)
    assert path_loss(1000.0, prm) == pytest.approx(10 ** (-10.5), rel=1e-12)
    flat = ChannelModelParams(beta0=0.0)
    assert path_loss(37.0, flat) == pytest.approx(1e-3)
    with pytest.raises(ValueError):
        path_loss(0.0, prm)


def test_target_gain_examples():
    assert target_channel_gain(ChannelModelParams(sigma_t=0.0)) == 0.0
    base = target_channel_gain(ChannelModelParams())
    assert target_channel_gain(ChannelModelParams(d1=520.0)) == pytest.approx(base / 4)
    # hand evaluation: eta = c^2 / (64 pi^3 f^2) ~ 7.09e-5, then sigma_t / 260^4
    eta = 299792458.0 ** 2 / (64 * math.pi ** 3 * 8e8 ** 2)
    assert eta == pytest.approx(7.09e-5, rel=0.01)
    assert base == pytest.approx(7.75e-15, rel=0.01)


def test_rician_channel_deterministic_and_los_limit():
    cfg = SystemConfig()
    prm = ChannelModelParams()
    h1 = sample_rician_channel(prm, cfg, seed=11, realization=3)
    h2 = sample_rician_channel(prm, cfg, seed=11, realization=3)
    assert np.array_equal(h1, h2)
    los = ChannelModelParams(K=1e12)
    h = sample_rician_channel(los, cfg, seed=11)
    ref = math.sqrt(path_loss(los.d_bc, los)) * np.conj(ula_steering(los.theta_cu, cfg.M_t))
    assert np.linalg.norm(h - ref) / np.linalg.norm(ref) < 1e-5


def test_rayleigh_channel_power():
    cfg = SystemConfig()
    prm = ChannelModelParams(K=0.0)
    pl = path_loss(prm.d_bc, prm)
    power = np.mean([np.vdot(h, h).real for h in (sample_rician_channel(prm, cfg, 1, i) for i in range(10_000))])
    assert power / (cfg.M_t * pl) == pytest.approx(1.0, abs=0.05)


def test_realizations_are_order_independent():
    cfg, prm = SystemConfig(M_t=4, M_r=4), ChannelModelParams()
    late = make_channels(prm, cfg, 9, realization=5)
    for i in range(5):
        make_channels(prm, cfg, 9, realization=i)
    again = make_channels(prm, cfg, 9, realization=5)
    assert np.array_equal(late.h, again.h) and late.alpha == again.alpha


def test_cscg_variance_split():
    z = cscg(rng_stream(0, 99), 200_000, var=3.0)
    assert np.var(z.real) == pytest.approx(1.5, rel=0.02)
    assert np.var(z.imag) == pytest.approx(1.5, rel=0.02)
    assert abs(np.mean(z.real * z.imag)) < 0.02


# ---- steering -------------------------------------------------------------------


def test_steering_examples():
    cfg = SystemConfig(M_t=4, M_r=6)
    a, b = steering_vectors(0.0, 0.3, cfg)
    assert np.allclose(a, 1.0)
    assert np.vdot(b, b).real == pytest.approx(6.0, rel=1e-12)
    a = ula_steering(math.pi / 6, 4)
    expected = [cmath.exp(1j * math.pi * math.sin(math.pi / 6) * k) for k in range(4)]
    assert np.allclose(a, expected, atol=1e-15)


@given(st.floats(-math.pi, math.pi), st.integers(1, 64))
def test_steering_norm(angle, n):
    a = ula_steering(angle, n)
    assert np.vdot(a, a).real == pytest.approx(n, rel=1e-12)


# ---- frames ---------------------------------------------------------------------


def test_frame_of_zero_covariance_is_zero():
    assert np.all(synthesize_deterministic_frame(np.zeros((3, 3)), 8) == 0)


def test_frame_of_identity_has_orthogonal_rows():
    X0 = synthesize_deterministic_frame(np.eye(4), 4)
    U = X0 / 2.0
    assert np.allclose(U @ U.conj().T, np.eye(4), atol=1e-12)
    assert np.allclose(U.conj().T @ U, np.eye(4), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 64), st.integers(0, 2**32 - 1))
def test_frame_sample_covariance_is_exact(M, extra, seed):
    rng = np.random.default_rng(seed)
    R0 = random_psd(rng, M, rank=int(rng.integers(1, M + 1)))
    L = M + extra
    fr = TransmitFrame(synthesize_deterministic_frame(R0, L))
    assert np.linalg.norm(fr.sample_covariance() - R0) < 1e-10 * np.trace(R0).real


def test_frame_needs_enough_slots():
    with pytest.raises(ValueError):
        synthesize_deterministic_frame(np.eye(4), 3)


# ---- metrics --------------------------------------------------------------------


def test_comm_metrics_examples():
    rng = np.random.default_rng(1)
    h = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    g, r = comm_metrics(BeamformerDesign.zeros(5), h, 1e-3)
    assert g == 0.0 and r == 0.0
    P, s2 = 2.0, 1e-3
    w = math.sqrt(P) * h / np.linalg.norm(h)
    g, r = comm_metrics(BeamformerDesign(w, np.zeros((5, 5))), h, s2)
    assert g == pytest.approx(P * np.vdot(h, h).real / s2, rel=1e-12)
    assert r == pytest.approx(math.log2(1 + g))


def test_comm_metrics_dense_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = 6
        h = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        w = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        R0 = random_psd(rng, n)
        H = np.outer(h, h.conj())
        sig = np.trace(H @ np.outer(w, w.conj())).real
        intf = np.trace(H @ R0).real
        g, _ = comm_metrics(BeamformerDesign(w, R0), h, 0.7)
        assert g == pytest.approx(sig / (intf + 0.7), rel=1e-12)


@given(st.floats(0, 2 * math.pi))
def test_comm_metrics_phase_invariant(theta):
    rng = np.random.default_rng(3)
    h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    w = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    R0 = random_psd(rng, 4)
    g1, _ = comm_metrics(BeamformerDesign(w, R0), h, 0.1)
    g2, _ = comm_metrics(BeamformerDesign(cmath.exp(1j * theta) * w, R0), h, 0.1)
    assert g1 == pytest.approx(g2, rel=1e-12)


def test_sensing_snr_examples():
    cfg = SystemConfig()
    ch = make_channels(ChannelModelParams(), cfg, seed=0)
    zero = sensing_snrs(BeamformerDesign.zeros(cfg.M_t), ch.alpha, ch.a, cfg)
    assert zero.gamma_c == 0.0 and zero.gamma_s == 0.0
    w = math.sqrt(cfg.P) * ch.a.conj() / math.sqrt(cfg.M_t)
    op = sensing_snrs(BeamformerDesign(w, np.zeros((16, 16))), ch.alpha, ch.a, cfg)
    expected = abs(ch.alpha) ** 2 * cfg.P * cfg.M_t * cfg.M_r / cfg.sigma_s2
    assert op.gamma_c == pytest.approx(expected, rel=1e-12)
    assert op.gamma_s == 0.0


@settings(max_examples=25, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 1000))
def test_sensing_snr_power_scaling(c, seed):
    rng = np.random.default_rng(seed)
    cfg = SystemConfig(M_t=4, M_r=3)
    ch = make_channels(ChannelModelParams(), cfg, seed)
    w = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    R0 = random_psd(rng, 4)
    base = sensing_snrs(BeamformerDesign(w, R0), ch.alpha, ch.a, cfg)
    scaled = sensing_snrs(BeamformerDesign(math.sqrt(c) * w, c * R0), ch.alpha, ch.a, cfg)
    assert scaled.gamma_c == pytest.approx(c * base.gamma_c, rel=1e-12)
    assert scaled.gamma_s == pytest.approx(c * base.gamma_s, rel=1e-12)


def test_channel_norm_invariants():
    for seed in range(5):
        cfg = SystemConfig(M_t=7, M_r=5)
        ch = make_channels(ChannelModelParams(theta_t=0.4, theta_r=-1.1), cfg, seed)
        assert np.vdot(ch.a, ch.a).real == pytest.approx(7, rel=1e-12)
        assert np.vdot(ch.b, ch.b).real == pytest.approx(5, rel=1e-12)
        assert abs(ch.alpha) ** 2 == pytest.approx(target_channel_gain(ChannelModelParams()), rel=1e-12)


def test_design_validation():
    d = BeamformerDesign(np.array([1.0, 0.0]), np.diag([0.5, 0.0]))
    d.validate(1.5)
    with pytest.raises(ValueError):
        d.validate(1.0)
    with pytest.raises(ValueError):
        BeamformerDesign(np.zeros(2), np.diag([1.0, -1.0])).validate(10.0)


def test_operating_point_noncentralities():
    op = OperatingPoint(0.5, 0.2, 10)
    assert op.lambda_h0 == pytest.approx(2 * 10 * 0.2 / 0.25)
    assert op.lambda_h1 == pytest.approx(op.lambda_h0 * 1.5)
    assert OperatingPoint.from_db(10, -10, 4).gamma_c == pytest.approx(10.0)
    with pytest.raises(ValueError):
        OperatingPoint(-1.0, 0.0, 4)


# ---- scenario files --------------------------------------------------------------


def test_scenario_round_trip(tmp_path):
    data = {
        "name": "example",
        "system": {"M_t": 8, "M_r": 4, "L": 256, "P_dbm": 30, "sigma_c2_dbm": -80, "sigma_s2_dbm": -90,
                   "rate_threshold": 2},
        "channel": {"d_bc": 500, "theta_t_deg": 30},
    }
    path = tmp_path / "s.json"
    path.write_text(json.dumps(data))
    cfg, prm = load_scenario(path)
    assert cfg.M_t == 8 and cfg.gamma_0 == 3.0
    assert cfg.sigma_s2 == pytest.approx(1e-12)
    assert prm.theta_t == pytest.approx(math.pi / 6)
    cfg2, prm2 = scenario_from_dict(scenario_to_dict(cfg, prm))
    assert cfg2.M_t == cfg.M_t and cfg2.sigma_s2 == pytest.approx(cfg.sigma_s2, rel=1e-12)
    assert prm2.theta_t == pytest.approx(prm.theta_t)
    assert prm2.d_bc == prm.d_bc


@pytest.mark.parametrize("bad", [
    {"system": {"M_tx": 4}},
    {"extra": 1},
    {"system": {"gamma_0": 1.0, "rate_threshold": 2.0}},
    {"channel": {"d1": -5}},
])
def test_scenario_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        scenario_from_dict(bad)
