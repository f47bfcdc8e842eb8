"""Attention, reliability gate, base-detail, and RGMAF pipeline tests."""

import numpy as np
import pytest

from irvfuse import imgcore
from irvfuse.evalbench import degrade
from irvfuse.registration import RegistrationConfig
from irvfuse.rgmaf import (
    InvalidTemperature,
    RgmafConfig,
    attention_weights,
    base_detail,
    edge_consistency,
    local_energy,
    local_ncc,
    reliability_gate,
    rgmaf_fuse,
)

from conftest import paired_scene, replicate3, textured


# --- local_energy -----------------------------------------------------------

def test_energy_constant_zero():
    assert np.all(local_energy(np.full((16, 16), 40.0), 5) == 0.0)


def test_energy_step_edge_localized():
    img = np.zeros((21, 21))
    img[:, 10:] = 200.0
    e = local_energy(img, 5)
    assert e[10, 10] > 0.5
    assert np.all(e[:, :3] == 0.0)
    assert np.all(e[:, -3:] == 0.0)


def test_energy_ramp_matches_window_oracle():
    xs = np.tile(3.0 * np.arange(16, dtype=np.float64), (12, 1))
    window = 5
    gx, gy = imgcore.gradient(xs)
    sq = gx * gx + gy * gy
    pad = np.pad(sq, window // 2, mode="edge")
    oracle = np.zeros_like(sq)
    for y in range(sq.shape[0]):
        for x in range(sq.shape[1]):
            oracle[y, x] = pad[y:y + window, x:x + window].mean()
    assert np.allclose(oracle, 9.0)  # pre-normalization interior energy
    e = local_energy(xs, window)
    assert np.abs(e - oracle / oracle.max()).max() < 1e-9


# --- attention_weights ------------------------------------------------------

def test_attention_equal_energy_half(rng):
    e = rng.random((8, 8))
    w = attention_weights(e, e, beta=0.0, temperature=1.0)
    assert np.abs(w.w_thermal - 0.5).max() < 1e-6
    assert np.abs(w.w_visual - 0.5).max() < 1e-6


def test_attention_beta_saturation(rng):
    e_t = rng.random((8, 8))
    e_v = rng.random((8, 8))
    w = attention_weights(e_t, e_v, beta=20.0, temperature=1.0)
    assert np.all(w.w_thermal > 0.999)


def test_attention_scalar_logistic_oracle():
    e_t = np.full((4, 4), 0.2)
    e_v = np.full((4, 4), 0.8)
    w = attention_weights(e_t, e_v, beta=0.0, temperature=1.0)
    expect = 1.0 / (1.0 + np.exp(-0.6))
    assert np.abs(w.w_visual - expect).max() < 1e-9


def test_attention_weights_sum_to_one(rng):
    for beta in (-2.0, 0.0, 3.0):
        for temp in (0.25, 1.0, 4.0):
            e_t = rng.random((16, 16))
            e_v = rng.random((16, 16))
            w = attention_weights(e_t, e_v, beta, temp)
            assert np.abs(w.w_thermal + w.w_visual - 1.0).max() < 1e-6
            assert np.all(w.w_visual_gated <= w.w_visual + 1e-12)


def test_attention_monotone_in_beta(rng):
    e_t = rng.random((12, 12))
    e_v = rng.random((12, 12))
    betas = [-1.0, 0.0, 0.5, 2.0]
    prev = None
    for b in betas:
        w = attention_weights(e_t, e_v, b, 1.0).w_thermal
        if prev is not None:
            assert np.all(w >= prev - 1e-12)
        prev = w


def test_attention_temperature_sharpening(rng):
    e_t = rng.random((12, 12))
    e_v = rng.random((12, 12))
    hot = attention_weights(e_t, e_v, 0.0, 2.0).w_thermal
    cold = attention_weights(e_t, e_v, 0.0, 0.5).w_thermal
    differs = np.abs(e_t - e_v) > 1e-9
    # lower temperature pushes weights away from 0.5 wherever logits differ
    assert np.all(np.abs(cold[differs] - 0.5) >= np.abs(hot[differs] - 0.5) - 1e-12)


def test_attention_invalid_temperature(rng):
    with pytest.raises(InvalidTemperature):
        attention_weights(np.zeros((4, 4)), np.zeros((4, 4)), 0.0, 0.0)
    with pytest.raises(InvalidTemperature):
        RgmafConfig(temperature=-1.0)


# --- local_ncc --------------------------------------------------------------

def test_ncc_self_is_one(rng):
    img = textured(32, 32, rng, smooth=1.5)
    ncc = local_ncc(img, img, 7)
    assert np.abs(ncc - 1.0).max() < 1e-6


def test_ncc_sign_flip_is_minus_one(rng):
    img = textured(32, 32, rng, smooth=1.5)
    flipped = -(img - img.mean()) + img.mean()
    ncc = local_ncc(img, flipped, 7)
    assert np.abs(ncc + 1.0).max() < 1e-6


def test_ncc_constant_patch_zero(rng):
    img = textured(32, 32, rng)
    assert np.all(local_ncc(img, np.full((32, 32), 9.0), 7) == 0.0)
    assert np.all(local_ncc(np.full((32, 32), 9.0), img, 7) == 0.0)


# --- edge_consistency -------------------------------------------------------

def test_edge_consistency_identical(rng):
    img = textured(32, 32, rng, smooth=2)
    cons = edge_consistency(img, img)
    gx, gy = imgcore.gradient(img)
    mag = np.hypot(gx, gy)
    assert np.all(cons[mag > 1e-6] > 1.0 - 1e-9)
    assert cons.max() <= 1.0


def test_edge_consistency_orthogonal_ramps():
    ys, xs = np.mgrid[0:24, 0:24].astype(np.float64)
    a = np.sin(xs / 2.0) * 100
    b = np.sin(ys / 2.0) * 100
    cons = edge_consistency(a, b)
    ga = np.hypot(*imgcore.gradient(a))
    gb = np.hypot(*imgcore.gradient(b))
    overlap = (ga > 0.1 * ga.max()) & (gb > 0.1 * gb.max())
    assert cons[overlap].mean() < 0.05


def test_edge_consistency_constant_zero():
    assert np.all(edge_consistency(np.full((8, 8), 3.0), np.full((8, 8), 9.0)) == 0.0)


# --- reliability_gate -------------------------------------------------------

def test_gate_unit_fixed_point():
    ones = np.ones((16, 16))
    r = reliability_gate(ones, ones, 2.0)
    assert np.abs(r.r - 1.0).max() < 1e-9


def test_gate_zero_annihilator(rng):
    cons = rng.random((16, 16))
    r = reliability_gate(np.zeros((16, 16)), cons, 2.0)
    assert np.all(r.r == 0.0)


def test_gate_negative_ncc_clamped(rng):
    ncc = -np.ones((12, 12))
    cons = np.ones((12, 12))
    r = reliability_gate(ncc, cons, 1.0)
    assert np.all(r.r == 0.0)


def test_gate_matches_convolution_oracle(rng):
    ncc = (rng.integers(0, 2, (20, 20))).astype(np.float64)  # checkerboard-ish
    cons = rng.random((20, 20))
    sigma = 2.0
    r = reliability_gate(ncc, cons, sigma)
    prod = np.maximum(ncc, 0.0) * cons
    k = imgcore.gaussian_kernel_1d(max(3, int(2 * np.ceil(3 * sigma) + 1)), sigma)
    size = len(k)
    pad = np.pad(prod, size // 2, mode="edge")
    oracle = np.zeros_like(prod)
    k2d = np.outer(k, k)
    for y in range(prod.shape[0]):
        for x in range(prod.shape[1]):
            oracle[y, x] = (pad[y:y + size, x:x + size] * k2d).sum()
    assert np.abs(r.r - np.clip(oracle, 0, 1)).max() < 1e-6


def test_gate_mean_high_for_identical_textured(rng):
    img = textured(64, 64, rng, smooth=2)
    ncc = local_ncc(img, img, 11)
    cons = edge_consistency(img, img)
    r = reliability_gate(ncc, cons, 2.0)
    assert r.r.mean() >= 0.95


def test_gate_shift_lowers_reliability(rng):
    for _ in range(5):
        img = textured(96, 96, rng, smooth=1.5)
        shifted = np.roll(img, 8, axis=1)
        aligned = reliability_gate(local_ncc(img, img, 11),
                                   edge_consistency(img, img), 2.0)
        misreg = reliability_gate(local_ncc(img, shifted, 11),
                                  edge_consistency(img, shifted), 2.0)
        assert misreg.r.mean() < aligned.r.mean()


# --- base_detail ------------------------------------------------------------

def test_base_detail_constant():
    bd = base_detail(np.full((16, 16), 120.0), 2.0)
    assert np.allclose(bd.base, 120.0, atol=1e-9)
    assert np.abs(bd.detail).max() < 1e-9


def test_base_detail_reconstruction(rng):
    img = rng.random((24, 24)) * 255
    bd = base_detail(img, 3.0)
    assert np.abs(bd.base + bd.detail - img).max() < 1e-9


def test_base_detail_impulse_kernel_response():
    img = np.zeros((15, 15))
    img[7, 7] = 1.0
    bd = base_detail(img, 1.0)
    k = imgcore.gaussian_kernel_1d(7, 1.0)
    expect = np.outer(k, k)
    assert np.abs(bd.base[4:11, 4:11] - expect).max() < 1e-12
    assert np.abs((bd.base + bd.detail) - img).max() < 1e-12


def test_base_detail_requires_positive_sigma():
    with pytest.raises(ValueError):
        base_detail(np.zeros((8, 8)), 0.0)


# --- rgmaf_fuse -------------------------------------------------------------

def test_fuse_constant_visual_identity(rng):
    th = textured(48, 56, rng, smooth=2)
    vis = replicate3(np.full((48, 56), 99.0))
    res = rgmaf_fuse(th, vis)
    assert res.fused.shape == (48, 56, 3)
    for c in range(3):
        assert np.abs(res.fused[..., c] - th).max() < 1e-9


def test_fuse_non_darkening(rng):
    for _ in range(10):
        th, vis = paired_scene(48, 48, rng)
        res = rgmaf_fuse(th, vis)
        assert float((res.fused[..., 0] - th).min()) >= 0.0


def test_fuse_non_darkening_with_degraded(rng):
    th, vis = paired_scene(48, 48, rng)
    res = rgmaf_fuse(degrade(th, "thermal"), degrade(vis, "visual"))
    t_deg = degrade(th, "thermal")
    assert float((res.fused[..., 0] - t_deg).min()) >= 0.0


def test_fuse_three_identical_channels(rng):
    th, vis = paired_scene(40, 40, rng)
    res = rgmaf_fuse(th, vis)
    assert np.array_equal(res.fused[..., 0], res.fused[..., 1])
    assert np.array_equal(res.fused[..., 0], res.fused[..., 2])
    assert res.fused.min() >= 0.0 and res.fused.max() <= 255.0


def test_fuse_degraded_visual_lowers_gated_weight(rng):
    lower = 0
    for _ in range(5):
        th, vis = paired_scene(64, 64, rng)
        clean = rgmaf_fuse(th, vis)
        degraded = rgmaf_fuse(th, degrade(vis, "visual"))
        if degraded.weights.w_visual_gated.mean() < clean.weights.w_visual_gated.mean():
            lower += 1
    assert lower == 5


def test_fuse_diagnostics_ranges(rng):
    th, vis = paired_scene(40, 40, rng)
    res = rgmaf_fuse(th, vis)
    w = res.weights
    assert np.all((w.w_thermal >= 0) & (w.w_thermal <= 1))
    assert np.all((w.w_visual >= 0) & (w.w_visual <= 1))
    assert np.all(w.w_visual_gated <= w.w_visual + 1e-12)
    assert np.all((res.reliability.r >= 0) & (res.reliability.r <= 1))
    assert np.abs(w.w_thermal + w.w_visual - 1.0).max() < 1e-6


def test_fuse_textureless_visual_falls_back(rng):
    th = textured(48, 48, rng)
    res = rgmaf_fuse(th, replicate3(np.full((48, 48), 20.0)))
    assert res.used_fallback
    assert np.isfinite(res.fused).all()


def test_fuse_homography_mode(rng):
    from conftest import blob_scene
    th = blob_scene(128, 128, rng)
    vis = replicate3(th)
    cfg = RgmafConfig(registration=RegistrationConfig(mode="feature_homography"))
    res = rgmaf_fuse(th, vis, cfg)
    assert not res.used_fallback
    assert res.fused.shape == (128, 128, 3)


def test_fuse_flow_mode(rng):
    th = textured(96, 96, rng, smooth=2)
    vis = replicate3(th)
    cfg = RgmafConfig(registration=RegistrationConfig(mode="ecc_then_flow"))
    res = rgmaf_fuse(th, vis, cfg)
    assert not res.used_fallback
    assert float((res.fused[..., 0] - th).min()) >= 0.0


def test_config_validation():
    with pytest.raises(ValueError):
        RgmafConfig(energy_window=4)
    with pytest.raises(ValueError):
        RgmafConfig(ncc_window=1)
    with pytest.raises(ValueError):
        RgmafConfig(detail_clip_k=0.0)
    with pytest.raises(ValueError):
        RgmafConfig(edge_band=-1)
