"""Classical baseline tests: endpoints, hand oracles, NMS properties."""

import numpy as np
import pytest

from irvfuse import imgcore
from irvfuse.baselines import (
    BaselineConfig,
    IRONBOW_RAMP,
    classical_guided_fuse,
    decision_fuse,
    haar_decompose,
    haar_reconstruct,
    laplacian_fuse,
    overlay_fuse,
    pixel_fuse,
    wavelet_fuse,
    ycrcb_fuse,
)
from irvfuse.evalbench import BoundingBox, Detection, iou
from irvfuse.imgcore import DimensionMismatch

from conftest import replicate3, textured


# --- pixel_fuse -------------------------------------------------------------

def test_alpha_endpoints(rng):
    t = rng.random((8, 8)) * 255
    v = rng.random((8, 8)) * 255
    assert np.array_equal(pixel_fuse(t, v, "alpha", BaselineConfig(alpha=1.0)), t)
    assert np.array_equal(pixel_fuse(t, v, "alpha", BaselineConfig(alpha=0.0)), v)


def test_alpha_convexity_constants():
    t = np.full((4, 4), 100.0)
    v = np.full((4, 4), 200.0)
    assert np.allclose(pixel_fuse(t, v, "alpha"), 150.0)


def test_weighted_matches_formula(rng):
    t = rng.random((6, 6)) * 255
    v = rng.random((6, 6)) * 255
    cfg = BaselineConfig(w_thermal=0.3, w_visual=0.7)
    assert np.allclose(pixel_fuse(t, v, "weighted", cfg), 0.3 * t + 0.7 * v)


def test_pixel_fuse_monotone(rng):
    t = rng.random((8, 8)) * 200
    v = rng.random((8, 8)) * 200
    bumped = pixel_fuse(t + 10.0, v, "alpha")
    assert np.all(bumped >= pixel_fuse(t, v, "alpha") - 1e-12)
    bumped_v = pixel_fuse(t, v + 10.0, "weighted")
    assert np.all(bumped_v >= pixel_fuse(t, v, "weighted") - 1e-12)


def test_pixel_fuse_identity_inputs(rng):
    t = rng.random((8, 8)) * 255
    assert np.abs(pixel_fuse(t, t, "alpha") - t).max() < 1e-3
    assert np.abs(pixel_fuse(t, t, "weighted") - t).max() < 1e-3


def test_pixel_fuse_grid_mismatch():
    with pytest.raises(DimensionMismatch):
        pixel_fuse(np.zeros((4, 4)), np.zeros((5, 4)), "alpha")


# --- overlay_fuse -----------------------------------------------------------

def test_overlay_cold_endpoint(rng):
    v = rng.random((4, 4, 3)) * 255
    t = np.zeros((4, 4))
    out = overlay_fuse(t, v)
    assert np.allclose(out, 0.5 * IRONBOW_RAMP[0] + 0.5 * v)
    assert np.array_equal(IRONBOW_RAMP[0], [0.0, 0.0, 0.0])


def test_overlay_hot_endpoint(rng):
    v = rng.random((4, 4, 3)) * 255
    t = np.full((4, 4), 255.0)
    out = overlay_fuse(t, v)
    assert np.allclose(out, 0.5 * IRONBOW_RAMP[255] + 0.5 * v)
    assert np.array_equal(IRONBOW_RAMP[255], [255.0, 255.0, 255.0])


def test_overlay_black_visual_halves_ramp():
    t = np.full((3, 3), 255.0)
    v = np.zeros((3, 3, 3))
    assert np.allclose(overlay_fuse(t, v), 127.5)


# --- laplacian_fuse ---------------------------------------------------------

def test_laplacian_identity_inputs(rng):
    t = textured(32, 32, rng)
    assert np.abs(laplacian_fuse(t, t) - t).max() < 1e-6


def test_laplacian_constants_average():
    t = np.full((16, 16), 60.0)
    v = np.full((16, 16), 100.0)
    assert np.allclose(laplacian_fuse(t, v), 80.0, atol=1e-9)


def test_laplacian_single_level_matches_oracle(rng):
    t = rng.random((8, 8)) * 255
    v = rng.random((8, 8)) * 255
    out = laplacian_fuse(t, v, BaselineConfig(pyramid_levels=1))
    # direct downsample/upsample/select composition
    down_t = imgcore.resample_bilinear(t, 4, 4)
    down_v = imgcore.resample_bilinear(v, 4, 4)
    lap_t = t - imgcore.resample_bilinear(down_t, 8, 8)
    lap_v = v - imgcore.resample_bilinear(down_v, 8, 8)
    detail = np.where(np.abs(lap_t) >= np.abs(lap_v), lap_t, lap_v)
    coarse = 0.5 * (down_t + down_v)
    oracle = np.clip(detail + imgcore.resample_bilinear(coarse, 8, 8), 0, 255)
    assert np.abs(out - oracle).max() < 1e-6


def test_laplacian_pads_odd_sizes(rng):
    t = textured(13, 19, rng)
    v = textured(13, 19, np.random.default_rng(5))
    out = laplacian_fuse(t, v)
    assert out.shape == (13, 19)
    assert out.min() >= 0 and out.max() <= 255


def test_laplacian_shift_equivariant_interior(rng):
    levels = 2
    step = 2 ** levels
    t = textured(64, 64, rng)
    v = textured(64, 64, np.random.default_rng(3))
    cfg = BaselineConfig(pyramid_levels=levels)
    base = laplacian_fuse(t, v, cfg)
    rolled = laplacian_fuse(np.roll(t, step, axis=1), np.roll(v, step, axis=1), cfg)
    m = 4 * step
    assert np.abs(np.roll(base, step, axis=1)[m:-m, m:-m]
                  - rolled[m:-m, m:-m]).max() < 1e-6


# --- wavelet_fuse -----------------------------------------------------------

def test_wavelet_identity_inputs(rng):
    t = textured(32, 32, rng)
    assert np.abs(wavelet_fuse(t, t) - t).max() < 1e-6


def test_wavelet_constants_average():
    t = np.full((8, 8), 40.0)
    v = np.full((8, 8), 90.0)
    assert np.allclose(wavelet_fuse(t, v), 65.0, atol=1e-9)


def test_haar_round_trip(rng):
    img = rng.random((16, 16)) * 255
    approx, details = haar_decompose(img, 2)
    back = haar_reconstruct(approx, details)
    assert np.abs(back - img).max() < 1e-9


def test_wavelet_4x4_hand_oracle(rng):
    t = rng.random((4, 4)) * 255
    v = rng.random((4, 4)) * 255

    def haar_blocks(img):
        a, b = img[0::2, 0::2], img[0::2, 1::2]
        c, d = img[1::2, 0::2], img[1::2, 1::2]
        ll = (a + b + c + d) / 2.0
        lh = (a + b - c - d) / 2.0
        hl = (a - b + c - d) / 2.0
        hh = (a - b - c + d) / 2.0
        return ll, lh, hl, hh

    def haar_inverse_blocks(ll, lh, hl, hh):
        out = np.zeros((2 * ll.shape[0], 2 * ll.shape[1]))
        out[0::2, 0::2] = (ll + lh + hl + hh) / 2.0
        out[0::2, 1::2] = (ll + lh - hl - hh) / 2.0
        out[1::2, 0::2] = (ll - lh + hl - hh) / 2.0
        out[1::2, 1::2] = (ll - lh - hl + hh) / 2.0
        return out

    ll_t, lh_t, hl_t, hh_t = haar_blocks(t)
    ll_v, lh_v, hl_v, hh_v = haar_blocks(v)
    sel = lambda x, y: np.where(np.abs(x) >= np.abs(y), x, y)
    oracle = haar_inverse_blocks(0.5 * (ll_t + ll_v), sel(lh_t, lh_v),
                                 sel(hl_t, hl_v), sel(hh_t, hh_v))
    out = wavelet_fuse(t, v, BaselineConfig(wavelet_levels=1))
    assert np.abs(out - np.clip(oracle, 0, 255)).max() < 1e-9


def test_wavelet_shift_equivariant(rng):
    levels = 2
    step = 2 ** levels
    t = textured(32, 32, rng)
    v = textured(32, 32, np.random.default_rng(4))
    cfg = BaselineConfig(wavelet_levels=levels)
    base = wavelet_fuse(t, v, cfg)
    rolled = wavelet_fuse(np.roll(t, step, axis=1), np.roll(v, step, axis=1), cfg)
    assert np.abs(np.roll(base, step, axis=1) - rolled).max() < 1e-6


# --- classical_guided_fuse --------------------------------------------------

def test_classical_guided_identity_inputs(rng):
    t = textured(24, 24, rng)
    assert np.abs(classical_guided_fuse(t, t) - t).max() < 1e-3


def test_classical_guided_constants_average():
    t = np.full((20, 20), 30.0)
    v = np.full((20, 20), 110.0)
    assert np.allclose(classical_guided_fuse(t, v), 70.0, atol=1e-6)


def test_classical_guided_matches_composed_oracle(rng):
    from test_rgif import guided_filter_oracle
    t = rng.random((16, 16)) * 255
    v = rng.random((16, 16)) * 255
    base_t = guided_filter_oracle(t, t, 8, 0.01)
    base_v = guided_filter_oracle(v, v, 8, 0.01)
    det_t, det_v = t - base_t, v - base_v
    oracle = 0.5 * (base_t + base_v) + np.where(np.abs(det_t) >= np.abs(det_v),
                                                det_t, det_v)
    out = classical_guided_fuse(t, v)
    assert np.abs(out - np.clip(oracle, 0, 255)).max() < 1e-6


# --- ycrcb_fuse -------------------------------------------------------------

def test_ycrcb_achromatic_takes_thermal_luma(rng):
    t = rng.random((8, 8)) * 255
    v = replicate3(np.full((8, 8), 90.0))
    out = ycrcb_fuse(t, v)
    assert np.abs(imgcore.to_grayscale(out) - t).max() <= 1.0
    assert np.abs(out[..., 0] - out[..., 1]).max() <= 1.0
    assert np.abs(out[..., 1] - out[..., 2]).max() <= 1.0


def test_ycrcb_self_luma_round_trip(rng):
    v = rng.random((8, 8, 3)) * 255
    t = imgcore.to_grayscale(v)
    assert np.abs(ycrcb_fuse(t, v) - v).max() <= 1.0


def test_ycrcb_preserves_chroma(rng):
    # reddish visual, chosen so the luminance swap stays inside the RGB gamut
    v = np.zeros((6, 6, 3))
    v[..., 0] = 150.0
    v[..., 1] = 60.0
    v[..., 2] = 60.0
    t = np.full((6, 6), 100.0)
    out = ycrcb_fuse(t, v)
    conv_in = imgcore.ycrcb(v)
    conv_out = imgcore.ycrcb(out)
    assert np.abs(conv_out[..., 1] - conv_in[..., 1]).max() <= 1.0
    assert np.abs(conv_out[..., 2] - conv_in[..., 2]).max() <= 1.0


# --- decision_fuse ----------------------------------------------------------

def _det(x0, y0, x1, y1, score, cls=0):
    return Detection(box=BoundingBox(x0, y0, x1, y1), score=score, class_id=cls)


def test_decision_disjoint_union():
    a = [_det(0, 0, 10, 10, 0.9), _det(20, 20, 30, 30, 0.8)]
    b = [_det(40, 40, 50, 50, 0.7)]
    out = decision_fuse(a, b, 0.5)
    assert len(out) == 3
    assert {d.score for d in out} == {0.9, 0.8, 0.7}


def test_decision_duplicate_keeps_higher_score():
    a = [_det(0, 0, 10, 10, 0.9)]
    b = [_det(0, 0, 10, 10, 0.7)]
    out = decision_fuse(a, b, 0.5)
    assert len(out) == 1
    assert out[0].score == 0.9


def test_decision_empty():
    assert decision_fuse([], [], 0.5) == []


def test_decision_nms_consistency(rng):
    dets_a = [_det(x, y, x + rng.uniform(5, 20), y + rng.uniform(5, 20),
                   float(rng.uniform(0.1, 1.0)))
              for x, y in rng.uniform(0, 80, (15, 2))]
    dets_b = [_det(x, y, x + rng.uniform(5, 20), y + rng.uniform(5, 20),
                   float(rng.uniform(0.1, 1.0)))
              for x, y in rng.uniform(0, 80, (15, 2))]
    thr = 0.4
    out = decision_fuse(dets_a, dets_b, thr)
    for i in range(len(out)):
        for j in range(i + 1, len(out)):
            assert iou(out[i].box, out[j].box) <= thr


# --- shared invariants ------------------------------------------------------

def test_all_gray_baselines_preserve_range(rng):
    t = textured(16, 16, rng)
    v = textured(16, 16, np.random.default_rng(9))
    for fn in (lambda: pixel_fuse(t, v, "alpha"),
               lambda: pixel_fuse(t, v, "weighted"),
               lambda: laplacian_fuse(t, v),
               lambda: wavelet_fuse(t, v),
               lambda: classical_guided_fuse(t, v)):
        out = fn()
        assert out.min() >= 0.0 and out.max() <= 255.0


def test_config_validation():
    with pytest.raises(ValueError):
        BaselineConfig(alpha=1.5)
    with pytest.raises(ValueError):
        BaselineConfig(w_thermal=0.8, w_visual=0.8)
    with pytest.raises(ValueError):
        BaselineConfig(pyramid_levels=0)
