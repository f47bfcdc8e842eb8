"""Reliability-gated modality-attention fusion.

Combines a thermal frame with a registered visual frame in the luminance
domain. Per-pixel gradient-energy maps drive a two-way softmax attention
(thermal bias beta, temperature T); the visual weight is further gated by a
reliability map r = smooth(NCC * edge-consistency) so mis-registered regions
contribute nothing; fusion adds reliability-weighted, clipped visual detail
on top of the thermal base-detail stack and never darkens the thermal input.

The energy estimator here is deterministic local gradient energy; it stands in
for learned feature energies behind the same local_energy contract.
"""

import numpy as np
import cv2
from dataclasses import dataclass, field

from . import imgcore
from .imgcore import ensure_gray, ensure_color, ensure_same_grid
from .registration import (
    AffineWarp,
    Homography,
    InsufficientMatches,
    RegistrationConfig,
    apply_flow,
    dense_flow_refine,
    ecc_align,
    feature_homography,
    warp_affine,
    warp_homography,
)


class InvalidTemperature(ValueError):
    """Raised when the softmax temperature is not positive."""


@dataclass(frozen=True)
class RgmafConfig:
    beta: float = 0.0
    temperature: float = 1.0
    energy_window: int = 11
    ncc_window: int = 11
    gate_smooth_sigma: float = 2.0
    base_sigma: float = 4.0
    detail_clip_k: float = 2.5
    edge_band: int = 8
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)

    def __post_init__(self):
        if self.temperature <= 0:
            raise InvalidTemperature("temperature must be > 0")
        for name in ("energy_window", "ncc_window"):
            v = getattr(self, name)
            if v < 3 or v % 2 == 0:
                raise ValueError(f"{name} must be odd and >= 3")
        if self.detail_clip_k <= 0:
            raise ValueError("detail_clip_k must be > 0")
        if self.edge_band < 0:
            raise ValueError("edge_band must be >= 0")


@dataclass(frozen=True)
class WeightMaps:
    """Per-pixel modality weights in [0, 1]; w_thermal + w_visual = 1."""

    w_thermal: np.ndarray
    w_visual: np.ndarray
    w_visual_gated: np.ndarray


@dataclass(frozen=True)
class ReliabilityMap:
    """Per-pixel reliability r in [0, 1]."""

    r: np.ndarray


@dataclass(frozen=True)
class BaseDetail:
    """Gaussian base layer and signed residual detail; base + detail = source."""

    base: np.ndarray
    detail: np.ndarray


@dataclass(frozen=True)
class RgmafResult:
    fused: np.ndarray
    weights: WeightMaps
    reliability: ReliabilityMap
    used_fallback: bool
    warp: AffineWarp | Homography | None


def _box_mean(img: np.ndarray, window: int) -> np.ndarray:
    return cv2.boxFilter(img, -1, (window, window), normalize=True,
                         borderType=cv2.BORDER_REPLICATE)


def local_energy(img: np.ndarray, window: int = 11) -> np.ndarray:
    """Windowed mean squared gradient magnitude, max-normalized to [0, 1]."""
    ensure_gray(img)
    gx, gy = imgcore.gradient(img)
    e = _box_mean(gx * gx + gy * gy, window)
    peak = float(e.max())
    if peak <= 0:
        return np.zeros_like(e)
    return e / peak


def attention_weights(e_thermal: np.ndarray, e_visual: np.ndarray,
                      beta: float = 0.0, temperature: float = 1.0) -> WeightMaps:
    """Two-way per-pixel softmax over ((E_t + beta)/T, E_v/T), ungated."""
    if temperature <= 0:
        raise InvalidTemperature("temperature must be > 0")
    ensure_same_grid(e_thermal, e_visual)
    # softmax of two logits == logistic of their difference; clamping the
    # exponent keeps beta sweeps overflow-free.
    d = (e_visual - (e_thermal + beta)) / temperature
    w_t = 1.0 / (1.0 + np.exp(np.clip(d, -500.0, 500.0)))
    w_v = 1.0 - w_t
    return WeightMaps(w_thermal=w_t, w_visual=w_v, w_visual_gated=w_v.copy())


def local_ncc(a: np.ndarray, b: np.ndarray, window: int = 11) -> np.ndarray:
    """Per-window zero-mean normalized cross-correlation in [-1, 1].

    Windows where either patch variance falls below 1e-9 return 0.
    """
    ensure_gray(a)
    ensure_gray(b)
    ensure_same_grid(a, b)
    dtype = np.result_type(a.dtype, b.dtype, np.float32)
    a = a.astype(dtype, copy=False)
    b = b.astype(dtype, copy=False)
    mean_a = _box_mean(a, window)
    mean_b = _box_mean(b, window)
    var_a = _box_mean(a * a, window) - mean_a * mean_a
    var_b = _box_mean(b * b, window) - mean_b * mean_b
    cov = _box_mean(a * b, window) - mean_a * mean_b
    ok = (var_a >= 1e-9) & (var_b >= 1e-9)
    denom = np.sqrt(np.where(ok, var_a * var_b, 1.0))
    ncc = np.where(ok, cov / denom, 0.0)
    return np.clip(ncc, -1.0, 1.0)


def edge_consistency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """|cos| of the gradient-orientation difference, scaled by the per-pixel
    gradient-magnitude ratio min(|ga|, |gb|) / max(|ga|, |gb|); flat pixels
    contribute 0. Values lie in [0, 1]."""
    ensure_gray(a)
    ensure_gray(b)
    ensure_same_grid(a, b)
    gxa, gya = imgcore.gradient(a)
    gxb, gyb = imgcore.gradient(b)
    mag_a = np.hypot(gxa, gya)
    mag_b = np.hypot(gxb, gyb)
    dot = np.abs(gxa * gxb + gya * gyb)
    prod = mag_a * mag_b
    hi = np.maximum(mag_a, mag_b)
    lo = np.minimum(mag_a, mag_b)
    ok = (prod > 1e-12) & (hi > 1e-12)
    cos = np.where(ok, dot / np.where(ok, prod, 1.0), 0.0)
    ratio = np.where(ok, lo / np.where(ok, hi, 1.0), 0.0)
    return np.clip(cos * ratio, 0.0, 1.0)


def reliability_gate(ncc: np.ndarray, cons: np.ndarray,
                     sigma: float = 2.0) -> ReliabilityMap:
    """smooth(max(ncc, 0) * cons) clamped to [0, 1]; anti-correlated content
    is floored at 0 before the product so it cannot inject detail."""
    ensure_same_grid(ncc, cons)
    r = np.maximum(ncc, 0.0) * cons
    if sigma > 0:
        r = imgcore.gaussian_blur(r, sigma)
    return ReliabilityMap(np.clip(r, 0.0, 1.0))


def base_detail(img: np.ndarray, sigma: float = 4.0) -> BaseDetail:
    """Gaussian base layer plus exact signed residual."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    base = imgcore.gaussian_blur(img, sigma)
    return BaseDetail(base=base, detail=img - base)


def _register_visual(thermal: np.ndarray, vis_gray: np.ndarray,
                     cfg: RegistrationConfig):
    """Returns (warped visual, validity mask, warp or None, used_fallback)."""
    h, w = thermal.shape
    if cfg.mode == "feature_homography":
        try:
            hom = feature_homography(vis_gray, thermal, cfg)
        except InsufficientMatches:
            return vis_gray, np.ones((h, w), dtype=bool), None, True
        warped, mask = warp_homography(vis_gray, hom, w, h, return_mask=True)
        return warped, mask, hom, False

    res = ecc_align(thermal, vis_gray, cfg)
    if not res.converged:
        return vis_gray, np.ones((h, w), dtype=bool), None, True
    warped, mask = warp_affine(vis_gray, res.warp, w, h, return_mask=True)
    if cfg.mode == "ecc_then_flow":
        flow = dense_flow_refine(thermal, warped, cfg)
        warped = apply_flow(warped, flow)
        mask = apply_flow(mask.astype(np.float32), flow) > 0.999
    return warped, mask, res.warp, False


def prepare(thermal: np.ndarray, visual: np.ndarray,
            cfg: RgmafConfig = RgmafConfig()) -> dict:
    """Preprocessing stage: bring the visual grayscale onto the thermal grid."""
    ensure_gray(thermal, "thermal")
    ensure_color(visual, "visual")
    h, w = thermal.shape
    vis_gray = imgcore.to_grayscale(visual)
    vis_gray = imgcore.resample_bilinear(vis_gray, w, h)
    return {"thermal": thermal, "visual_gray": vis_gray}


def fuse_core(state: dict, cfg: RgmafConfig = RgmafConfig()) -> RgmafResult:
    """Core stage: registration, attention, reliability gating, base-detail
    fusion with the non-darkening floor. The fused field is the luminance."""
    thermal = state["thermal"]
    vis_gray = state["visual_gray"]

    v_w, mask, warp, used_fallback = _register_visual(thermal, vis_gray,
                                                      cfg.registration)

    e_t = local_energy(thermal, cfg.energy_window)
    e_v = local_energy(v_w, cfg.energy_window)
    weights = attention_weights(e_t, e_v, cfg.beta, cfg.temperature)

    ncc = local_ncc(thermal, v_w, cfg.ncc_window)
    cons = edge_consistency(thermal, v_w)
    rel = reliability_gate(ncc, cons, cfg.gate_smooth_sigma)

    w_gated = weights.w_visual * rel.r
    if not mask.all():
        band = 2 * cfg.edge_band + 1
        eroded = cv2.erode(mask.astype(np.uint8), np.ones((band, band), np.uint8))
        w_gated = w_gated * eroded
    weights = WeightMaps(w_thermal=weights.w_thermal,
                         w_visual=weights.w_visual,
                         w_visual_gated=w_gated)

    bd_t = base_detail(thermal, cfg.base_sigma)
    bd_v = base_detail(v_w, cfg.base_sigma)
    d_std = float(bd_v.detail.std())
    bound = cfg.detail_clip_k * d_std
    d_clip = np.clip(bd_v.detail, -bound, bound)

    y = bd_t.base + (bd_t.detail + w_gated * d_clip)
    y = np.maximum(y, thermal)  # non-darkening: fused luminance >= thermal
    return RgmafResult(fused=y, weights=weights, reliability=rel,
                       used_fallback=used_fallback, warp=warp)


def finish(state: dict, result: RgmafResult,
           cfg: RgmafConfig = RgmafConfig()) -> RgmafResult:
    """Postprocessing stage: clip and replicate to three identical channels."""
    y = imgcore.clip_intensity(result.fused)
    fused = np.repeat(y[..., None], 3, axis=2)
    return RgmafResult(fused=fused, weights=result.weights,
                       reliability=result.reliability,
                       used_fallback=result.used_fallback, warp=result.warp)


def rgmaf_fuse(thermal: np.ndarray, visual: np.ndarray,
               cfg: RgmafConfig = RgmafConfig()) -> RgmafResult:
    """Fuse thermal and visual frames; output replicates the fused luminance
    across three identical channels. Diagnostics carry the attention weights
    (with gating applied) and the reliability map."""
    state = prepare(thermal, visual, cfg)
    return finish(state, fuse_core(state, cfg), cfg)
