"""Registration-aware guided image fusion.

The guided filter models each output window as an affine function of the
guidance image: q_i = a_k I_i + b_k with a_k = cov(I, p) / (var(I) + eps) and
b_k = mean(p) - a_k mean(I), computed per window with O(N) box filters and
averaged over all windows covering each pixel. The fusion pipeline registers
the visual frame onto the thermal grid with ECC and guides the thermal input
with the visual grayscale.
"""

import numpy as np
import cv2
from dataclasses import dataclass, field

from . import imgcore
from .imgcore import ensure_gray, ensure_color, ensure_same_grid
from .registration import AffineWarp, RegistrationConfig, ecc_align, warp_affine

# Below this, a window is treated as zero-variance: a_k = 0, b_k = mean(p)
# (the eps -> 0+ limit; keeps eps = 0.0 free of NaNs).
VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class GuidedFilterParams:
    """radius: box half-width (17x17 support at the default 8); epsilon:
    intensity^2 regularizer; subsample > 1 evaluates the window statistics on
    a decimated grid (same output contract, approximate, for throughput)."""

    radius: int = 8
    epsilon: float = 0.0
    subsample: int = 1

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError("radius must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.subsample < 1:
            raise ValueError("subsample must be >= 1")


@dataclass(frozen=True)
class RgifConfig:
    guided: GuidedFilterParams = field(default_factory=GuidedFilterParams)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    upsample_factor: float = 2.0
    output_at_native_thermal_grid: bool = True
    # Sensitivity knob: the normalize/resample order is not pinned by the
    # method; default normalizes after resampling.
    normalize_before_resample: bool = False

    def __post_init__(self):
        if self.upsample_factor < 1:
            raise ValueError("upsample_factor must be >= 1")


@dataclass(frozen=True)
class RgifResult:
    fused: np.ndarray
    used_fallback: bool
    warp: AffineWarp | None


def _box(img: np.ndarray, radius: int) -> np.ndarray:
    k = 2 * radius + 1
    return cv2.boxFilter(img, -1, (k, k), normalize=True,
                         borderType=cv2.BORDER_REPLICATE)


def guided_filter(guide: np.ndarray, src: np.ndarray,
                  params: GuidedFilterParams = GuidedFilterParams()) -> np.ndarray:
    """Filter `src` (p) guided by `guide` (I); output is unclipped.

    With subsample == 1 this is the exact windowed computation; larger values
    evaluate a, b on a decimated grid and bilinearly upsample their means.
    """
    ensure_gray(guide, "guide")
    ensure_gray(src, "src")
    ensure_same_grid(guide, src)
    dtype = np.result_type(guide.dtype, src.dtype, np.float32)
    I = guide.astype(dtype, copy=False)
    p = src.astype(dtype, copy=False)

    s = params.subsample
    if s > 1:
        h, w = I.shape
        hs, ws = max(4, h // s), max(4, w // s)
        Is = cv2.resize(I, (ws, hs), interpolation=cv2.INTER_AREA)
        ps = cv2.resize(p, (ws, hs), interpolation=cv2.INTER_AREA)
        r = max(1, int(round(params.radius / s)))
    else:
        Is, ps, r = I, p, params.radius

    mean_I = _box(Is, r)
    mean_p = _box(ps, r)
    corr_I = _box(Is * Is, r)
    corr_Ip = _box(Is * ps, r)
    var_I = corr_I - mean_I * mean_I
    cov_Ip = corr_Ip - mean_I * mean_p

    denom = var_I + params.epsilon
    valid = denom >= VAR_FLOOR
    a = np.where(valid, cov_Ip / np.where(valid, denom, 1.0), 0.0)
    b = mean_p - a * mean_I

    mean_a = _box(a, r)
    mean_b = _box(b, r)
    if s > 1:
        h, w = I.shape
        mean_a = cv2.resize(mean_a, (w, h), interpolation=cv2.INTER_LINEAR)
        mean_b = cv2.resize(mean_b, (w, h), interpolation=cv2.INTER_LINEAR)
    return mean_a * I + mean_b


def prepare(thermal: np.ndarray, visual: np.ndarray,
            cfg: RgifConfig = RgifConfig()) -> dict:
    """Preprocessing stage: working-grid resampling, grayscale, normalization."""
    ensure_gray(thermal, "thermal")
    ensure_color(visual, "visual")

    th_h, th_w = thermal.shape
    work_w = int(round(th_w * cfg.upsample_factor))
    work_h = int(round(th_h * cfg.upsample_factor))

    th = thermal
    if cfg.normalize_before_resample:
        th = imgcore.min_max_normalize(th)
    if (work_w, work_h) != (th_w, th_h):
        th = imgcore.resample_bilinear(th, work_w, work_h)
    if not cfg.normalize_before_resample:
        th = imgcore.min_max_normalize(th)

    # Grayscale first, then resample: both maps are linear, so the order
    # only affects rounding, and the single-channel resize is far cheaper.
    vis_gray = imgcore.to_grayscale(visual)
    if vis_gray.shape != (work_h, work_w):
        vis_gray = imgcore.resample_bilinear(vis_gray, work_w, work_h)
    return {"thermal": th, "visual_gray": vis_gray,
            "native": (th_w, th_h), "work": (work_w, work_h)}


def fuse_core(state: dict, cfg: RgifConfig = RgifConfig()) -> RgifResult:
    """Core stage: ECC alignment (pass-through fallback) plus guided filtering.
    The fused image is still on the working grid and unclipped."""
    th = state["thermal"]
    vis_gray = state["visual_gray"]
    work_w, work_h = state["work"]

    used_fallback = False
    warp = None
    res = ecc_align(th, vis_gray, cfg.registration)
    if res.converged:
        warp = res.warp
        vis_gray = warp_affine(vis_gray, warp, work_w, work_h)
    else:
        used_fallback = True

    fused = guided_filter(vis_gray, th, cfg.guided)
    return RgifResult(fused=fused, used_fallback=used_fallback, warp=warp)


def finish(state: dict, result: RgifResult,
           cfg: RgifConfig = RgifConfig()) -> RgifResult:
    """Postprocessing stage: clip to [0, 255] and return to the native grid."""
    fused = imgcore.clip_intensity(result.fused)
    th_w, th_h = state["native"]
    if cfg.output_at_native_thermal_grid and state["work"] != state["native"]:
        fused = imgcore.resample_bilinear(fused, th_w, th_h)
        fused = imgcore.clip_intensity(fused)
    return RgifResult(fused=fused, used_fallback=result.used_fallback,
                      warp=result.warp)


def rgif_fuse(thermal: np.ndarray, visual: np.ndarray,
              cfg: RgifConfig = RgifConfig()) -> RgifResult:
    """Fuse a thermal frame with a visual frame on the thermal grid.

    Stages: upsample the thermal by cfg.upsample_factor; bring the visual
    grayscale onto that working grid; min-max normalize the thermal; align the
    visual with ECC (pass-through on non-convergence, flagged in the result);
    guided-filter the thermal with the visual as guide; clip to [0, 255]; and
    optionally return to the native thermal grid.
    """
    state = prepare(thermal, visual, cfg)
    return finish(state, fuse_core(state, cfg), cfg)
