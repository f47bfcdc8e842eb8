"""Classical fusion baselines: pixel blends, pseudo-color overlay, Laplacian
pyramid, Haar wavelet, guided-filter base/detail, YCrCb luminance replacement,
and decision-level box merging.

All pixel-level methods require inputs already on a common grid; callers
resize the visual frame to the thermal grid first. Detail coefficients fuse by
max-absolute selection, low-frequency content by averaging.
"""

import numpy as np
from dataclasses import dataclass

from . import imgcore
from .imgcore import ensure_gray, ensure_color, ensure_same_grid, DimensionMismatch
from .rgif import GuidedFilterParams, guided_filter
from .evalbench import Detection, iou


@dataclass(frozen=True)
class BaselineConfig:
    alpha: float = 0.5
    w_thermal: float = 0.5
    w_visual: float = 0.5
    pyramid_levels: int = 4
    wavelet_levels: int = 2
    overlay_colormap: str = "ironbow"
    decision_iou_thr: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.w_thermal < 0 or self.w_visual < 0 or \
                abs(self.w_thermal + self.w_visual - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
        if self.pyramid_levels < 1 or self.wavelet_levels < 1:
            raise ValueError("levels must be >= 1")
        if not 0.0 <= self.decision_iou_thr <= 1.0:
            raise ValueError("decision_iou_thr must be in [0, 1]")


def _build_ironbow() -> np.ndarray:
    """Fixed 256x3 pseudo-color ramp: black -> blue -> magenta -> orange ->
    yellow -> white, linearly interpolated between anchor colors."""
    anchors = np.array([
        [0.0, 0, 0, 0],
        [0.2, 32, 0, 128],
        [0.4, 160, 0, 160],
        [0.6, 255, 96, 0],
        [0.8, 255, 208, 0],
        [1.0, 255, 255, 255],
    ])
    t = np.linspace(0.0, 1.0, 256)
    ramp = np.stack([np.interp(t, anchors[:, 0], anchors[:, 1 + c]) for c in range(3)],
                    axis=1)
    return ramp


IRONBOW_RAMP = _build_ironbow()


def _select_max_abs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.where(np.abs(a) >= np.abs(b), a, b)


def pixel_fuse(t: np.ndarray, v: np.ndarray, method: str = "alpha",
               cfg: BaselineConfig = BaselineConfig()) -> np.ndarray:
    """alpha: F = a*t + (1-a)*v; weighted: F = w_t*t + w_v*v."""
    ensure_gray(t, "thermal")
    ensure_gray(v, "visual")
    if t.shape != v.shape:
        raise DimensionMismatch(f"grids differ: {t.shape} vs {v.shape}")
    if method == "alpha":
        out = cfg.alpha * t + (1.0 - cfg.alpha) * v
    elif method == "weighted":
        out = cfg.w_thermal * t + cfg.w_visual * v
    else:
        raise ValueError(f"unknown pixel_fuse method: {method!r}")
    return imgcore.clip_intensity(out)


def overlay_fuse(t: np.ndarray, v: np.ndarray,
                 cfg: BaselineConfig = BaselineConfig()) -> np.ndarray:
    """Thermal mapped through the fixed pseudo-color ramp, alpha-composited
    (0.5) over the visual frame."""
    ensure_gray(t, "thermal")
    ensure_color(v, "visual")
    ensure_same_grid(t, v)
    idx = imgcore.quantize_u8(t)
    colored = IRONBOW_RAMP[idx]
    return imgcore.clip_intensity(0.5 * colored + 0.5 * v)


def _pad_to_multiple(img: np.ndarray, multiple: int) -> tuple[np.ndarray, tuple[int, int]]:
    h, w = img.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw)), mode="edge")
    return img, (h, w)


def _pyr_down(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    return imgcore.resample_bilinear(img, max(1, w // 2), max(1, h // 2))


def _pyr_up(img: np.ndarray, w: int, h: int) -> np.ndarray:
    return imgcore.resample_bilinear(img, w, h)


def _laplacian_pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    """levels detail layers plus the final coarse approximation (last entry)."""
    pyr = []
    cur = img
    for _ in range(levels):
        down = _pyr_down(cur)
        up = _pyr_up(down, cur.shape[1], cur.shape[0])
        pyr.append(cur - up)
        cur = down
    pyr.append(cur)
    return pyr


def _laplacian_reconstruct(pyr: list[np.ndarray]) -> np.ndarray:
    cur = pyr[-1]
    for detail in reversed(pyr[:-1]):
        cur = detail + _pyr_up(cur, detail.shape[1], detail.shape[0])
    return cur


def laplacian_fuse(t: np.ndarray, v: np.ndarray,
                   cfg: BaselineConfig = BaselineConfig()) -> np.ndarray:
    """Coarsest pyramid level averaged; detail levels by max-absolute value."""
    ensure_gray(t, "thermal")
    ensure_gray(v, "visual")
    ensure_same_grid(t, v)
    dtype = np.result_type(t.dtype, v.dtype, np.float32)
    levels = cfg.pyramid_levels
    tp, orig = _pad_to_multiple(t.astype(dtype, copy=False), 2 ** levels)
    vp, _ = _pad_to_multiple(v.astype(dtype, copy=False), 2 ** levels)
    pyr_t = _laplacian_pyramid(tp, levels)
    pyr_v = _laplacian_pyramid(vp, levels)
    fused = [_select_max_abs(a, b) for a, b in zip(pyr_t[:-1], pyr_v[:-1])]
    fused.append(0.5 * (pyr_t[-1] + pyr_v[-1]))
    out = _laplacian_reconstruct(fused)[:orig[0], :orig[1]]
    return imgcore.clip_intensity(out)


def _haar_forward(img: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One orthonormal Haar level: (LL, LH, HL, HH)."""
    s = 1.0 / np.sqrt(2.0)
    lo_r = (img[:, 0::2] + img[:, 1::2]) * s
    hi_r = (img[:, 0::2] - img[:, 1::2]) * s
    ll = (lo_r[0::2] + lo_r[1::2]) * s
    lh = (lo_r[0::2] - lo_r[1::2]) * s
    hl = (hi_r[0::2] + hi_r[1::2]) * s
    hh = (hi_r[0::2] - hi_r[1::2]) * s
    return ll, lh, hl, hh


def _haar_inverse(ll: np.ndarray, lh: np.ndarray, hl: np.ndarray,
                  hh: np.ndarray) -> np.ndarray:
    s = 1.0 / np.sqrt(2.0)
    h2, w2 = ll.shape
    lo_r = np.empty((2 * h2, w2), dtype=ll.dtype)
    hi_r = np.empty((2 * h2, w2), dtype=ll.dtype)
    lo_r[0::2] = (ll + lh) * s
    lo_r[1::2] = (ll - lh) * s
    hi_r[0::2] = (hl + hh) * s
    hi_r[1::2] = (hl - hh) * s
    out = np.empty((2 * h2, 2 * w2), dtype=ll.dtype)
    out[:, 0::2] = (lo_r + hi_r) * s
    out[:, 1::2] = (lo_r - hi_r) * s
    return out


def haar_decompose(img: np.ndarray, levels: int) -> tuple[np.ndarray, list]:
    """Multi-level Haar DWT: final approximation plus per-level detail bands
    ordered coarse to fine."""
    details = []
    cur = img
    for _ in range(levels):
        cur, lh, hl, hh = _haar_forward(cur)
        details.append((lh, hl, hh))
    return cur, list(reversed(details))


def haar_reconstruct(approx: np.ndarray, details: list) -> np.ndarray:
    cur = approx
    for lh, hl, hh in details:
        cur = _haar_inverse(cur, lh, hl, hh)
    return cur


def wavelet_fuse(t: np.ndarray, v: np.ndarray,
                 cfg: BaselineConfig = BaselineConfig()) -> np.ndarray:
    """Haar DWT fusion: approximation averaged, details by max-absolute."""
    ensure_gray(t, "thermal")
    ensure_gray(v, "visual")
    ensure_same_grid(t, v)
    dtype = np.result_type(t.dtype, v.dtype, np.float32)
    levels = cfg.wavelet_levels
    tp, orig = _pad_to_multiple(t.astype(dtype, copy=False), 2 ** levels)
    vp, _ = _pad_to_multiple(v.astype(dtype, copy=False), 2 ** levels)
    approx_t, det_t = haar_decompose(tp, levels)
    approx_v, det_v = haar_decompose(vp, levels)
    approx = 0.5 * (approx_t + approx_v)
    details = [tuple(_select_max_abs(a, b) for a, b in zip(bt, bv))
               for bt, bv in zip(det_t, det_v)]
    out = haar_reconstruct(approx, details)[:orig[0], :orig[1]]
    return imgcore.clip_intensity(out)


def classical_guided_fuse(t: np.ndarray, v: np.ndarray,
                          cfg: BaselineConfig = BaselineConfig()) -> np.ndarray:
    """Self-guided base/detail split for each input; bases averaged, details
    by max-absolute selection."""
    ensure_gray(t, "thermal")
    ensure_gray(v, "visual")
    ensure_same_grid(t, v)
    params = GuidedFilterParams(radius=8, epsilon=0.01)
    base_t = guided_filter(t, t, params)
    base_v = guided_filter(v, v, params)
    detail_t = t - base_t
    detail_v = v - base_v
    out = 0.5 * (base_t + base_v) + _select_max_abs(detail_t, detail_v)
    return imgcore.clip_intensity(out)


def ycrcb_fuse(t: np.ndarray, v: np.ndarray,
               cfg: BaselineConfig = BaselineConfig()) -> np.ndarray:
    """Replace the visual luminance channel with the thermal frame."""
    ensure_gray(t, "thermal")
    ensure_color(v, "visual")
    ensure_same_grid(t, v)
    conv = imgcore.ycrcb(v)
    conv[..., 0] = t
    return imgcore.clip_intensity(imgcore.ycrcb_inverse(conv))


def decision_fuse(preds_a: list[Detection], preds_b: list[Detection],
                  iou_thr: float = 0.5) -> list[Detection]:
    """Union of both prediction lists followed by greedy score-ordered NMS:
    a kept box suppresses any remaining box with IoU > iou_thr."""
    merged = list(preds_a) + list(preds_b)
    order = sorted(range(len(merged)), key=lambda i: (-merged[i].score, i))
    kept: list[Detection] = []
    for i in order:
        cand = merged[i]
        if all(iou(cand.box, k.box) <= iou_thr for k in kept):
            kept.append(cand)
    return kept
