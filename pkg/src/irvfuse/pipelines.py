"""Staged fusion pipelines: a uniform preprocess / fuse / postprocess surface
over the RGIF, RGMAF, and classical baseline methods, consumed by both the
batch fuse command and the latency benchmark (which times each stage).
"""

import numpy as np
from dataclasses import dataclass, field
from typing import Callable

from . import baselines, imgcore, rgif, rgmaf

METHODS = ("rgif", "rgmaf", "alpha", "weighted", "overlay", "laplacian",
           "wavelet", "guided", "ycrcb")


@dataclass(frozen=True)
class FusionOutput:
    image: np.ndarray
    used_fallback: bool = False
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class FusionPipeline:
    """Three-stage fusion callable; every stage is pure."""

    name: str
    preprocess: Callable[[np.ndarray, np.ndarray], dict]
    fuse: Callable[[dict], object]
    postprocess: Callable[[dict, object], FusionOutput]

    def run(self, thermal: np.ndarray, visual: np.ndarray) -> FusionOutput:
        state = self.preprocess(thermal, visual)
        return self.postprocess(state, self.fuse(state))


def _rgif_pipeline(cfg: rgif.RgifConfig) -> FusionPipeline:
    def post(state, result):
        final = rgif.finish(state, result, cfg)
        return FusionOutput(image=final.fused, used_fallback=final.used_fallback)

    return FusionPipeline(
        name="rgif",
        preprocess=lambda t, v: rgif.prepare(t, v, cfg),
        fuse=lambda state: rgif.fuse_core(state, cfg),
        postprocess=post,
    )


def _rgmaf_pipeline(cfg: rgmaf.RgmafConfig) -> FusionPipeline:
    def post(state, result):
        final = rgmaf.finish(state, result, cfg)
        diags = {
            "w_thermal": final.weights.w_thermal,
            "w_visual": final.weights.w_visual,
            "w_visual_gated": final.weights.w_visual_gated,
            "reliability": final.reliability.r,
        }
        return FusionOutput(image=final.fused, used_fallback=final.used_fallback,
                            diagnostics=diags)

    return FusionPipeline(
        name="rgmaf",
        preprocess=lambda t, v: rgmaf.prepare(t, v, cfg),
        fuse=lambda state: rgmaf.fuse_core(state, cfg),
        postprocess=post,
    )


def _baseline_pipeline(method: str, cfg: baselines.BaselineConfig) -> FusionPipeline:
    color_visual = method in ("overlay", "ycrcb")

    def pre(thermal, visual):
        imgcore.ensure_gray(thermal, "thermal")
        imgcore.ensure_color(visual, "visual")
        h, w = thermal.shape
        if color_visual:
            vis = imgcore.resample_bilinear(visual, w, h)
        else:
            vis = imgcore.resample_bilinear(imgcore.to_grayscale(visual), w, h)
        return {"thermal": thermal, "visual": vis}

    def core(state):
        t, v = state["thermal"], state["visual"]
        if method in ("alpha", "weighted"):
            return baselines.pixel_fuse(t, v, method, cfg)
        if method == "overlay":
            return baselines.overlay_fuse(t, v, cfg)
        if method == "laplacian":
            return baselines.laplacian_fuse(t, v, cfg)
        if method == "wavelet":
            return baselines.wavelet_fuse(t, v, cfg)
        if method == "guided":
            return baselines.classical_guided_fuse(t, v, cfg)
        if method == "ycrcb":
            return baselines.ycrcb_fuse(t, v, cfg)
        raise ValueError(f"unknown baseline method: {method!r}")

    def post(state, raw):
        return FusionOutput(image=imgcore.clip_intensity(raw))

    return FusionPipeline(name=method, preprocess=pre, fuse=core, postprocess=post)


def build_pipeline(method: str,
                   rgif_cfg: rgif.RgifConfig | None = None,
                   rgmaf_cfg: rgmaf.RgmafConfig | None = None,
                   baseline_cfg: baselines.BaselineConfig | None = None) -> FusionPipeline:
    if method == "rgif":
        return _rgif_pipeline(rgif_cfg or rgif.RgifConfig())
    if method == "rgmaf":
        return _rgmaf_pipeline(rgmaf_cfg or rgmaf.RgmafConfig())
    if method in METHODS:
        return _baseline_pipeline(method, baseline_cfg or baselines.BaselineConfig())
    raise ValueError(f"unknown fusion method: {method!r} (expected one of {METHODS})")
