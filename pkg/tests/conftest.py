"""Shared synthetic-scene generators for the test suite."""

import numpy as np
import cv2
import pytest

cv2.setNumThreads(1)


def textured(h, w, rng, smooth=2.0, full_range=True, dtype=np.float64):
    """Band-limited random texture; full_range stretches it to span [0, 255]."""
    img = cv2.GaussianBlur(rng.random((h, w)) * 255.0, (0, 0), smooth)
    if full_range:
        img = (img - img.min()) / (img.max() - img.min()) * 255.0
    return img.astype(dtype)


def blob_scene(h, w, rng, blobs=40):
    """Sparse gaussian blobs on a dark field; corner-friendly structure."""
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((h, w))
    for _ in range(blobs):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        r = rng.uniform(2.0, 10.0)
        v = rng.uniform(60, 255)
        img += v * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * r * r))
    img = (img - img.min()) / (img.max() - img.min() + 1e-12) * 255.0
    return img


def paired_scene(h, w, rng, smooth=2.0):
    """Correlated thermal/visual pair: shared structure, modality-specific
    gain/offset, extra visual-only detail, and independent noise."""
    base = textured(h, w, rng, smooth=smooth)
    fine = textured(h, w, rng, smooth=1.0, full_range=False)
    thermal = np.clip(0.8 * base + 20.0 + rng.normal(0, 2.0, (h, w)), 0, 255)
    vis_gray = np.clip(0.9 * base + 0.25 * fine + 10.0
                       + rng.normal(0, 2.0, (h, w)), 0, 255)
    tint = np.array([1.0, 0.85, 0.7])
    visual = np.clip(vis_gray[..., None] * tint, 0, 255)
    return thermal, visual


def replicate3(gray):
    return np.repeat(np.asarray(gray)[..., None], 3, axis=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
