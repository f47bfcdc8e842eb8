"""Core image primitives: color conversion, resampling, filtering, gradients, PNG I/O.

Images are plain numpy arrays with floating intensities in a nominal [0, 255]
range: shape (H, W) for single-channel, (H, W, 3) for RGB. Quantization to
8-bit happens only at file I/O. Border handling is edge-replicate everywhere.
All functions are pure; inputs are never mutated.
"""

import numpy as np
import cv2
from dataclasses import dataclass

cv2.setNumThreads(1)

# BT.601 luma weights, fixed convention for grayscale and YCrCb.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class InvalidChannelCount(ValueError):
    """Raised when an operation receives an image with the wrong channel count."""


class InvalidDimension(ValueError):
    """Raised for non-positive target dimensions."""


class DimensionMismatch(ValueError):
    """Raised when two images expected on the same grid have different shapes."""


@dataclass(frozen=True)
class KernelSpec:
    """Filter kernel description: a box of given radius or a gaussian.

    kind: "box" or "gaussian".
    radius: box half-width in pixels (support is (2*radius+1)^2).
    kernel_size: odd gaussian support in pixels.
    sigma: gaussian standard deviation in pixels.
    """

    kind: str
    radius: int = 0
    kernel_size: int = 0
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("box", "gaussian"):
            raise ValueError(f"unknown kernel kind: {self.kind!r}")
        if self.kind == "box":
            if self.radius < 0:
                raise ValueError("box radius must be >= 0")
        else:
            if self.kernel_size < 1 or self.kernel_size % 2 == 0:
                raise ValueError("gaussian kernel_size must be odd and >= 1")
            if self.sigma <= 0:
                raise ValueError("gaussian sigma must be > 0")


def ensure_gray(img: np.ndarray, name: str = "image") -> np.ndarray:
    if img.ndim != 2:
        raise InvalidChannelCount(f"{name} must be single-channel (H, W), got shape {img.shape}")
    return img


def ensure_color(img: np.ndarray, name: str = "image") -> np.ndarray:
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidChannelCount(f"{name} must be 3-channel (H, W, 3), got shape {img.shape}")
    return img


def ensure_same_grid(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[:2] != b.shape[:2]:
        raise DimensionMismatch(f"grids differ: {a.shape[:2]} vs {b.shape[:2]}")


def _as_float(img: np.ndarray) -> np.ndarray:
    """Promote integer inputs to float32; keep float32/float64 as-is."""
    if img.dtype in (np.float32, np.float64):
        return img
    return img.astype(np.float32)


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """BT.601 luma: 0.299 R + 0.587 G + 0.114 B."""
    ensure_color(img)
    img = _as_float(img)
    weights = np.array([LUMA_WEIGHTS], dtype=img.dtype)
    return cv2.transform(np.ascontiguousarray(img), weights)


def min_max_normalize(img: np.ndarray) -> np.ndarray:
    """Rescale to span [0, 255]; a constant image maps to all zeros."""
    img = _as_float(img)
    lo = float(img.min())
    hi = float(img.max())
    if hi <= lo:
        return np.zeros_like(img)
    scale = img.dtype.type(255.0 / (hi - lo))
    out = img * scale
    out -= img.dtype.type(lo) * scale
    return out


def resample_bilinear(img: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Bilinear resample with half-pixel-center mapping and edge-replicate borders.

    The sample-grid convention: output pixel (x, y) reads the source at
    ((x + 0.5) * w_src / w_dst - 0.5, (y + 0.5) * h_src / h_dst - 0.5) with
    coordinates clamped to the source extent.
    """
    if new_w < 1 or new_h < 1:
        raise InvalidDimension(f"target size must be >= 1, got {new_w}x{new_h}")
    img = _as_float(img)
    h, w = img.shape[:2]
    if new_w == w and new_h == h:
        return img.copy()
    return cv2.resize(img, (new_w, new_h), interpolation=cv2.INTER_LINEAR)


def filter_image(img: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    """Apply a normalized box or gaussian filter with edge-replicate borders.

    The box variant computes exact windowed means in O(N) via running sums;
    the gaussian variant is separable with weights normalized to sum 1.
    Multi-channel images are filtered per channel.
    """
    img = _as_float(img)
    if kernel.kind == "box":
        if kernel.radius == 0:
            return img.copy()
        k = 2 * kernel.radius + 1
        return cv2.boxFilter(img, -1, (k, k), normalize=True,
                             borderType=cv2.BORDER_REPLICATE)
    k1d = gaussian_kernel_1d(kernel.kernel_size, kernel.sigma).astype(img.dtype)
    return cv2.sepFilter2D(img, -1, k1d, k1d, borderType=cv2.BORDER_REPLICATE)


def gaussian_kernel_1d(size: int, sigma: float) -> np.ndarray:
    """Normalized 1-D gaussian weights of odd length `size`."""
    half = size // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian filter with support derived from sigma (odd, ~3 sigma each side)."""
    size = max(3, int(2 * np.ceil(3.0 * sigma) + 1))
    if size % 2 == 0:
        size += 1
    return filter_image(img, KernelSpec(kind="gaussian", kernel_size=size, sigma=sigma))


def gradient(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(gx, gy) by central differences in the interior, one-sided at borders."""
    ensure_gray(img)
    img = _as_float(img)
    gy, gx = np.gradient(img)
    return gx, gy


def ycrcb(img: np.ndarray) -> np.ndarray:
    """RGB -> YCrCb (BT.601, full range, chroma offset 128)."""
    ensure_color(img)
    img = _as_float(img)
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    y = LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b
    cr = (r - y) * 0.713 + 128.0
    cb = (b - y) * 0.564 + 128.0
    return np.stack([y, cr, cb], axis=-1)


def ycrcb_inverse(img: np.ndarray) -> np.ndarray:
    """YCrCb -> RGB, inverse of ycrcb()."""
    ensure_color(img)
    img = _as_float(img)
    y, cr, cb = img[..., 0], img[..., 1], img[..., 2]
    r = y + 1.403 * (cr - 128.0)
    b = y + 1.773 * (cb - 128.0)
    g = (y - LUMA_WEIGHTS[0] * r - LUMA_WEIGHTS[2] * b) / LUMA_WEIGHTS[1]
    return np.stack([r, g, b], axis=-1)


def clip_intensity(img: np.ndarray) -> np.ndarray:
    """Clamp to the nominal [0, 255] range."""
    return np.clip(img, 0.0, 255.0)


def quantize_u8(img: np.ndarray) -> np.ndarray:
    """Clip to [0, 255] and round half away from zero to uint8 (file I/O only)."""
    clipped = np.clip(img, 0.0, 255.0)
    return np.floor(clipped + 0.5).astype(np.uint8)


def load_image(path: str) -> np.ndarray:
    """Read a PNG as float32, RGB for color images.

    8-bit inputs keep their [0, 255] scale; 16-bit thermal inputs are
    min-max normalized to the 8-bit range at load.
    """
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"cannot read image: {path}")
    if raw.ndim == 3 and raw.shape[2] == 4:
        raw = raw[..., :3]
    if raw.dtype == np.uint16:
        img = min_max_normalize(raw.astype(np.float32))
    else:
        img = raw.astype(np.float32)
    if img.ndim == 3:
        img = img[..., ::-1].copy()  # BGR -> RGB
    return img


def save_image(path: str, img: np.ndarray) -> None:
    """Write an image as 8-bit PNG (RGB arrays are stored as color)."""
    u8 = quantize_u8(img)
    if u8.ndim == 3:
        u8 = u8[..., ::-1]  # RGB -> BGR
    if not cv2.imwrite(str(path), u8):
        raise IOError(f"cannot write image: {path}")
