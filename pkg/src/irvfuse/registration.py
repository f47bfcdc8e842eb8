"""Geometric registration: ECC affine alignment, feature homography, dense flow.

Warp convention: an AffineWarp (or Homography) is the forward point map of the
aligned content -- a point p in the input image lands at w(p) in the output.
warp_affine therefore samples the input at w^-1(q) for each output pixel q
(inverse mapping), and transform_bbox pushes box corners forward through w.

ecc_align(template, moving) returns w such that warp_affine(moving, w)
overlays the template. Failure to converge is an in-band result, not an
exception; pipelines implement their own pass-through fallback.
"""

import numpy as np
import cv2
from dataclasses import dataclass

from .imgcore import ensure_gray, ensure_same_grid
from .evalbench import BoundingBox, DegenerateBox


class SingularWarp(ValueError):
    """Raised when a warp matrix cannot be inverted."""


class InsufficientMatches(RuntimeError):
    """Raised when feature matching yields fewer than 4 RANSAC inliers."""


@dataclass(frozen=True)
class AffineWarp:
    """2x3 forward affine map; m is a (2, 3) float array."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64).reshape(2, 3)
        if not np.all(np.isfinite(m)):
            raise SingularWarp("affine parameters must be finite")
        object.__setattr__(self, "m", m)

    @staticmethod
    def identity() -> "AffineWarp":
        return AffineWarp(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    @staticmethod
    def translation(tx: float, ty: float) -> "AffineWarp":
        return AffineWarp(np.array([[1.0, 0.0, tx], [0.0, 1.0, ty]]))

    def inverse(self) -> "AffineWarp":
        a = self.m[:, :2]
        det = float(np.linalg.det(a))
        if abs(det) < 1e-12:
            raise SingularWarp(f"affine matrix is singular (det={det:g})")
        ainv = np.linalg.inv(a)
        return AffineWarp(np.hstack([ainv, -ainv @ self.m[:, 2:3]]))

    def compose(self, other: "AffineWarp") -> "AffineWarp":
        """self o other: apply `other` first, then `self`."""
        a = np.vstack([self.m, [0.0, 0.0, 1.0]])
        b = np.vstack([other.m, [0.0, 0.0, 1.0]])
        return AffineWarp((a @ b)[:2])

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        return pts @ self.m[:, :2].T + self.m[:, 2]


@dataclass(frozen=True)
class Homography:
    """3x3 forward projective map, normalized so h[2, 2] = 1."""

    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(h)):
            raise SingularWarp("homography parameters must be finite")
        if abs(np.linalg.det(h)) < 1e-12:
            raise SingularWarp("homography is singular")
        object.__setattr__(self, "h", h / h[2, 2])

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        p = np.hstack([pts, np.ones((len(pts), 1))]) @ self.h.T
        return p[:, :2] / p[:, 2:3]


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement (dx, dy) on the reference grid; shape (H, W, 2)."""

    flow: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.flow, dtype=np.float32)
        if f.ndim != 3 or f.shape[2] != 2:
            raise ValueError(f"flow must have shape (H, W, 2), got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError("flow must be finite everywhere")
        object.__setattr__(self, "flow", f)


@dataclass(frozen=True)
class RegistrationConfig:
    max_iterations: int = 100
    termination_eps: float = 1e-5
    mode: str = "ecc_affine"  # ecc_affine | feature_homography | ecc_then_flow
    pyramid_levels: int = 3
    ransac_iters: int = 2000
    ransac_thresh: float = 3.0
    ransac_seed: int = 0
    flow_cap: float = 16.0
    # When set, ECC solves on images downscaled so max(H, W) <= solve_max_dim
    # and rescales the warp; sub-pixel residuals grow by the scale factor.
    solve_max_dim: int | None = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.termination_eps <= 0:
            raise ValueError("termination_eps must be > 0")
        if self.mode not in ("ecc_affine", "feature_homography", "ecc_then_flow"):
            raise ValueError(f"unknown registration mode: {self.mode!r}")


@dataclass(frozen=True)
class EccResult:
    """Outcome of ecc_align. converged=False is the in-band NotConverged signal."""

    warp: AffineWarp | None
    converged: bool
    correlation: float
    iterations: int


# Per-level pre-smoothing widens the correlation basin so coarse pyramid
# levels capture larger motions; the optimum of the smoothed objective
# coincides with the unsmoothed one for affine motion.
ECC_LEVEL_SMOOTH_SIGMA = 1.5


_GRID_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _coord_grids(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    key = (h, w)
    if key not in _GRID_CACHE:
        xs, ys = np.meshgrid(np.arange(w, dtype=np.float64),
                             np.arange(h, dtype=np.float64))
        if len(_GRID_CACHE) > 32:
            _GRID_CACHE.clear()
        _GRID_CACHE[key] = (xs, ys)
    return _GRID_CACHE[key]


def _sample(img: np.ndarray, m_sample: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """out(q) = img(m_sample @ q): m_sample maps output coords to source coords."""
    h, w = shape
    return cv2.warpAffine(img, m_sample.astype(np.float64), (w, h),
                          flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                          borderMode=cv2.BORDER_CONSTANT, borderValue=0.0)


def _ecc_level(template: np.ndarray, moving: np.ndarray, m_sample: np.ndarray,
               max_iter: int, eps: float) -> tuple[np.ndarray, float | None, int]:
    """One pyramid level of forward-additive Gauss-Newton on the correlation
    objective. Returns (m_sample, correlation or None on failure, iterations)."""
    h, w = template.shape
    gy, gx = np.gradient(moving)
    ones = np.ones_like(moving)
    xs, ys = _coord_grids(h, w)
    rho_prev = None
    for it in range(1, max_iter + 1):
        warped = _sample(moving, m_sample, (h, w))
        mask = _sample(ones, m_sample, (h, w)) > 0.999
        n = int(mask.sum())
        if n < 36:
            return m_sample, None, it
        m = mask.astype(np.float64)
        mean_t = float((template * m).sum()) / n
        mean_w = float((warped * m).sum()) / n
        tbar = (template - mean_t) * m
        wbar = (warped - mean_w) * m
        gxw = _sample(gx, m_sample, (h, w)) * m
        gyw = _sample(gy, m_sample, (h, w)) * m
        G = np.stack([
            (gxw * xs).ravel(), (gxw * ys).ravel(), gxw.ravel(),
            (gyw * xs).ravel(), (gyw * ys).ravel(), gyw.ravel(),
        ], axis=1)
        G -= (G.sum(axis=0) / n) * m.ravel()[:, None]
        tv = tbar.ravel()
        wv = wbar.ravel()
        tnorm = float(np.linalg.norm(tv))
        wnorm = float(np.linalg.norm(wv))
        if tnorm < 1e-9 or wnorm < 1e-9:
            return m_sample, None, it
        tw = float(tv @ wv)
        rho = tw / (tnorm * wnorm)
        if rho_prev is not None and abs(rho - rho_prev) < eps:
            return m_sample, rho, it
        rho_prev = rho
        H = G.T @ G
        gw = G.T @ wv
        gt = G.T @ tv
        try:
            v1 = np.linalg.solve(H, gw)
            v2 = np.linalg.solve(H, gt)
        except np.linalg.LinAlgError:
            return m_sample, None, it
        num = wnorm * wnorm - float(gw @ v1)
        den = tw - float(gt @ v1)
        if den <= 0:
            # Correlation cannot improve along this direction; treat as failure.
            return m_sample, None, it
        dp = (num / den) * v2 - v1
        m_sample = m_sample + dp.reshape(2, 3)
        if not np.all(np.isfinite(m_sample)):
            return m_sample, None, it
    return m_sample, rho_prev, max_iter


def ecc_align(template: np.ndarray, moving: np.ndarray,
              cfg: RegistrationConfig = RegistrationConfig()) -> EccResult:
    """Estimate the affine warp aligning `moving` onto `template`.

    Maximizes the zero-mean, unit-norm intensity correlation with a
    coarse-to-fine pyramid; each level runs Gauss-Newton until the correlation
    increment drops below cfg.termination_eps or cfg.max_iterations is hit.
    Textureless input or a singular normal system yields converged=False.
    """
    ensure_gray(template, "template")
    ensure_gray(moving, "moving")
    ensure_same_grid(template, moving)
    t = template.astype(np.float64)
    g = moving.astype(np.float64)

    scale_back = 1.0
    if cfg.solve_max_dim is not None:
        long_side = max(t.shape)
        if long_side > cfg.solve_max_dim:
            scale_back = long_side / cfg.solve_max_dim
            new_w = max(32, int(round(t.shape[1] / scale_back)))
            new_h = max(32, int(round(t.shape[0] / scale_back)))
            scale_back = t.shape[1] / new_w
            t = cv2.resize(t, (new_w, new_h), interpolation=cv2.INTER_AREA)
            g = cv2.resize(g, (new_w, new_h), interpolation=cv2.INTER_AREA)

    if float(t.std()) < 1e-6 or float(g.std()) < 1e-6:
        return EccResult(None, False, 0.0, 0)

    m_sample = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    total_iters = 0
    rho = None
    for level in range(cfg.pyramid_levels):
        s = 2 ** (cfg.pyramid_levels - 1 - level)
        h, w = t.shape[0] // s, t.shape[1] // s
        finest = s == 1
        if min(h, w) < 32 and not finest:
            continue
        if finest:
            tl, gl = t, g
        else:
            tl = cv2.resize(t, (w, h), interpolation=cv2.INTER_AREA)
            gl = cv2.resize(g, (w, h), interpolation=cv2.INTER_AREA)
        tl = cv2.GaussianBlur(tl, (0, 0), ECC_LEVEL_SMOOTH_SIGMA)
        gl = cv2.GaussianBlur(gl, (0, 0), ECC_LEVEL_SMOOTH_SIGMA)
        m_lvl = m_sample.copy()
        m_lvl[:, 2] /= s
        m_lvl, rho, iters = _ecc_level(tl, gl, m_lvl, cfg.max_iterations,
                                       cfg.termination_eps)
        total_iters += iters
        m_next = m_lvl.copy()
        m_next[:, 2] *= s
        if rho is None:
            if finest:
                return EccResult(None, False, 0.0, total_iters)
            continue  # keep previous estimate, try the finer level
        m_sample = m_next

    m_sample[:, 2] *= scale_back
    try:
        warp = AffineWarp(m_sample).inverse()
    except SingularWarp:
        return EccResult(None, False, 0.0, total_iters)
    return EccResult(warp, True, float(rho), total_iters)


def _dlt_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray | None:
    """Normalized direct linear transform for >= 4 correspondences."""

    def normalize(pts):
        c = pts.mean(axis=0)
        d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
        if d < 1e-9:
            return None, None
        s = np.sqrt(2.0) / d
        T = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])
        p = np.hstack([pts, np.ones((len(pts), 1))]) @ T.T
        return p[:, :2], T

    ps, Ts = normalize(src)
    pd, Td = normalize(dst)
    if ps is None or pd is None:
        return None
    n = len(src)
    A = np.zeros((2 * n, 9))
    A[0::2, 0:2] = -ps
    A[0::2, 2] = -1.0
    A[0::2, 6:8] = pd[:, 0:1] * ps
    A[0::2, 8] = pd[:, 0]
    A[1::2, 3:5] = -ps
    A[1::2, 5] = -1.0
    A[1::2, 6:8] = pd[:, 1:2] * ps
    A[1::2, 8] = pd[:, 1]
    try:
        _, _, vt = np.linalg.svd(A)
    except np.linalg.LinAlgError:
        return None
    H = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ H @ Ts
    if abs(H[2, 2]) < 1e-12:
        return None
    return H / H[2, 2]


def _project(H: np.ndarray, pts: np.ndarray) -> np.ndarray:
    p = np.hstack([pts, np.ones((len(pts), 1))]) @ H.T
    return p[:, :2] / p[:, 2:3]


def feature_homography(a: np.ndarray, b: np.ndarray,
                       cfg: RegistrationConfig = RegistrationConfig()) -> Homography:
    """Fit a forward homography mapping points of `a` onto `b`.

    ORB corners with binary descriptors, cross-checked Hamming matching,
    sub-pixel corner refinement, then seeded RANSAC (cfg.ransac_iters draws,
    cfg.ransac_thresh px inlier gate) with a least-squares refit on inliers.
    Raises InsufficientMatches when fewer than 4 inliers survive.
    """
    ensure_gray(a, "a")
    ensure_gray(b, "b")
    a8 = np.clip(a, 0, 255).astype(np.uint8)
    b8 = np.clip(b, 0, 255).astype(np.uint8)
    orb = cv2.ORB_create(nfeatures=3000, fastThreshold=8)
    ka, da = orb.detectAndCompute(a8, None)
    kb, db = orb.detectAndCompute(b8, None)
    if da is None or db is None or len(ka) < 4 or len(kb) < 4:
        raise InsufficientMatches("too few detectable corners")
    matcher = cv2.BFMatcher(cv2.NORM_HAMMING, crossCheck=True)
    matches = matcher.match(da, db)
    if len(matches) < 4:
        raise InsufficientMatches(f"only {len(matches)} descriptor matches")
    src = np.array([ka[m.queryIdx].pt for m in matches], dtype=np.float32)
    dst = np.array([kb[m.trainIdx].pt for m in matches], dtype=np.float32)
    crit = (cv2.TERM_CRITERIA_EPS | cv2.TERM_CRITERIA_COUNT, 30, 0.01)
    src = cv2.cornerSubPix(a8, src.reshape(-1, 1, 2), (4, 4), (-1, -1), crit).reshape(-1, 2)
    dst = cv2.cornerSubPix(b8, dst.reshape(-1, 1, 2), (4, 4), (-1, -1), crit).reshape(-1, 2)
    src = src.astype(np.float64)
    dst = dst.astype(np.float64)

    rng = np.random.default_rng(cfg.ransac_seed)
    n = len(src)
    best_inliers = None
    best_count = 0
    for _ in range(cfg.ransac_iters):
        idx = rng.choice(n, 4, replace=False)
        H = _dlt_homography(src[idx], dst[idx])
        if H is None:
            continue
        err = np.linalg.norm(_project(H, src) - dst, axis=1)
        inliers = err < cfg.ransac_thresh
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers
            if count > 0.95 * n:
                break
    if best_inliers is None or best_count < 4:
        raise InsufficientMatches(f"RANSAC kept {best_count} inliers (< 4)")
    # Two refit rounds: re-estimate on inliers, re-gate, refit.
    inliers = best_inliers
    H = None
    for _ in range(2):
        H = _dlt_homography(src[inliers], dst[inliers])
        if H is None:
            raise InsufficientMatches("degenerate inlier configuration")
        err = np.linalg.norm(_project(H, src) - dst, axis=1)
        inliers = err < cfg.ransac_thresh
        if int(inliers.sum()) < 4:
            raise InsufficientMatches("refit lost inliers (< 4)")
    return Homography(H)


def dense_flow_refine(reference: np.ndarray, warped: np.ndarray,
                      cfg: RegistrationConfig = RegistrationConfig()) -> FlowField:
    """Residual per-pixel displacement aligning `warped` to `reference`.

    Pyramidal polynomial-expansion flow; magnitudes are clamped to
    cfg.flow_cap pixels. Constant inputs yield zero flow.
    """
    ensure_gray(reference, "reference")
    ensure_gray(warped, "warped")
    ensure_same_grid(reference, warped)
    r8 = np.clip(reference, 0, 255).astype(np.uint8)
    w8 = np.clip(warped, 0, 255).astype(np.uint8)
    if r8.std() < 1e-6 and w8.std() < 1e-6:
        return FlowField(np.zeros((*reference.shape, 2), dtype=np.float32))
    flow = cv2.calcOpticalFlowFarneback(
        r8, w8, None, pyr_scale=0.5, levels=3, winsize=21,
        iterations=3, poly_n=7, poly_sigma=1.5, flags=0)
    np.clip(flow, -cfg.flow_cap, cfg.flow_cap, out=flow)
    return FlowField(flow)


def apply_flow(img: np.ndarray, flow: FlowField) -> np.ndarray:
    """Resample img at (x + dx, y + dy); out(p) = img(p + flow(p))."""
    h, w = flow.flow.shape[:2]
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float32),
                         np.arange(h, dtype=np.float32))
    map_x = xs + flow.flow[..., 0]
    map_y = ys + flow.flow[..., 1]
    src = img.astype(np.float32) if img.dtype not in (np.float32, np.float64) else img
    return cv2.remap(src, map_x, map_y, cv2.INTER_LINEAR,
                     borderMode=cv2.BORDER_CONSTANT, borderValue=0.0)


def warp_affine(img: np.ndarray, w: AffineWarp, out_w: int, out_h: int,
                return_mask: bool = False):
    """Apply a forward affine warp by inverse-mapped bilinear sampling.

    Out-of-bounds samples fill with 0. With return_mask=True also returns the
    boolean validity mask of fully in-bounds output pixels.
    """
    m_sample = w.inverse().m  # output coord -> source coord
    if img.dtype not in (np.float32, np.float64):
        img = img.astype(np.float32)
    if np.allclose(w.m, AffineWarp.identity().m) and (out_w, out_h) == (img.shape[1], img.shape[0]):
        out = img.copy()
        mask = np.ones(img.shape[:2], dtype=bool)
    else:
        out = cv2.warpAffine(img, m_sample, (out_w, out_h),
                             flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                             borderMode=cv2.BORDER_CONSTANT, borderValue=0.0)
        ones = np.ones(img.shape[:2], dtype=np.float32)
        mask = cv2.warpAffine(ones, m_sample, (out_w, out_h),
                              flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                              borderMode=cv2.BORDER_CONSTANT, borderValue=0.0) > 0.999
    if return_mask:
        return out, mask
    return out


def warp_homography(img: np.ndarray, hom: Homography, out_w: int, out_h: int,
                    return_mask: bool = False):
    """Apply a forward homography by inverse-mapped bilinear sampling."""
    h_sample = np.linalg.inv(hom.h)
    if img.dtype not in (np.float32, np.float64):
        img = img.astype(np.float32)
    out = cv2.warpPerspective(img, h_sample, (out_w, out_h),
                              flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                              borderMode=cv2.BORDER_CONSTANT, borderValue=0.0)
    if return_mask:
        ones = np.ones(img.shape[:2], dtype=np.float32)
        mask = cv2.warpPerspective(ones, h_sample, (out_w, out_h),
                                   flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                                   borderMode=cv2.BORDER_CONSTANT, borderValue=0.0) > 0.999
        return out, mask
    return out


def transform_bbox(box, w: AffineWarp, out_w: int | None = None,
                   out_h: int | None = None):
    """Axis-aligned envelope of the four box corners pushed through w.

    Clips to the output grid when out_w/out_h are given; a box that clips to
    zero area raises DegenerateBox. Accepts and returns evalbench.BoundingBox.
    """
    corners = np.array([
        [box.xmin, box.ymin], [box.xmax, box.ymin],
        [box.xmin, box.ymax], [box.xmax, box.ymax],
    ], dtype=np.float64)
    mapped = w.apply_points(corners)
    xmin, ymin = mapped.min(axis=0)
    xmax, ymax = mapped.max(axis=0)
    if out_w is not None:
        xmin = min(max(xmin, 0.0), out_w)
        xmax = min(max(xmax, 0.0), out_w)
    if out_h is not None:
        ymin = min(max(ymin, 0.0), out_h)
        ymax = min(max(ymax, 0.0), out_h)
    if xmax <= xmin or ymax <= ymin:
        raise DegenerateBox(f"box degenerates to zero area: ({xmin}, {ymin}, {xmax}, {ymax})")
    return BoundingBox(xmin, ymin, xmax, ymax)


def warp_to_text(w: AffineWarp | Homography) -> str:
    """Serialize a warp as whitespace-separated row-major decimals, one line."""
    vals = w.m.ravel() if isinstance(w, AffineWarp) else w.h.ravel()
    return " ".join(f"{v:.12g}" for v in vals)


def warp_from_text(line: str) -> AffineWarp | Homography:
    """Parse one serialized warp line (6 decimals = affine, 9 = homography)."""
    vals = [float(tok) for tok in line.split()]
    if len(vals) == 6:
        return AffineWarp(np.array(vals).reshape(2, 3))
    if len(vals) == 9:
        return Homography(np.array(vals).reshape(3, 3))
    raise ValueError(f"expected 6 or 9 values per warp line, got {len(vals)}")
