"""Passport-photo preprocessing for aerial whale images.

Pipeline: saturation channel -> histogram valley threshold -> largest connected
component -> second-moment ellipse -> derotate so the body axis is horizontal ->
square crop around the subject -> resize.

Coordinates: ``x`` is the column index and ``y`` the row index (pointing down).
Angles are measured from +x toward +y, i.e. clockwise as displayed. Rotating by
``theta`` maps a point ``p`` (relative to the image centre) to ``R(theta) p``
with ``R = [[cos, -sin], [sin, cos]]``, so an object at angle ``a`` ends up at
``a + theta``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError, SegmentationError

SMOOTH_WINDOW = 9
CLOSING_ITERATIONS = 2
CROP_MARGIN = 0.10


# -- I/O -----------------------------------------------------------------------

def read_image(path) -> np.ndarray:
    """RGB float image ``[h, w, 3]`` in [0, 1] (PNG, JPEG, PPM/PGM, ...)."""
    from PIL import Image

    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: image not found")
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except OSError as e:
        raise DataError(f"{path}: cannot decode image ({e})") from None
    return arr / 255.0


def write_image(path, img):
    """Write a [0, 1] image; 2-D arrays become 8-bit grayscale (PGM for ``.pgm``)."""
    from PIL import Image

    arr = np.clip(np.round(np.asarray(img, dtype=np.float64) * 255), 0, 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr, "L" if arr.ndim == 2 else "RGB").save(path)


def to_grayscale(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[-1] == 1:
        return img[..., 0]
    return img[..., :3] @ np.array([0.299, 0.587, 0.114])


# -- colour --------------------------------------------------------------------

def rgb_to_hsv(img) -> np.ndarray:
    """Hexcone HSV; H in [0, 1) as a fraction of a turn, S = (max-min)/max, V = max."""
    rgb = np.asarray(img, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    delta = v - rgb.min(axis=-1)
    s = np.divide(delta, v, out=np.zeros_like(v), where=v > 0)
    safe = np.where(delta > 0, delta, 1.0)
    h = np.where(v == r, (g - b) / safe,
                 np.where(v == g, 2.0 + (b - r) / safe, 4.0 + (r - g) / safe))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv) -> np.ndarray:
    hsv = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    i = i.astype(np.int64) % 6
    choices = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    out = np.zeros(hsv.shape)
    for k, (rr, gg, bb) in enumerate(choices):
        sel = i == k
        out[..., 0] = np.where(sel, rr, out[..., 0])
        out[..., 1] = np.where(sel, gg, out[..., 1])
        out[..., 2] = np.where(sel, bb, out[..., 2])
    return out


# -- thresholding ----------------------------------------------------------------

def saturation_bins(sat, bins=256) -> np.ndarray:
    """Bin index of each saturation value; bin b covers [b/bins, (b+1)/bins)."""
    return np.clip(np.floor(np.asarray(sat) * bins).astype(np.int64), 0, bins - 1)


def saturation_histogram(img, bins: int = 256) -> np.ndarray:
    sat = rgb_to_hsv(img)[..., 1]
    return np.bincount(saturation_bins(sat, bins).ravel(), minlength=bins)


def smooth_histogram(hist, window: int = SMOOTH_WINDOW) -> np.ndarray:
    """Centred moving average (zero beyond the ends)."""
    kernel = np.ones(window) / window
    return np.convolve(np.asarray(hist, dtype=np.float64), kernel, mode="same")


def local_maxima(h) -> np.ndarray:
    """Indices of positive local maxima; a plateau counts once, at its left end."""
    h = np.asarray(h, dtype=np.float64)
    left = np.concatenate([[-np.inf], h[:-1]])
    right = np.concatenate([h[1:], [-np.inf]])
    return np.flatnonzero((h > left) & (h >= right) & (h > 0))


def otsu_threshold(hist) -> int:
    """Bin t maximising the between-class variance of {<= t} vs {> t}."""
    hist = np.asarray(hist, dtype=np.float64)
    bins = np.arange(len(hist))
    w0 = np.cumsum(hist)
    w1 = w0[-1] - w0
    m0 = np.cumsum(hist * bins)
    mu0 = np.divide(m0, w0, out=np.zeros_like(m0), where=w0 > 0)
    mu1 = np.divide(m0[-1] - m0, w1, out=np.zeros_like(m0), where=w1 > 0)
    between = w0 * w1 * (mu0 - mu1) ** 2
    return int(np.argmax(between))


@dataclass
class ThresholdResult:
    threshold: int
    fallback: bool
    peaks: tuple = ()
    smoothed: np.ndarray | None = field(default=None, repr=False)


def bimodal_threshold(hist, window: int = SMOOTH_WINDOW) -> ThresholdResult:
    """Valley between the two highest peaks of the smoothed histogram.

    The threshold is the centre of the minimum strictly between the peaks
    (centre of the first..last minimal bin, so flat valleys stay symmetric).
    Falls back to Otsu's criterion, flagged, when fewer than two peaks survive.
    """
    hist = np.asarray(hist, dtype=np.float64)
    if hist.size == 0 or hist.sum() <= 0:
        raise DataError("histogram is empty")
    sm = smooth_histogram(hist, window)
    peaks = local_maxima(sm)
    if len(peaks) >= 2:
        top = peaks[np.argsort(-sm[peaks], kind="stable")[:2]]
        lo, hi = int(top.min()), int(top.max())
        if hi - lo >= 2:
            inner = sm[lo + 1 : hi]
            mins = np.flatnonzero(inner <= inner.min() + 1e-12 * sm.max())
            t = lo + 1 + (mins[0] + mins[-1]) // 2
            return ThresholdResult(int(t), False, (lo, hi), sm)
    return ThresholdResult(otsu_threshold(hist), True, tuple(int(p) for p in peaks), sm)


# -- segmentation ----------------------------------------------------------------

@dataclass
class RoiMask:
    mask: np.ndarray  # bool [h, w]
    threshold: int
    fallback: bool
    bins: int = 256
    morphology: str = f"closing 3x3 x{CLOSING_ITERATIONS}"

    @property
    def pixel_count(self) -> int:
        return int(self.mask.sum())

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        """Tight (row0, col0, row1, col1), end-exclusive."""
        return mask_bbox(self.mask)


def mask_bbox(mask) -> tuple[int, int, int, int]:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise SegmentationError("empty mask has no bounding box")
    return int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1


def largest_component(mask) -> np.ndarray:
    """Largest 4-connected component (ties: lowest label, i.e. first in raster order)."""
    labels, n = ndimage.label(mask)
    if n == 0:
        return np.zeros_like(mask, dtype=bool)
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def close_mask(mask, iterations=CLOSING_ITERATIONS) -> np.ndarray:
    pad = iterations + 1
    padded = np.pad(mask, pad)
    closed = ndimage.binary_closing(padded, np.ones((3, 3), bool), iterations=iterations)
    return closed[pad:-pad, pad:-pad]


def segment_roi(img, bins: int = 256) -> RoiMask:
    """Foreground mask from the saturation channel.

    Pixels whose saturation bin lies above the histogram valley are kept, then
    only the largest 4-connected component, then a 3x3 closing fills splash holes.
    """
    sat = rgb_to_hsv(img)[..., 1]
    sbin = saturation_bins(sat, bins)
    hist = np.bincount(sbin.ravel(), minlength=bins)
    th = bimodal_threshold(hist)
    fg = sbin > th.threshold
    if not fg.any():
        raise SegmentationError("no pixels above the saturation threshold")
    mask = largest_component(close_mask(largest_component(fg)))
    return RoiMask(mask, th.threshold, th.fallback, bins)


# -- orientation -----------------------------------------------------------------

@dataclass
class OrientationEstimate:
    theta: float  # radians in (-pi/2, pi/2]
    centroid: tuple[float, float]  # (x, y)
    major: float  # full axis lengths of the moment-equivalent ellipse
    minor: float
    degenerate: bool = False

    @property
    def confidence(self) -> float:
        return 1.0 - self.minor / self.major if self.major > 0 else 0.0

    @property
    def degrees(self) -> float:
        return math.degrees(self.theta)


MIN_MASK_PIXELS = 16


def estimate_orientation(mask) -> OrientationEstimate:
    """Ellipse with the same second central moments as the mask."""
    mask = np.asarray(mask, dtype=bool)
    ys, xs = np.nonzero(mask)
    if len(xs) < MIN_MASK_PIXELS:
        raise DataError(f"orientation needs >= {MIN_MASK_PIXELS} mask pixels, got {len(xs)}")
    cx, cy = xs.mean(), ys.mean()
    dx, dy = xs - cx, ys - cy
    mu20 = np.mean(dx * dx)
    mu02 = np.mean(dy * dy)
    mu11 = np.mean(dx * dy)
    theta = 0.5 * math.atan2(2 * mu11, mu20 - mu02)
    if theta <= -math.pi / 2:
        theta += math.pi
    half = (mu20 + mu02) / 2
    rad = math.hypot((mu20 - mu02) / 2, mu11)
    lam1, lam2 = half + rad, max(half - rad, 0.0)
    major, minor = 4 * math.sqrt(lam1), 4 * math.sqrt(lam2)
    return OrientationEstimate(theta, (float(cx), float(cy)), major, minor, degenerate=minor < 1.0)


def wrap_half_turn(angle: float) -> float:
    """Map an axis angle onto (-pi/2, pi/2]."""
    a = math.fmod(angle + math.pi / 2, math.pi)
    if a <= 0:
        a += math.pi
    return a - math.pi / 2


# -- geometry ----------------------------------------------------------------------

def sample(img, xs, ys, interpolation="bilinear", fill=0.0):
    """Sample ``img`` at float coordinates; outside the image reads ``fill``."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    tol = 1e-6
    inside = (xs >= -tol) & (xs <= w - 1 + tol) & (ys >= -tol) & (ys <= h - 1 + tol)
    if interpolation == "nearest":
        xi = np.clip(np.rint(xs), 0, w - 1).astype(np.int64)
        yi = np.clip(np.rint(ys), 0, h - 1).astype(np.int64)
        out = img[yi, xi]
    elif interpolation == "bilinear":
        x = np.clip(xs, 0, w - 1)
        y = np.clip(ys, 0, h - 1)
        x0 = np.floor(x).astype(np.int64)
        y0 = np.floor(y).astype(np.int64)
        x1 = np.minimum(x0 + 1, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        fx = x - x0
        fy = y - y0
        if img.ndim == 3:
            fx = fx[..., None]
            fy = fy[..., None]
        out = (img[y0, x0] * (1 - fx) * (1 - fy) + img[y0, x1] * fx * (1 - fy)
               + img[y1, x0] * (1 - fx) * fy + img[y1, x1] * fx * fy)
    else:
        raise ConfigError(f"interpolation must be bilinear|nearest, got {interpolation!r}")
    keep = inside[..., None] if img.ndim == 3 else inside
    return np.where(keep, out, fill)


def rotate_image(img, theta: float, interpolation: str = "bilinear", expand: bool = True,
                 fill: float = 0.0) -> np.ndarray:
    """Rotate about the image centre by ``theta`` (see module docstring for the sense).

    Inverse mapping: each output pixel reads the source at ``R(-theta) q``. With
    ``expand`` the canvas grows to hold the whole rotated image; uncovered
    pixels are ``fill`` (black).
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    c, s = math.cos(theta), math.sin(theta)
    if expand:
        ow = max(1, math.ceil(abs(w * c) + abs(h * s) - 1e-9))
        oh = max(1, math.ceil(abs(w * s) + abs(h * c) - 1e-9))
    else:
        oh, ow = h, w
    qy, qx = np.mgrid[0:oh, 0:ow].astype(np.float64)
    qx -= (ow - 1) / 2
    qy -= (oh - 1) / 2
    xs = c * qx + s * qy + (w - 1) / 2
    ys = -s * qx + c * qy + (h - 1) / 2
    return sample(img, xs, ys, interpolation, fill)


def resize(img, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize (pixel-centre aligned), Gaussian pre-blur when shrinking."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    sy, sx = h / out_h, w / out_w
    if sy > 1 or sx > 1:
        sigma = [max(0.0, (sy - 1) / 2), max(0.0, (sx - 1) / 2)] + [0.0] * (img.ndim - 2)
        img = ndimage.gaussian_filter(img, sigma, mode="nearest")
    ys = (np.arange(out_h) + 0.5) * sy - 0.5
    xs = (np.arange(out_w) + 0.5) * sx - 0.5
    yy, xx = np.meshgrid(np.clip(ys, 0, h - 1), np.clip(xs, 0, w - 1), indexing="ij")
    return sample(img, xx, yy, "bilinear")


@dataclass
class PassportResult:
    image: np.ndarray
    mask: np.ndarray  # derotated, cropped and resized mask
    orientation: OrientationEstimate
    crop_box: tuple[int, int, int, int]  # in the derotated frame
    rotation: float  # angle applied to the input


def passport_crop(img, mask, orientation: OrientationEstimate, out_size: int = 256,
                  margin: float = CROP_MARGIN, flip: bool = False) -> PassportResult:
    """Derotate so the major axis is horizontal, crop a square around the mask, resize.

    The square side is the larger bounding-box extent plus ``margin`` on each
    side, centred on the mask centroid and clamped to the derotated canvas.
    ``flip`` adds a half turn (the head/tail ambiguity is not resolved here).
    """
    if out_size < 1:
        raise ConfigError(f"out_size must be >= 1, got {out_size}")
    angle = -orientation.theta + (math.pi if flip else 0.0)
    rimg = rotate_image(img, angle)
    rmask = rotate_image(np.asarray(mask, dtype=np.float64), angle) > 0.5
    if not rmask.any():
        raise SegmentationError("mask vanished after derotation")
    r0, c0, r1, c1 = mask_bbox(rmask)
    ys, xs = np.nonzero(rmask)
    cy, cx = ys.mean(), xs.mean()
    H, W = rmask.shape
    side = math.ceil(max(r1 - r0, c1 - c0) * (1 + 2 * margin))
    side = max(1, min(side, H, W))
    top = int(round(cy - side / 2))
    left = int(round(cx - side / 2))
    top = min(max(top, 0), H - side)
    left = min(max(left, 0), W - side)
    crop = rimg[top : top + side, left : left + side]
    cmask = rmask[top : top + side, left : left + side].astype(np.float64)
    return PassportResult(
        image=resize(crop, out_size, out_size),
        mask=resize(cmask, out_size, out_size) > 0.5,
        orientation=orientation,
        crop_box=(top, left, top + side, left + side),
        rotation=angle,
    )


@dataclass
class PreprocessOutcome:
    passport: PassportResult | None
    roi: RoiMask | None
    status: str  # "success" | "fallback" | "failed"
    residual_degrees: float | None = None
    error: str | None = None

    def diagnostics(self) -> dict:
        d = {"status": self.status}
        if self.roi is not None:
            d.update(threshold_bin=self.roi.threshold, threshold=self.roi.threshold / self.roi.bins,
                     fallback=self.roi.fallback, mask_pixels=self.roi.pixel_count,
                     morphology=self.roi.morphology)
        if self.passport is not None:
            o = self.passport.orientation
            d.update(theta_degrees=o.degrees, confidence=o.confidence, major=o.major,
                     minor=o.minor, degenerate=o.degenerate,
                     rotation_degrees=math.degrees(self.passport.rotation),
                     residual_degrees=self.residual_degrees)
        if self.error:
            d["error"] = self.error
        return d


def preprocess(img, out_size: int = 256, flip: bool = False, tolerance_deg: float = 5.0) -> PreprocessOutcome:
    """Full automatic pipeline on one image, with a self-check of the result.

    The output is re-segmented and its orientation re-estimated; anything
    further than ``tolerance_deg`` from horizontal (or a degenerate estimate)
    is reported as ``failed`` rather than raised.
    """
    try:
        roi = segment_roi(img)
        orient = estimate_orientation(roi.mask)
        pp = passport_crop(img, roi.mask, orient, out_size, flip=flip)
    except (SegmentationError, DataError) as e:
        return PreprocessOutcome(None, None, "failed", error=str(e))
    residual = None
    try:
        check = estimate_orientation(segment_roi(pp.image).mask)
        residual = math.degrees(wrap_half_turn(check.theta))
    except (SegmentationError, DataError):
        pass
    ok = residual is not None and abs(residual) <= tolerance_deg and not orient.degenerate
    status = "failed" if not ok else ("fallback" if roi.fallback else "success")
    return PreprocessOutcome(pp, roi, status, residual,
                             None if ok else "orientation self-check failed")


# -- augmentation -----------------------------------------------------------------

AUGMENT_OPS = ("hflip", "vflip", "rotate", "scale", "shift", "lowpass", "highpass")


def _blur(img, sigma):
    sig = [sigma, sigma] + [0.0] * (img.ndim - 2)
    return ndimage.gaussian_filter(img, sig, mode="reflect")


def augment(img, op: str, *, theta: float = 0.0, s: float = 1.0, dx: int = 0, dy: int = 0,
            sigma: float = 1.0) -> np.ndarray:
    """Deterministic augmentation transform; the canvas size never changes.

    ``lowpass`` is a Gaussian blur; ``highpass`` is image minus blur, re-centred on
    mid-gray and clipped to [0, 1].
    """
    img = np.asarray(img, dtype=np.float64)
    if op == "hflip":
        return img[:, ::-1].copy()
    if op == "vflip":
        return img[::-1].copy()
    if op == "rotate":
        return rotate_image(img, theta, expand=False)
    if op == "scale":
        if not 0.5 <= s <= 2.0:
            raise ConfigError(f"scale factor must lie in [0.5, 2], got {s}")
        h, w = img.shape[:2]
        qy, qx = np.mgrid[0:h, 0:w].astype(np.float64)
        cy, cx = (h - 1) / 2, (w - 1) / 2
        return sample(img, cx + (qx - cx) / s, cy + (qy - cy) / s)
    if op == "shift":
        if int(dx) != dx or int(dy) != dy:
            raise ConfigError(f"shift expects integer offsets, got {dx}, {dy}")
        dx, dy = int(dx), int(dy)
        h, w = img.shape[:2]
        out = np.zeros_like(img)
        if abs(dx) < w and abs(dy) < h:
            out[max(dy, 0) : h + min(dy, 0), max(dx, 0) : w + min(dx, 0)] = \
                img[max(-dy, 0) : h + min(-dy, 0), max(-dx, 0) : w + min(-dx, 0)]
        return out
    if op in ("lowpass", "highpass"):
        if not 0 < sigma <= 5:
            raise ConfigError(f"sigma must lie in (0, 5], got {sigma}")
        low = _blur(img, sigma)
        return low if op == "lowpass" else np.clip(img - low + 0.5, 0.0, 1.0)
    raise ConfigError(f"unknown augmentation {op!r}; expected one of {AUGMENT_OPS}")


# -- synthetic scenes --------------------------------------------------------------

@dataclass
class SceneTruth:
    mask: np.ndarray
    theta: float
    center: tuple[float, float]
    semi_axes: tuple[float, float]


def ellipse_mask(shape, center, semi_axes, theta) -> np.ndarray:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - center[0], yy - center[1]
    c, s = math.cos(theta), math.sin(theta)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    a, b = semi_axes
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def synthetic_scene(seed: int, shape=(240, 320), theta: float | None = None,
                    axis_ratio: float | None = None, splashes: int | None = None):
    """Gray-blue water with a saturated elliptical body, splash specks and noise blobs.

    Returns ``(rgb image, SceneTruth)``; fully determined by ``seed`` and the
    explicit overrides.
    """
    rng = np.random.default_rng(seed)
    h, w = shape
    if theta is None:
        theta = rng.uniform(-math.pi / 2, math.pi / 2)
    if axis_ratio is None:
        axis_ratio = rng.uniform(0.25, 0.6)
    a = rng.uniform(0.22, 0.32) * min(h, w)
    b = a * axis_ratio
    center = (w / 2 + rng.uniform(-0.08, 0.08) * w, h / 2 + rng.uniform(-0.08, 0.08) * h)
    body = ellipse_mask(shape, center, (a, b), theta)

    hue = np.where(body, 0.07, 0.55) + rng.normal(0, 0.01, shape)
    sat = np.where(body, rng.normal(0.55, 0.07, shape), rng.normal(0.15, 0.04, shape))
    val = np.where(body, rng.normal(0.40, 0.05, shape), rng.normal(0.55, 0.08, shape))

    # white splash specks on and around the body (low saturation holes)
    n_specks = int(rng.integers(5, 15))
    ys, xs = np.nonzero(body)
    for _ in range(n_specks):
        j = rng.integers(len(xs))
        r = rng.uniform(1.0, 2.5)
        speck = ellipse_mask(shape, (xs[j], ys[j]), (r, r), 0.0)
        sat[speck] = rng.uniform(0.02, 0.08)
        val[speck] = 0.95

    # saturated noise blobs out in the water, far smaller than the body
    if splashes is None:
        splashes = int(rng.integers(2, 7))
    for _ in range(splashes):
        r = rng.uniform(2.0, 6.0)
        for _try in range(20):
            cx, cy = rng.uniform(r, w - r), rng.uniform(r, h - r)
            if (cx - center[0]) ** 2 + (cy - center[1]) ** 2 > (a + 3 * r) ** 2:
                break
        blob = ellipse_mask(shape, (cx, cy), (r, r * rng.uniform(0.5, 1.0)), rng.uniform(0, math.pi))
        sat[blob] = rng.normal(0.5, 0.05)

    hsv = np.stack([np.mod(hue, 1.0), np.clip(sat, 0, 1), np.clip(val, 0, 1)], axis=-1)
    return hsv_to_rgb(hsv), SceneTruth(body, wrap_half_turn(theta), center, (a, b))


def write_synthetic_corpus(out_dir, n: int, seed: int = 0) -> list[Path]:
    """Write ``n`` seeded synthetic scenes as PNG files (ground truth angles in ``truth.csv``)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(seed).generate_state(n)
    paths, rows = [], ["filename,theta_degrees"]
    for i, s in enumerate(seeds):
        img, truth = synthetic_scene(int(s))
        p = out / f"scene_{i:04d}.png"
        write_image(p, img)
        paths.append(p)
        rows.append(f"{p.name},{math.degrees(truth.theta)!r}")
    (out / "truth.csv").write_text("\n".join(rows) + "\n")
    return paths
