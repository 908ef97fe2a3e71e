"""Oriented multi-scale keypoints and 256-bit steered binary descriptors.

All arithmetic that decides a detection or a descriptor bit is integer
(intensity sums, moments, gradients), so results are bit-stable across
platforms; floats only enter for Harris responses, angles and pyramid
resampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ImageTooSmallError, InvalidArgumentError, PatchOutOfBoundsError
from .validation import check_gray_image, check_positive_int

PATCH_RADIUS = 15                      # descriptor patch is 31x31
DEFAULT_N_LEVELS = 8
DEFAULT_SCALE_FACTOR = 1.2
DEFAULT_FAST_THRESHOLD = 20
FAST_ARC_LENGTH = 9
N_ROTATIONS = 30                       # steering templates, 12 degree bins
PATTERN_SEED = 20190601
HARRIS_K = 0.04
_HARRIS_MARGIN = 4                     # 3 for the 7x7 block + 1 for Sobel support
_MIN_DIM = 2 * PATCH_RADIUS + 1

_TWO_PI = 2.0 * math.pi

# radius-3 Bresenham circle, 16 pixels, clockwise from the top
_FAST_CIRCLE = (
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
)


def _build_arc_lut(arc_length: int) -> np.ndarray:
    """For every 16-bit mask: does it contain `arc_length` cyclically contiguous ones."""
    masks = np.arange(1 << 16, dtype=np.uint32)
    ext = masks | (masks << np.uint32(16))
    runs = ext.copy()
    for shift in range(1, arc_length):
        runs &= ext >> np.uint32(shift)
    return (runs & np.uint32(0xFFFF)) != 0


_ARC_LUT = _build_arc_lut(FAST_ARC_LENGTH)


@dataclass(frozen=True)
class Keypoint:
    """Interest point in level-0 coordinates with its pyramid level."""
    x: float
    y: float
    angle: float       # radians in [0, 2*pi), y axis pointing down
    response: float    # Harris score at the detection level
    level: int


@dataclass(frozen=True)
class Pyramid:
    levels: tuple
    scale_factor: float

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def scale(self, level: int) -> float:
        return self.scale_factor ** level


@dataclass(frozen=True)
class BriefPattern:
    """256 point pairs plus their precomputed rotations.

    `pairs` has shape (n_pairs, 2, 2) laid out as [pair, endpoint, (x, y)];
    `rotated` is (n_templates, n_pairs, 2, 2) with template t rotated by
    2*pi*t / n_templates. All offsets lie inside the patch disc.
    """
    pairs: np.ndarray
    rotated: np.ndarray
    patch_radius: int = PATCH_RADIUS
    seed: int = PATTERN_SEED

    @property
    def n_templates(self) -> int:
        return self.rotated.shape[0]

    def template_index(self, angle: float) -> int:
        step = _TWO_PI / self.n_templates
        return int(np.rint(angle / step)) % self.n_templates


def make_brief_pattern(seed: int = PATTERN_SEED, patch_radius: int = PATCH_RADIUS,
                       n_pairs: int = 256, n_templates: int = N_ROTATIONS) -> BriefPattern:
    """Draw the test-point pattern from an isotropic Gaussian.

    sigma^2 = patch_size^2 / 25; points falling outside the patch disc are
    redrawn. The result is frozen into every model file, so reproducibility
    follows from the stored pattern rather than from this generator.
    """
    rng = np.random.default_rng(seed)
    sigma = (2 * patch_radius + 1) / 5.0
    r2 = patch_radius * patch_radius
    need = n_pairs * 2
    pts = np.empty((need, 2), dtype=np.int64)
    filled = 0
    while filled < need:
        draw = np.rint(rng.normal(0.0, sigma, size=(need - filled, 2))).astype(np.int64)
        ok = (draw * draw).sum(axis=1) <= r2
        good = draw[ok]
        pts[filled:filled + len(good)] = good
        filled += len(good)
    pairs = pts.reshape(n_pairs, 2, 2).astype(np.int8)

    rotated = np.empty((n_templates, n_pairs, 2, 2), dtype=np.int8)
    fx = pairs[..., 0].astype(np.float64)
    fy = pairs[..., 1].astype(np.float64)
    for t in range(n_templates):
        ang = _TWO_PI * t / n_templates
        c, s = math.cos(ang), math.sin(ang)
        rx = fx * c - fy * s
        ry = fx * s + fy * c
        ix = np.rint(rx)
        iy = np.rint(ry)
        outside = ix * ix + iy * iy > r2
        # rounding can push a boundary offset outside the disc; truncation
        # toward zero never can
        ix[outside] = np.trunc(rx[outside])
        iy[outside] = np.trunc(ry[outside])
        rotated[t, ..., 0] = ix
        rotated[t, ..., 1] = iy
    return BriefPattern(pairs=pairs, rotated=rotated, patch_radius=patch_radius, seed=seed)


# --- pyramid ---------------------------------------------------------------

def _resize_bilinear(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = src.shape
    sy = h / out_h
    sx = w / out_w
    ys = np.clip((np.arange(out_h) + 0.5) * sy - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * sx - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    img = src.astype(np.float64)
    top = img[y0[:, None], x0[None, :]] * (1.0 - fx) + img[y0[:, None], x1[None, :]] * fx
    bot = img[y1[:, None], x0[None, :]] * (1.0 - fx) + img[y1[:, None], x1[None, :]] * fx
    out = top * (1.0 - fy) + bot * fy
    return np.rint(out).astype(np.uint8)


def build_pyramid(img, n_levels: int = DEFAULT_N_LEVELS,
                  scale_factor: float = DEFAULT_SCALE_FACTOR) -> Pyramid:
    """Level 0 is the input; each level L is floor(dim0 / scale_factor**L).

    Levels too small for a descriptor patch are dropped.
    """
    img = check_gray_image(img)
    check_positive_int(n_levels, "n_levels")
    if not scale_factor > 1.0:
        raise InvalidArgumentError(f"scale_factor must be > 1, got {scale_factor}")
    h0, w0 = img.shape
    if min(h0, w0) < _MIN_DIM:
        raise ImageTooSmallError(
            f"image {w0}x{h0} is smaller than the {_MIN_DIM}x{_MIN_DIM} minimum")
    levels = [img]
    for lv in range(1, n_levels):
        h = math.floor(h0 / scale_factor ** lv)
        w = math.floor(w0 / scale_factor ** lv)
        if min(h, w) < _MIN_DIM:
            break
        levels.append(_resize_bilinear(levels[-1], h, w))
    return Pyramid(levels=tuple(levels), scale_factor=float(scale_factor))


def _as_pyramid(img, n_levels, scale_factor) -> Pyramid:
    if isinstance(img, Pyramid):
        return img
    return build_pyramid(img, n_levels, scale_factor)


# --- FAST ------------------------------------------------------------------

def _fast_score_map(img: np.ndarray, threshold: int) -> np.ndarray:
    """Segment-test score per pixel; 0 where the test fails.

    Score is the larger of the summed brightness excesses over the
    brighter / under the darker circle pixels (each term minus the
    threshold), evaluated only where some 9-long contiguous arc passes.
    """
    h, w = img.shape
    score = np.zeros((h, w), dtype=np.int32)
    if h < 7 or w < 7:
        return score
    c = img.astype(np.int16)
    center = c[3:h - 3, 3:w - 3]
    bright = np.zeros(center.shape, dtype=np.uint16)
    dark = np.zeros(center.shape, dtype=np.uint16)
    bsum = np.zeros(center.shape, dtype=np.int32)
    dsum = np.zeros(center.shape, dtype=np.int32)
    for k, (dx, dy) in enumerate(_FAST_CIRCLE):
        nb = c[3 + dy:h - 3 + dy, 3 + dx:w - 3 + dx]
        delta = (nb - center).astype(np.int32)
        b = delta > threshold
        d = delta < -threshold
        bright |= b.astype(np.uint16) << np.uint16(k)
        dark |= d.astype(np.uint16) << np.uint16(k)
        bsum += np.where(b, delta - threshold, 0)
        dsum += np.where(d, -delta - threshold, 0)
    corner = _ARC_LUT[bright] | _ARC_LUT[dark]
    score[3:h - 3, 3:w - 3] = np.where(corner, np.maximum(bsum, dsum), 0)
    return score


def _nms_3x3(score: np.ndarray) -> np.ndarray:
    """Keep corners whose score beats every 3x3 neighbor; raster order breaks ties."""
    h, w = score.shape
    keep = score > 0
    padded = np.zeros((h + 2, w + 2), dtype=score.dtype)
    padded[1:-1, 1:-1] = score
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            nb = padded[1 + dy:h + 1 + dy, 1 + dx:w + 1 + dx]
            if dy > 0 or (dy == 0 and dx > 0):
                keep &= score >= nb
            else:
                keep &= score > nb
    return keep


def detect_fast(img, threshold: int = DEFAULT_FAST_THRESHOLD) -> list:
    """FAST-9 corners after 3x3 non-maximum suppression, as (x, y) tuples."""
    img = check_gray_image(img)
    t = int(threshold)
    if not 1 <= t <= 255:
        raise InvalidArgumentError(f"threshold must lie in [1, 255], got {threshold}")
    keep = _nms_3x3(_fast_score_map(img, t))
    ys, xs = np.nonzero(keep)
    return [(int(x), int(y)) for x, y in zip(xs, ys)]


# --- Harris ----------------------------------------------------------------

def _harris_from_patches(patches: np.ndarray) -> np.ndarray:
    """Responses from (m, 9, 9) int64 neighborhoods (7x7 block + Sobel margin)."""
    p = patches
    gx = (p[:, 0:7, 2:9] + 2 * p[:, 1:8, 2:9] + p[:, 2:9, 2:9]
          - p[:, 0:7, 0:7] - 2 * p[:, 1:8, 0:7] - p[:, 2:9, 0:7])
    gy = (p[:, 2:9, 0:7] + 2 * p[:, 2:9, 1:8] + p[:, 2:9, 2:9]
          - p[:, 0:7, 0:7] - 2 * p[:, 0:7, 1:8] - p[:, 0:7, 2:9])
    sxx = (gx * gx).sum(axis=(1, 2))
    syy = (gy * gy).sum(axis=(1, 2))
    sxy = (gx * gy).sum(axis=(1, 2))
    det = (sxx * syy - sxy * sxy).astype(np.float64)
    trace = (sxx + syy).astype(np.float64)
    return det - HARRIS_K * trace * trace


def _harris_points(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    off = np.arange(-4, 5)
    patches = img.astype(np.int64)[
        ys[:, None, None] + off[None, :, None],
        xs[:, None, None] + off[None, None, :],
    ]
    return _harris_from_patches(patches)


def harris_response(img, x: int, y: int) -> float:
    """det(M) - k*trace(M)^2 of the Sobel structure tensor over a 7x7 block."""
    img = check_gray_image(img)
    h, w = img.shape
    x, y = int(x), int(y)
    if not (_HARRIS_MARGIN <= x < w - _HARRIS_MARGIN
            and _HARRIS_MARGIN <= y < h - _HARRIS_MARGIN):
        raise PatchOutOfBoundsError(
            f"7x7 gradient block around ({x}, {y}) does not fit in {w}x{h}")
    return float(_harris_points(img, np.array([x]), np.array([y]))[0])


def _harris_map(img: np.ndarray) -> np.ndarray:
    """Full-image responses; NaN inside the 4-pixel margin. Matches
    `harris_response` exactly where both are defined."""
    c = img.astype(np.int64)
    h, w = c.shape
    gx = np.zeros((h, w), dtype=np.int64)
    gy = np.zeros((h, w), dtype=np.int64)
    gx[1:-1, 1:-1] = (c[0:-2, 2:] + 2 * c[1:-1, 2:] + c[2:, 2:]
                      - c[0:-2, 0:-2] - 2 * c[1:-1, 0:-2] - c[2:, 0:-2])
    gy[1:-1, 1:-1] = (c[2:, 0:-2] + 2 * c[2:, 1:-1] + c[2:, 2:]
                      - c[0:-2, 0:-2] - 2 * c[0:-2, 1:-1] - c[0:-2, 2:])

    def box7(a):
        ii = np.zeros((h + 1, w + 1), dtype=np.int64)
        np.cumsum(a, axis=0, out=ii[1:, 1:])
        np.cumsum(ii[1:, 1:], axis=1, out=ii[1:, 1:])
        out = np.zeros((h, w), dtype=np.int64)
        out[3:h - 3, 3:w - 3] = (ii[7:, 7:] - ii[:-7, 7:] - ii[7:, :-7] + ii[:-7, :-7])
        return out

    sxx = box7(gx * gx)
    syy = box7(gy * gy)
    sxy = box7(gx * gy)
    det = (sxx * syy - sxy * sxy).astype(np.float64)
    trace = (sxx + syy).astype(np.float64)
    resp = det - HARRIS_K * trace * trace
    resp[:_HARRIS_MARGIN, :] = np.nan
    resp[-_HARRIS_MARGIN:, :] = np.nan
    resp[:, :_HARRIS_MARGIN] = np.nan
    resp[:, -_HARRIS_MARGIN:] = np.nan
    return resp


# --- orientation -----------------------------------------------------------

@lru_cache(maxsize=None)
def _disc_offsets(radius: int):
    rng = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(rng, rng, indexing="ij")
    inside = dx * dx + dy * dy <= radius * radius
    return dx[inside].astype(np.int64), dy[inside].astype(np.int64)


def _orientation_points(img: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                        radius: int) -> np.ndarray:
    dx, dy = _disc_offsets(radius)
    vals = img.astype(np.int64)[ys[:, None] + dy[None, :], xs[:, None] + dx[None, :]]
    m10 = vals @ dx
    m01 = vals @ dy
    ang = np.arctan2(m01, m10)
    ang = np.where(ang < 0.0, ang + _TWO_PI, ang)
    return ang + 0.0  # folds -0.0 to +0.0


def orientation(img, x: int, y: int, radius: int = PATCH_RADIUS) -> float:
    """Intensity-centroid angle atan2(m01, m10) over the disc, in [0, 2*pi).

    The y axis points down (image convention); zero moments give 0.
    """
    img = check_gray_image(img)
    h, w = img.shape
    x, y = int(x), int(y)
    if not (radius <= x < w - radius and radius <= y < h - radius):
        raise PatchOutOfBoundsError(
            f"disc of radius {radius} around ({x}, {y}) does not fit in {w}x{h}")
    return float(_orientation_points(img, np.array([x]), np.array([y]), radius)[0])


# --- descriptors -----------------------------------------------------------

def _box5_sums(img: np.ndarray) -> np.ndarray:
    """5x5 box sums with replicated borders; comparing sums == comparing means."""
    padded = np.pad(img.astype(np.int32), 2, mode="edge")
    h, w = img.shape
    ii = np.zeros((h + 5, w + 5), dtype=np.int32)
    np.cumsum(padded, axis=0, out=ii[1:, 1:])
    np.cumsum(ii[1:, 1:], axis=1, out=ii[1:, 1:])
    return ii[5:, 5:] - ii[:-5, 5:] - ii[5:, :-5] + ii[:-5, :-5]


def _descriptors_from_smoothed(smoothed: np.ndarray, cx: np.ndarray, cy: np.ndarray,
                               template_idx: np.ndarray, pattern: BriefPattern) -> np.ndarray:
    offs = pattern.rotated[template_idx].astype(np.int64)        # (m, n_pairs, 2, 2)
    v1 = smoothed[cy[:, None] + offs[:, :, 0, 1], cx[:, None] + offs[:, :, 0, 0]]
    v2 = smoothed[cy[:, None] + offs[:, :, 1, 1], cx[:, None] + offs[:, :, 1, 0]]
    return np.packbits(v1 < v2, axis=1, bitorder="little")


def brief_descriptor(level_img, kp: Keypoint, pattern: BriefPattern,
                     scale_factor: float = DEFAULT_SCALE_FACTOR) -> np.ndarray:
    """Steered 256-bit descriptor of `kp` evaluated on its level image.

    Intensities come from a 5x5 box-smoothed copy; bit i is 1 iff
    I(z1) < I(z2) for pair i of the rotation template nearest kp.angle.
    """
    level_img = check_gray_image(level_img)
    h, w = level_img.shape
    s = scale_factor ** kp.level
    cx = int(np.rint(kp.x / s))
    cy = int(np.rint(kp.y / s))
    r = pattern.patch_radius
    if not (r <= cx < w - r and r <= cy < h - r):
        raise PatchOutOfBoundsError(
            f"patch of radius {r} around level point ({cx}, {cy}) "
            f"does not fit in {w}x{h}")
    tmpl = np.array([pattern.template_index(kp.angle)])
    return _descriptors_from_smoothed(
        _box5_sums(level_img), np.array([cx]), np.array([cy]), tmpl, pattern)[0]


# --- multi-scale detection and description ----------------------------------

def _detect_all(pyr: Pyramid, fast_threshold: int):
    """Per-level FAST + Harris candidates eligible for a descriptor patch."""
    per_level = []
    for lv, img in enumerate(pyr.levels):
        h, w = img.shape
        keep = _nms_3x3(_fast_score_map(img, fast_threshold))
        keep[:PATCH_RADIUS, :] = False
        keep[h - PATCH_RADIUS:, :] = False
        keep[:, :PATCH_RADIUS] = False
        keep[:, w - PATCH_RADIUS:] = False
        ys, xs = np.nonzero(keep)
        if len(xs) == 0:
            continue
        resp = _harris_points(img, xs, ys)
        per_level.append((lv, xs.astype(np.int64), ys.astype(np.int64), resp))
    return per_level


def _top_candidates(pyr: Pyramid, n: int, fast_threshold: int):
    per_level = _detect_all(pyr, fast_threshold)
    if not per_level:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
    levels = np.concatenate([np.full(len(x), lv, np.int64) for lv, x, _, _ in per_level])
    xs = np.concatenate([x for _, x, _, _ in per_level])
    ys = np.concatenate([y for _, _, y, _ in per_level])
    resp = np.concatenate([r for _, _, _, r in per_level])
    # descending response; ties by (level, y, x)
    order = np.lexsort((xs, ys, levels, -resp))[:n]
    return levels[order], xs[order], ys[order], resp[order]


def detect_keypoints(img, n: int, *, n_levels: int = DEFAULT_N_LEVELS,
                     scale_factor: float = DEFAULT_SCALE_FACTOR,
                     fast_threshold: int = DEFAULT_FAST_THRESHOLD) -> list:
    """The n strongest oriented keypoints across the pyramid."""
    check_positive_int(n, "n")
    pyr = _as_pyramid(img, n_levels, scale_factor)
    levels, xs, ys, resp = _top_candidates(pyr, n, fast_threshold)
    kps = []
    for lv in np.unique(levels):
        sel = np.nonzero(levels == lv)[0]
        ang = _orientation_points(pyr.levels[lv], xs[sel], ys[sel], PATCH_RADIUS)
        s = pyr.scale(int(lv))
        for i, a in zip(sel, ang):
            kps.append((i, Keypoint(x=xs[i] * s, y=ys[i] * s, angle=float(a),
                                    response=float(resp[i]), level=int(lv))))
    kps.sort(key=lambda pair: pair[0])
    return [kp for _, kp in kps]


def top_keypoints(img, n: int, pattern: BriefPattern, *,
                  n_levels: int = DEFAULT_N_LEVELS,
                  scale_factor: float = DEFAULT_SCALE_FACTOR,
                  fast_threshold: int = DEFAULT_FAST_THRESHOLD) -> list:
    """The n strongest keypoints with their descriptors, response-descending."""
    check_positive_int(n, "n")
    pyr = _as_pyramid(img, n_levels, scale_factor)
    levels, xs, ys, resp = _top_candidates(pyr, n, fast_threshold)
    out = [None] * len(levels)
    for lv in np.unique(levels):
        sel = np.nonzero(levels == lv)[0]
        img_l = pyr.levels[lv]
        ang = _orientation_points(img_l, xs[sel], ys[sel], PATCH_RADIUS)
        tmpl = np.array([pattern.template_index(a) for a in ang])
        descs = _descriptors_from_smoothed(_box5_sums(img_l), xs[sel], ys[sel], tmpl, pattern)
        s = pyr.scale(int(lv))
        for j, i in enumerate(sel):
            kp = Keypoint(x=xs[i] * s, y=ys[i] * s, angle=float(ang[j]),
                          response=float(resp[i]), level=int(lv))
            out[i] = (kp, descs[j])
    return out


def describe_points(pyr: Pyramid, xs, ys, pattern: BriefPattern):
    """Descriptors at arbitrary level-0 points, each on its best-Harris level.

    Returns (descriptors (m, 32) uint8, levels (m,) int64, valid (m,) bool);
    rows where no pyramid level admits the patch are zero-filled with
    valid=False.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    m = xs.size
    n_lv = pyr.n_levels
    resp = np.full((n_lv, m), -np.inf)
    coords = []
    harris_maps = [None] * n_lv
    for lv, img in enumerate(pyr.levels):
        h, w = img.shape
        s = pyr.scale(lv)
        cx = np.rint(xs / s).astype(np.int64)
        cy = np.rint(ys / s).astype(np.int64)
        ok = ((cx >= PATCH_RADIUS) & (cx < w - PATCH_RADIUS)
              & (cy >= PATCH_RADIUS) & (cy < h - PATCH_RADIUS))
        coords.append((cx, cy))
        if ok.any():
            if harris_maps[lv] is None:
                harris_maps[lv] = _harris_map(img)
            resp[lv, ok] = harris_maps[lv][cy[ok], cx[ok]]

    best = resp.argmax(axis=0)                     # first max -> lowest level
    valid = np.isfinite(resp[best, np.arange(m)])
    descs = np.zeros((m, pattern.pairs.shape[0] // 8), dtype=np.uint8)
    levels_out = np.where(valid, best, -1).astype(np.int64)
    for lv in range(n_lv):
        sel = np.nonzero(valid & (best == lv))[0]
        if len(sel) == 0:
            continue
        img_l = pyr.levels[lv]
        cx, cy = coords[lv]
        ang = _orientation_points(img_l, cx[sel], cy[sel], PATCH_RADIUS)
        tmpl = np.array([pattern.template_index(a) for a in ang])
        descs[sel] = _descriptors_from_smoothed(
            _box5_sums(img_l), cx[sel], cy[sel], tmpl, pattern)
    return descs, levels_out, valid


def descriptor_at_point(img, x: float, y: float, pattern: BriefPattern, *,
                        n_levels: int = DEFAULT_N_LEVELS,
                        scale_factor: float = DEFAULT_SCALE_FACTOR):
    """Descriptor of one arbitrary point on its best-Harris pyramid level.

    Evaluates the Harris response at the point scaled into every level whose
    patch fits, picks the strongest (ties to the lower level), then computes
    orientation and the steered descriptor there. Returns (descriptor, level).
    """
    pyr = _as_pyramid(img, n_levels, scale_factor)
    descs, levels, valid = describe_points(pyr, [x], [y], pattern)
    if not valid[0]:
        raise PatchOutOfBoundsError(
            f"no pyramid level admits a descriptor patch at ({x}, {y})")
    return descs[0], int(levels[0])
