"""Per-pixel rarity maps: grid scoring, interpolation and heatmap rendering."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace

import numpy as np
from PIL import Image
from scipy import ndimage

from . import orb
from .errors import InvalidArgumentError, NoValidPointsError
from .reduce import reduce_descriptors
from .validation import check_gray_image, check_positive_int

OVERLAY_ALPHA = 0.6
AUTO_MASK_MIN_REGION = 64
DEFAULT_STRIDE = 3


@dataclass(frozen=True)
class ProbabilityMap:
    """ln p sampled on a stride grid, optionally interpolated per pixel.

    `grid_values[v, u]` is the score at pixel (stride*u, stride*v); NaN
    marks unscorable or masked points. `mask` is per-pixel, True = relevant.
    """
    width: int
    height: int
    stride: int
    grid_values: np.ndarray
    dense_values: np.ndarray | None = None
    mask: np.ndarray | None = None


def auto_mask(img, min_region: int = AUTO_MASK_MIN_REGION) -> np.ndarray:
    """True = relevant; 8-connected pure-black regions >= min_region are masked."""
    img = check_gray_image(img)
    labels, n = ndimage.label(img == 0, structure=np.ones((3, 3), dtype=bool))
    mask = np.ones(img.shape, dtype=bool)
    if n:
        sizes = np.bincount(labels.ravel())
        big = np.flatnonzero(sizes >= min_region)
        big = big[big != 0]
        if len(big):
            mask[np.isin(labels, big)] = False
    return mask


def score_grid(model, img, stride: int = DEFAULT_STRIDE, *,
               mask: np.ndarray | None = None,
               n_levels: int = orb.DEFAULT_N_LEVELS,
               scale_factor: float = orb.DEFAULT_SCALE_FACTOR) -> ProbabilityMap:
    """ln p of the descriptor at every grid point (stride*u, stride*v).

    Points whose patch fits no pyramid level, or that fall on a masked
    pixel, are NaN. Raises when nothing at all can be scored.
    """
    img = check_gray_image(img)
    check_positive_int(stride, "stride")
    pattern = getattr(model, "pattern_", None)
    if pattern is None:
        raise InvalidArgumentError("model carries no descriptor pattern")
    h, w = img.shape
    if mask is not None and mask.shape != img.shape:
        raise InvalidArgumentError("mask shape must match the image")
    xs = np.arange(0, w, stride, dtype=np.int64)
    ys = np.arange(0, h, stride, dtype=np.int64)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    flat_x = gx.ravel()
    flat_y = gy.ravel()

    wanted = np.ones(flat_x.size, dtype=bool)
    if mask is not None:
        wanted = mask[flat_y, flat_x]

    values = np.full(flat_x.size, np.nan)
    if wanted.any():
        pyr = orb.build_pyramid(img, n_levels, scale_factor)
        descs, _, valid = orb.describe_points(
            pyr, flat_x[wanted].astype(np.float64), flat_y[wanted].astype(np.float64),
            pattern)
        if valid.any():
            scores = np.full(valid.size, np.nan)
            scores[valid] = model.score_samples(reduce_descriptors(descs[valid]))
            values[wanted] = scores
    if not np.isfinite(values).any():
        raise NoValidPointsError("no grid point could be scored")
    grid = values.reshape(len(ys), len(xs))
    return ProbabilityMap(width=w, height=h, stride=int(stride),
                          grid_values=grid, mask=mask)


def interpolate(pmap: ProbabilityMap) -> ProbabilityMap:
    """Fill per-pixel values by bilinear interpolation of the grid.

    NaN neighbors are dropped and the remaining weights renormalized;
    pixels outside the grid hull clamp to the nearest grid value. Values
    at grid coordinates are preserved exactly.
    """
    grid = pmap.grid_values
    gh, gw = grid.shape
    fy = np.clip(np.arange(pmap.height, dtype=np.float64) / pmap.stride, 0, gh - 1)
    fx = np.clip(np.arange(pmap.width, dtype=np.float64) / pmap.stride, 0, gw - 1)
    y0 = np.floor(fy).astype(np.int64)
    x0 = np.floor(fx).astype(np.int64)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    wy1 = fy - y0
    wx1 = fx - x0

    num = np.zeros((pmap.height, pmap.width))
    den = np.zeros((pmap.height, pmap.width))
    corners = (
        (y0, x0, (1.0 - wy1)[:, None] * (1.0 - wx1)[None, :]),
        (y0, x1, (1.0 - wy1)[:, None] * wx1[None, :]),
        (y1, x0, wy1[:, None] * (1.0 - wx1)[None, :]),
        (y1, x1, wy1[:, None] * wx1[None, :]),
    )
    for yy, xx, weight in corners:
        v = grid[np.ix_(yy, xx)]
        usable = np.isfinite(v) & (weight > 0.0)
        num += np.where(usable, weight * v, 0.0)
        den += np.where(usable, weight, 0.0)
    with np.errstate(invalid="ignore"):
        dense = np.where(den > 0.0, num / den, np.nan)
    if pmap.mask is not None:
        dense[~pmap.mask] = np.nan
    return replace(pmap, dense_values=dense)


def mean_log_prob(pmap: ProbabilityMap) -> float:
    """Arithmetic mean over the finite grid samples (not the dense pixels)."""
    finite = np.isfinite(pmap.grid_values)
    if not finite.any():
        raise NoValidPointsError("probability map has no finite grid values")
    return float(pmap.grid_values[finite].mean())


def render_heatmap(pmap: ProbabilityMap, lo: float | None = None,
                   hi: float | None = None, overlay=None) -> np.ndarray:
    """Render as blue-white-red over [lo, hi]; NaN pixels are black.

    Omitted bounds default to the 5th/95th percentiles of the map. With
    `overlay` (the source grayscale image), the colors are alpha-blended
    onto it at fixed 0.6 opacity.
    """
    pm = pmap if pmap.dense_values is not None else interpolate(pmap)
    v = pm.dense_values
    finite = np.isfinite(v)
    auto = lo is None or hi is None
    if auto:
        if not finite.any():
            raise NoValidPointsError("cannot choose a color range: map is all NaN")
        p5, p95 = np.percentile(v[finite], [5.0, 95.0])
        lo = p5 if lo is None else float(lo)
        hi = p95 if hi is None else float(hi)
        if lo >= hi:
            mid = 0.5 * (lo + hi)
            lo, hi = mid - 0.5, mid + 0.5
    else:
        lo, hi = float(lo), float(hi)
        if lo >= hi:
            raise InvalidArgumentError(f"need lo < hi, got [{lo}, {hi}]")

    t = np.clip((np.where(finite, v, lo) - lo) / (hi - lo), 0.0, 1.0)
    r = np.where(t <= 0.5, 2.0 * t * 255.0, 255.0)
    g = np.where(t <= 0.5, 2.0 * t * 255.0, (2.0 - 2.0 * t) * 255.0)
    b = np.where(t <= 0.5, 255.0, (2.0 - 2.0 * t) * 255.0)
    rgb = np.stack([r, g, b], axis=-1)

    if overlay is not None:
        src = check_gray_image(overlay)
        if src.shape != v.shape:
            raise InvalidArgumentError("overlay image shape must match the map")
        rgb = OVERLAY_ALPHA * rgb + (1.0 - OVERLAY_ALPHA) * src[..., None]

    out = np.rint(rgb).astype(np.uint8)
    out[~finite] = 0
    return out


def write_png(rgb: np.ndarray, path) -> None:
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")


def write_grid_csv(pmap: ProbabilityMap, path) -> None:
    """Rows (x, y, ln_p) for every grid sample; NaN spelled 'nan'."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "ln_p"])
        gh, gw = pmap.grid_values.shape
        for v in range(gh):
            for u in range(gw):
                writer.writerow([u * pmap.stride, v * pmap.stride,
                                 repr(float(pmap.grid_values[v, u]))])


def write_grid_binary(pmap: ProbabilityMap, path) -> None:
    """Raw little-endian float64 grid plus a JSON sidecar at path + '.json'."""
    grid = np.ascontiguousarray(pmap.grid_values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(grid.tobytes())
    sidecar = {
        "width": pmap.width,
        "height": pmap.height,
        "stride": pmap.stride,
        "grid_height": grid.shape[0],
        "grid_width": grid.shape[1],
        "dtype": "<f8",
        "order": "row-major",
    }
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
