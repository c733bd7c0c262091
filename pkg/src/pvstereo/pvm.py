"""Multi-scale consistency voting: cross-scale disparity/confidence statistics,
threshold voting, semi-dense selection, and left-right consistency fusion."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .matcher import ConfidenceMap, Direction, MatchParams, block_match
from .pyramid import (
    DisparityMap,
    Image,
    PyramidSpec,
    build_dual_pyramids,
    resample_with_mask,
)


@dataclass(frozen=True)
class VotingThresholds:
    kappa1: float = 1.0  # disparity-std threshold, pixels
    kappa2: float = 0.1  # confidence-std threshold

    def __post_init__(self):
        if self.kappa1 <= 0 or self.kappa2 <= 0:
            raise ValueError("thresholds must be positive")


@dataclass(frozen=True)
class ConsistencyField:
    """Per-pixel cross-scale standard deviations and valid-level counts.

    sigma_d/sigma_c are undefined (and `defined` is False) where fewer than
    two pyramid levels produced a valid match.
    """

    sigma_d: np.ndarray  # (H, W) float32, population std of disparity
    sigma_c: np.ndarray  # (H, W) float32, population std of confidence
    count: np.ndarray  # (H, W) int32, number of valid levels
    defined: np.ndarray  # (H, W) bool


def align_to_full_res(
    d: DisparityMap, c: ConfidenceMap, scale: float, out_h: int, out_w: int
) -> tuple[DisparityMap, ConfidenceMap]:
    """Upsample one pyramid level's maps onto the full-resolution grid.

    Disparity values are multiplied by the horizontal scale factor since
    disparity is proportional to image width; an output pixel is valid only
    when all four bilinear sources are valid.
    """
    if scale < 1.0:
        raise ValueError("scale must be >= 1")
    if (out_h, out_w) == (d.height, d.width):
        vals = d.values * np.float32(scale)
        return DisparityMap(np.where(d.mask, vals, 0.0), d.mask.copy()), c
    vals, mask = resample_with_mask(d.values, d.mask, out_h, out_w)
    vals = np.where(mask, vals * np.float32(scale), 0.0).astype(np.float32)
    conf, _ = resample_with_mask(c.values, d.mask, out_h, out_w)
    return DisparityMap(vals, mask), ConfidenceMap(np.clip(conf, 0.0, 1.0))


def consistency_stats(
    levels: list[tuple[DisparityMap, ConfidenceMap]],
) -> ConsistencyField:
    """Population standard deviation across valid levels, per pixel."""
    if len(levels) < 2:
        raise ValueError("need at least 2 levels")
    d = np.stack([lv.values for lv, _ in levels]).astype(np.float64)
    c = np.stack([cv.values for _, cv in levels]).astype(np.float64)
    m = np.stack([lv.mask for lv, _ in levels])
    n = m.sum(axis=0)
    defined = n >= 2
    safe_n = np.maximum(n, 1)

    def _std(x):
        s1 = (x * m).sum(axis=0) / safe_n
        s2 = (x * x * m).sum(axis=0) / safe_n
        return np.sqrt(np.clip(s2 - s1 * s1, 0.0, None)).astype(np.float32)

    sd = _std(d)
    sc = _std(c)
    sd[~defined] = 0.0
    sc[~defined] = 0.0
    return ConsistencyField(sd, sc, n.astype(np.int32), defined)


def vote(field: ConsistencyField, t: VotingThresholds) -> np.ndarray:
    """Voting map V in {0, 1, 2}; V = 0 marks cross-scale-consistent pixels.

    Each component contributes a vote when its std reaches the threshold
    (>= , not >). Pixels with undefined statistics are fully rejected.
    """
    v = (field.sigma_d >= t.kappa1).astype(np.uint8) + (
        field.sigma_c >= t.kappa2
    ).astype(np.uint8)
    v[~field.defined] = 2
    return v


def select_semidense(
    levels: list[tuple[DisparityMap, ConfidenceMap]], v: np.ndarray
) -> DisparityMap:
    """Keep the full-resolution (first-level) disparity where V = 0."""
    full = levels[0][0]
    if v.shape != full.values.shape:
        raise ValueError("voting map shape mismatch")
    mask = (v == 0) & full.mask
    return DisparityMap(np.where(mask, full.values, 0.0), mask)


def lrdcc(d_left: DisparityMap, d_right: DisparityMap, tol: float = 1.0) -> DisparityMap:
    """Left-right consistency fusion.

    A left pixel (i, j) survives iff the right-referenced map, sampled
    linearly at (i, j - d_left), is valid and agrees within tol pixels.
    """
    if (d_left.height, d_left.width) != (d_right.height, d_right.width):
        raise ValueError("dimensions differ")
    h, w = d_left.values.shape
    xs = np.arange(w, dtype=np.float64)[None, :] - d_left.values
    inside = (xs >= 0.0) & (xs <= w - 1)
    x0 = np.clip(np.floor(xs).astype(np.intp), 0, w - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    frac = (np.clip(xs, 0, w - 1) - x0).astype(np.float32)
    rows = np.arange(h)[:, None]
    rv = d_right.values
    rm = d_right.mask
    sampled = rv[rows, x0] * (1 - frac) + rv[rows, x1] * frac
    sample_ok = inside & rm[rows, x0] & rm[rows, x1]
    keep = d_left.mask & sample_ok & (np.abs(d_left.values - sampled) <= tol)
    return DisparityMap(np.where(keep, d_left.values, 0.0), keep)


def pvm_pipeline(
    left: Image,
    right: Image,
    spec: PyramidSpec = PyramidSpec(),
    mp: MatchParams = MatchParams(),
    t: VotingThresholds = VotingThresholds(),
    tol: float = 1.0,
) -> tuple[DisparityMap, np.ndarray]:
    """Full pseudo-label pipeline on one rectified pair.

    Matches every level of both randomized pyramids (left-referenced on the
    first group, right-referenced on the second), aligns all levels to full
    resolution, votes on cross-scale consistency per side, then fuses the two
    semi-dense maps with a left-right consistency check. Returns the fused
    semi-dense map and the left-side voting map.
    """
    red, blue = build_dual_pyramids(left, right, spec)
    h, w = left.height, left.width

    def _side(levels, direction):
        aligned = []
        for lv in levels:
            scale = w / lv.left.width
            md = max(1, math.ceil(mp.max_disparity / scale))
            md = min(md, lv.left.width - 1)
            params = replace(mp, direction=direction, max_disparity=md)
            dm, cm = block_match(lv.left, lv.right, params)
            aligned.append(align_to_full_res(dm, cm, scale, h, w))
        field = consistency_stats(aligned)
        v = vote(field, t)
        return select_semidense(aligned, v), v

    semi_l, v_l = _side(red, Direction.LEFT_REFERENCE)
    semi_r, _ = _side(blue, Direction.RIGHT_REFERENCE)
    fused = lrdcc(semi_l, semi_r, tol)
    return fused, v_l
