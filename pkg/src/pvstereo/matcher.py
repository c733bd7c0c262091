"""Windowed block matching with NCC or SAD cost, winner-takes-all selection,
parabolic subpixel refinement, and normalized confidence output."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.ndimage import uniform_filter

from .pyramid import DisparityMap, Image

_VAR_EPS = 1e-10  # windows with variance below this count as textureless


class CostKind(Enum):
    NCC = "ncc"
    SAD = "sad"


class Direction(Enum):
    LEFT_REFERENCE = "left"
    RIGHT_REFERENCE = "right"


@dataclass(frozen=True)
class MatchParams:
    window_radius: int = 3  # 7x7 window
    max_disparity: int = 64
    cost_kind: CostKind = CostKind.NCC
    subpixel: bool = True
    direction: Direction = Direction.LEFT_REFERENCE

    def __post_init__(self):
        if self.window_radius < 1:
            raise ValueError("window_radius must be >= 1")
        if self.max_disparity < 1:
            raise ValueError("max_disparity must be >= 1")


@dataclass(frozen=True)
class ConfidenceMap:
    """Normalized match quality in [0, 1]; higher means a better match."""

    values: np.ndarray  # (H, W) float32

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise ValueError("confidence must be 2-D")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("confidence out of [0, 1]")
        object.__setattr__(self, "values", v)


def _window_mean(a: np.ndarray, radius: int) -> np.ndarray:
    return uniform_filter(a, size=2 * radius + 1, mode="constant")


def _shift_columns(a: np.ndarray, d: int, direction: Direction) -> np.ndarray:
    """Target image resampled so column j holds the candidate correspondence.

    Left reference looks at target column j - d, right reference at j + d.
    Columns whose source falls outside the image are zero-filled and later
    invalidated by the border mask.
    """
    out = np.zeros_like(a)
    if d == 0:
        return a.copy()
    if direction is Direction.LEFT_REFERENCE:
        out[:, d:] = a[:, :-d]
    else:
        out[:, :-d] = a[:, d:]
    return out


def block_match(
    left: Image, right: Image, p: MatchParams
) -> tuple[DisparityMap, ConfidenceMap]:
    """Dense WTA block matching over d in [0, max_disparity].

    Pixels whose matching window (in either image) leaves the frame for every
    candidate, and pixels whose reference window has zero variance under NCC,
    are masked invalid rather than guessed. Ties break toward the smaller
    disparity so output is deterministic.
    """
    h, w = left.height, left.width
    if (h, w) != (right.height, right.width):
        raise ValueError("stereo pair dimensions differ")
    if p.max_disparity >= w:
        raise ValueError("max_disparity must be smaller than image width")
    r = p.window_radius
    if 2 * r + 1 > h or 2 * r + 1 > w:
        raise ValueError("matching window larger than image")

    if p.direction is Direction.LEFT_REFERENCE:
        ref, tgt = left.gray(), right.gray()
    else:
        ref, tgt = right.gray(), left.gray()
    ref = ref.astype(np.float64)
    tgt = tgt.astype(np.float64)

    n_cand = p.max_disparity + 1
    area = (2 * r + 1) ** 2
    ys, xs = np.mgrid[0:h, 0:w]
    in_frame = (ys >= r) & (ys < h - r) & (xs >= r) & (xs < w - r)

    if p.cost_kind is CostKind.NCC:
        mu_ref = _window_mean(ref, r)
        var_ref = _window_mean(ref * ref, r) - mu_ref * mu_ref
        score = np.full((h, w, n_cand), -np.inf, dtype=np.float64)
    else:
        score = np.full((h, w, n_cand), np.inf, dtype=np.float64)

    valid_cand = np.zeros((h, w, n_cand), dtype=bool)
    for d in range(n_cand):
        shifted = _shift_columns(tgt, d, p.direction)
        if p.direction is Direction.LEFT_REFERENCE:
            cand_ok = in_frame & (xs - d >= r)
        else:
            cand_ok = in_frame & (xs + d < w - r)
        if p.cost_kind is CostKind.NCC:
            mu_s = _window_mean(shifted, r)
            var_s = _window_mean(shifted * shifted, r) - mu_s * mu_s
            cov = _window_mean(ref * shifted, r) - mu_ref * mu_s
            cand_ok = cand_ok & (var_ref > _VAR_EPS) & (var_s > _VAR_EPS)
            denom = np.sqrt(np.clip(var_ref * var_s, _VAR_EPS**2, None))
            ncc = np.clip(cov / denom, -1.0, 1.0)
            score[:, :, d] = np.where(cand_ok, ncc, -np.inf)
        else:
            sad = _window_mean(np.abs(ref - shifted), r) * area
            score[:, :, d] = np.where(cand_ok, sad, np.inf)
        valid_cand[:, :, d] = cand_ok

    if p.cost_kind is CostKind.NCC:
        best = np.argmax(score, axis=2)
    else:
        best = np.argmin(score, axis=2)
    mask = np.take_along_axis(valid_cand, best[:, :, None], axis=2)[:, :, 0]
    best_score = np.take_along_axis(score, best[:, :, None], axis=2)[:, :, 0]

    disp = best.astype(np.float32)
    if p.subpixel:
        interior = mask & (best >= 1) & (best <= p.max_disparity - 1)
        lo = np.take_along_axis(score, np.maximum(best - 1, 0)[:, :, None], axis=2)[
            :, :, 0
        ]
        hi = np.take_along_axis(
            score, np.minimum(best + 1, p.max_disparity)[:, :, None], axis=2
        )[:, :, 0]
        lo_ok = np.take_along_axis(
            valid_cand, np.maximum(best - 1, 0)[:, :, None], axis=2
        )[:, :, 0]
        hi_ok = np.take_along_axis(
            valid_cand, np.minimum(best + 1, p.max_disparity)[:, :, None], axis=2
        )[:, :, 0]
        interior &= lo_ok & hi_ok
        with np.errstate(divide="ignore", invalid="ignore"):
            denom = lo - 2.0 * best_score + hi
            good = np.isfinite(denom) & (np.abs(denom) > 1e-12)
            offset = np.where(good, (lo - hi) / np.where(good, 2.0 * denom, 1.0), 0.0)
        offset = np.clip(offset, -0.5, 0.5)
        disp = np.where(interior, disp + offset.astype(np.float32), disp)

    if p.cost_kind is CostKind.NCC:
        conf = (best_score + 1.0) / 2.0
    else:
        conf = 1.0 - best_score / area
    conf = np.where(mask, np.clip(conf, 0.0, 1.0), 0.0).astype(np.float32)
    disp = np.where(mask, np.maximum(disp, 0.0), 0.0).astype(np.float32)
    return DisparityMap(disp, mask), ConfidenceMap(conf)


def match_both_views(
    left: Image, right: Image, p: MatchParams
) -> tuple[DisparityMap, ConfidenceMap, DisparityMap, ConfidenceMap]:
    """Run block matching once per reference direction."""
    from dataclasses import replace

    d_l, c_l = block_match(left, right, replace(p, direction=Direction.LEFT_REFERENCE))
    d_r, c_r = block_match(left, right, replace(p, direction=Direction.RIGHT_REFERENCE))
    return d_l, c_l, d_r, c_r
