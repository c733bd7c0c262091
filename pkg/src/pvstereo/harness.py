"""Synthetic random-dot stereo scenes with exact ground truth, plus the
evaluation metrics. Everything the quantitative tests check against lives
here, so it stays independent of the matching and refinement code paths."""
from __future__ import annotations

import os
from dataclasses import dataclass

import cv2
import numpy as np

from .pyramid import DisparityMap, Image, load_disparity, save_disparity


@dataclass(frozen=True)
class SyntheticScene:
    left: Image
    right: Image
    truth: DisparityMap  # dense, left-referenced
    occlusion: np.ndarray  # (H, W) bool, True where the left pixel is unmatched


def _shift_values(kind: str, h: int, w: int, params: tuple[float, ...]) -> np.ndarray:
    if kind == "constant":
        (s,) = params
        return np.full((h, w), s, dtype=np.float64)
    if kind == "ramp":
        s0, s1 = params
        rows = np.linspace(s0, s1, h)[:, None]
        return np.broadcast_to(rows, (h, w)).copy()
    if kind == "two_plane":
        s_bg, s_fg = params
        field = np.full((h, w), s_bg, dtype=np.float64)
        y0, y1 = h // 4, 3 * h // 4
        x0, x1 = w // 4, 3 * w // 4
        field[y0:y1, x0:x1] = s_fg
        return field
    raise ValueError(f"unknown shift field kind {kind!r}")


def make_rds(
    h: int,
    w: int,
    kind: str = "constant",
    params: tuple[float, ...] = (7.0,),
    density: float = 0.5,
    seed: int = 0,
) -> SyntheticScene:
    """Random-dot stereogram with an exactly known disparity field.

    The right image is Bernoulli dot noise smoothed by one 3x3 box pass; the
    left image is the right image inversely warped by the disparity field, so
    warping right by the truth reproduces left bit-exactly at unoccluded
    pixels (exactly so for integer shifts). Occluded pixels — those whose
    right-image correspondence is covered by a nearer surface or falls off
    the frame — are filled with independent dot noise.
    """
    field = _shift_values(kind, h, w, params)
    if field.min() < 0:
        raise ValueError("negative disparities are not representable")
    if field.max() >= w / 4:
        raise ValueError("shift exceeds w/4 bound")
    rng = np.random.default_rng(seed)
    base = (rng.random((h, w)) < density).astype(np.float32)
    right = cv2.blur(base, (3, 3)).astype(np.float32)

    # Left pixel (i, j) looks at right column j - D(i, j).
    xs = np.arange(w, dtype=np.float64)[None, :] - field
    occ = _occlusion_from_targets(xs)
    x0 = np.clip(np.floor(xs).astype(np.intp), 0, w - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    frac = (np.clip(xs, 0, w - 1) - x0).astype(np.float32)
    rows = np.arange(h)[:, None]
    left = (right[rows, x0] * (1 - frac) + right[rows, x1] * frac).astype(np.float32)
    noise = (rng.random((h, w)) < density).astype(np.float32)
    left = np.where(occ, cv2.blur(noise, (3, 3)), left).astype(np.float32)

    return SyntheticScene(
        Image(left),
        Image(right),
        DisparityMap.dense(field.astype(np.float32)),
        occ,
    )


def _occlusion_from_targets(xs: np.ndarray) -> np.ndarray:
    """Left pixels whose right-image column is reused by a pixel further right
    (larger disparity wins the depth ordering) or lies outside the frame."""
    h, w = xs.shape
    occ = xs < 0.0
    # suffix minimum of target columns over j' > j, per row
    suffix = np.minimum.accumulate(xs[:, ::-1], axis=1)[:, ::-1]
    occ[:, :-1] |= suffix[:, 1:] <= xs[:, :-1]
    return occ


def aepe(pred: DisparityMap, truth: DisparityMap) -> float:
    """Mean absolute disparity error over pixels valid in both maps."""
    if pred.values.shape != truth.values.shape:
        raise ValueError("dimensions differ")
    m = pred.mask & truth.mask
    if not m.any():
        raise ValueError("no co-valid pixels")
    return float(np.abs(pred.values[m].astype(np.float64) - truth.values[m]).mean())


def f1_3px(pred: DisparityMap, truth: DisparityMap) -> float:
    """Percentage of co-valid pixels with absolute error strictly above 3 px."""
    if pred.values.shape != truth.values.shape:
        raise ValueError("dimensions differ")
    m = pred.mask & truth.mask
    if not m.any():
        raise ValueError("no co-valid pixels")
    err = np.abs(pred.values[m].astype(np.float64) - truth.values[m])
    return float(100.0 * (err > 3.0).mean())


def density(d: DisparityMap) -> float:
    """Valid-pixel percentage."""
    return float(100.0 * d.mask.mean())


def save_scene(scene: SyntheticScene, out_dir) -> None:
    """Persist a scene as left/right 8-bit PNGs, truth PFM, occlusion PNG."""
    out_dir = str(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    for name, img in (("left", scene.left), ("right", scene.right)):
        enc = np.rint(img.gray() * 255.0).astype(np.uint8)
        cv2.imwrite(os.path.join(out_dir, f"{name}.png"), enc)
    save_disparity(scene.truth, os.path.join(out_dir, "truth.pfm"))
    cv2.imwrite(
        os.path.join(out_dir, "occlusion.png"),
        (scene.occlusion * 255).astype(np.uint8),
    )


def load_scene(scene_dir) -> SyntheticScene:
    scene_dir = str(scene_dir)
    left = cv2.imread(os.path.join(scene_dir, "left.png"), cv2.IMREAD_GRAYSCALE)
    right = cv2.imread(os.path.join(scene_dir, "right.png"), cv2.IMREAD_GRAYSCALE)
    occ = cv2.imread(os.path.join(scene_dir, "occlusion.png"), cv2.IMREAD_GRAYSCALE)
    if left is None or right is None or occ is None:
        raise OSError(f"incomplete scene directory {scene_dir}")
    truth = load_disparity(os.path.join(scene_dir, "truth.pfm"))
    return SyntheticScene(
        Image(left / 255.0), Image(right / 255.0), truth, occ > 0
    )
