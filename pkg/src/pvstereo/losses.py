"""The three-term training objective: semi-dense guiding loss, SSIM + L1
photometric reconstruction with disparity warping, and edge-aware smoothness."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .pyramid import DisparityMap, Image

_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 0.1  # reconstruction weight
    lambda2: float = 0.1  # smoothness weight
    gamma: float = 0.8  # per-iteration decay of the guiding loss
    alpha: float = 0.85  # SSIM share of the photometric term

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must lie in (0, 1]")
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must lie in [0, 1]")


def huber(x: float) -> float:
    """Quadratic below 1, linear above; continuous at the knee."""
    if x < 0:
        raise ValueError("huber expects a non-negative residual")
    return x * x / 2.0 if x < 1.0 else x - 0.5


def _huber_arr(x: np.ndarray) -> np.ndarray:
    return np.where(x < 1.0, x * x / 2.0, x - 0.5)


def guiding_loss(
    preds: list[DisparityMap], labels: DisparityMap, cfg: LossConfig = LossConfig()
) -> float:
    """Decay-weighted Huber loss of every iterate against the semi-dense labels.

    Iterate i gets weight gamma**(N - i); weights are normalized to sum to 1.
    Only label-valid pixels contribute.
    """
    if not labels.mask.any():
        raise ValueError("empty label map")
    n = len(preds)
    m = labels.mask
    n_valid = m.sum()
    weights = np.array([cfg.gamma ** (n - i) for i in range(1, n + 1)])
    total = 0.0
    for wt, pred in zip(weights, preds):
        err = np.abs(labels.values[m].astype(np.float64) - pred.values[m])
        total += wt * _huber_arr(err).sum() / n_valid
    return float(total / weights.sum())


def warp_right_to_left(
    right: Image, d: DisparityMap
) -> tuple[Image, np.ndarray]:
    """Reconstruct the left view by sampling the right image at column j - d.

    Linear interpolation along rows; samples outside the image are masked.
    Integer disparities reproduce right-image pixels exactly.
    """
    if (right.height, right.width) != (d.height, d.width):
        raise ValueError("dimensions differ")
    h, w = d.values.shape
    xs = np.arange(w, dtype=np.float64)[None, :] - d.values
    inside = (xs >= 0.0) & (xs <= w - 1) & d.mask
    x0 = np.clip(np.floor(xs).astype(np.intp), 0, w - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    frac = (np.clip(xs, 0, w - 1) - x0).astype(np.float32)
    rows = np.arange(h)[:, None]
    data = right.data
    if data.ndim == 3:
        frac = frac[:, :, None]
    out = data[rows, x0] * (1 - frac) + data[rows, x1] * frac
    out = np.where(
        inside[:, :, None] if data.ndim == 3 else inside, out, 0.0
    ).astype(np.float32)
    return Image(np.clip(out, 0.0, 1.0)), inside


def ssim3(a: Image, b: Image) -> np.ndarray:
    """Per-pixel structural similarity with 3x3 box-filtered local statistics.

    Returns a (H, W) map in [-1, 1]; multi-channel inputs are averaged over
    channels.
    """
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError("dimensions differ")
    xa = a.data if a.data.ndim == 3 else a.data[:, :, None]
    xb = b.data if b.data.ndim == 3 else b.data[:, :, None]

    def box(x):
        return uniform_filter(x.astype(np.float64), size=(3, 3, 1), mode="nearest")

    mu_a = box(xa)
    mu_b = box(xb)
    var_a = box(xa * xa) - mu_a * mu_a
    var_b = box(xb * xb) - mu_b * mu_b
    cov = box(xa * xb) - mu_a * mu_b
    num = (2 * mu_a * mu_b + _SSIM_C1) * (2 * cov + _SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + _SSIM_C1) * (var_a + var_b + _SSIM_C2)
    out = np.clip(num / den, -1.0, 1.0).mean(axis=2)
    return out.astype(np.float32)


def reconstruction_loss(
    left: Image, recon: Image, mask: np.ndarray, cfg: LossConfig = LossConfig()
) -> float:
    """Masked mean of alpha * (1 - SSIM)/2 + (1 - alpha) * L1."""
    if not mask.any():
        raise ValueError("empty reconstruction mask")
    s = ssim3(left, recon).astype(np.float64)
    la = left.data if left.data.ndim == 3 else left.data[:, :, None]
    ra = recon.data if recon.data.ndim == 3 else recon.data[:, :, None]
    l1 = np.abs(la.astype(np.float64) - ra).mean(axis=2)
    per_pixel = cfg.alpha * (1.0 - s) / 2.0 + (1.0 - cfg.alpha) * l1
    return float(per_pixel[mask].mean())


def smoothness_loss(d: DisparityMap, left: Image) -> float:
    """Disparity gradients down-weighted where the image has strong edges.

    Forward differences; the x term averages over the first W-1 columns and
    the y term over the first H-1 rows.
    """
    if (d.height, d.width) != (left.height, left.width):
        raise ValueError("dimensions differ")
    img = left.data if left.data.ndim == 3 else left.data[:, :, None]
    img = img.astype(np.float64)
    dv = d.values.astype(np.float64)
    gx_d = np.abs(dv[:, 1:] - dv[:, :-1])
    gy_d = np.abs(dv[1:, :] - dv[:-1, :])
    gx_i = np.abs(img[:, 1:] - img[:, :-1]).sum(axis=2)
    gy_i = np.abs(img[1:, :] - img[:-1, :]).sum(axis=2)
    term_x = (gx_d * np.exp(-gx_i)).mean() if gx_d.size else 0.0
    term_y = (gy_d * np.exp(-gy_i)).mean() if gy_d.size else 0.0
    return float(term_x + term_y)


def total_loss(
    preds: list[DisparityMap],
    labels: DisparityMap,
    left: Image,
    right: Image,
    cfg: LossConfig = LossConfig(),
) -> tuple[float, dict[str, float]]:
    """Weighted sum of the three terms.

    The reconstruction and smoothness terms are evaluated on the final
    iterate only; the guiding term sees every iterate.
    """
    final = preds[-1]
    l_p = guiding_loss(preds, labels, cfg)
    recon, mask = warp_right_to_left(right, final)
    l_r = reconstruction_loss(left, recon, mask, cfg)
    l_s = smoothness_loss(final, left)
    total = l_p + cfg.lambda1 * l_r + cfg.lambda2 * l_s
    return total, {
        "guiding": l_p,
        "reconstruction": l_r,
        "smoothness": l_s,
        "total": total,
    }
