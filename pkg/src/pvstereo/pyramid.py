"""Image and disparity containers, bilinear resampling, randomized stereo
pyramids, flip augmentation, and disparity file I/O (PFM / 16-bit PNG)."""
from __future__ import annotations

import re
from dataclasses import dataclass

import cv2
import numpy as np

PFM_INVALID = -1.0  # sentinel written for masked pixels; valid disparities are >= 0


@dataclass(frozen=True)
class Image:
    """Floating-point raster with intensities in [0, 1], grayscale or RGB."""

    data: np.ndarray  # (H, W) or (H, W, 3), float32

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim == 3 and d.shape[2] == 1:
            d = d[:, :, 0]
        if d.ndim not in (2, 3) or (d.ndim == 3 and d.shape[2] != 3):
            raise ValueError(f"expected (H,W) or (H,W,3) data, got shape {d.shape}")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise ValueError("empty image")
        if not np.all(np.isfinite(d)):
            raise ValueError("non-finite intensities")
        if d.min() < 0.0 or d.max() > 1.0:
            raise ValueError("intensities must lie in [0, 1]")
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    def gray(self) -> np.ndarray:
        """Luminance plane as a (H, W) float32 array."""
        if self.data.ndim == 2:
            return self.data
        return (self.data @ np.array([0.299, 0.587, 0.114], dtype=np.float32)).astype(
            np.float32
        )


@dataclass(frozen=True)
class DisparityMap:
    """Per-pixel disparity (left-referenced positive) with a validity mask."""

    values: np.ndarray  # (H, W) float32
    mask: np.ndarray  # (H, W) bool

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        m = np.asarray(self.mask, dtype=bool)
        if v.ndim != 2 or v.shape != m.shape:
            raise ValueError("values/mask shape mismatch")
        if m.any():
            vv = v[m]
            if not np.all(np.isfinite(vv)) or vv.min() < 0:
                raise ValueError("valid disparities must be finite and >= 0")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mask", m)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def dense(cls, values: np.ndarray) -> "DisparityMap":
        values = np.asarray(values, dtype=np.float32)
        return cls(values, np.ones(values.shape, dtype=bool))


@dataclass(frozen=True)
class PyramidSpec:
    """Scale schedule for the dual stereo pyramids.

    Level k is downsampled by k + eps with eps drawn uniformly from
    (-1 + guard, 1 - guard); eps is pinned to 0 at level 1 so the finest
    level is always the original pair.
    """

    levels: int = 6
    seed: int = 0
    guard: float = 0.05

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("need at least 2 pyramid levels")
        if not (0.0 < self.guard < 1.0):
            raise ValueError("guard must lie in (0, 1)")


@dataclass(frozen=True)
class PyramidLevel:
    left: Image
    right: Image
    k: int
    scale: float  # realized k + eps (1.0 exactly at k = 1)


def _axis_coords(n_in: int, n_out: int) -> np.ndarray:
    if n_out < 1:
        raise ValueError("output dimension must be >= 1")
    if n_out == 1:
        return np.zeros(1)
    return np.linspace(0.0, n_in - 1.0, n_out)


def _bilinear_plane(arr: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample arr (H, W) or (H, W, C) on the grid ys x xs, edge-clamped."""
    h, w = arr.shape[:2]
    y0 = np.clip(np.floor(ys).astype(np.intp), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.intp), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (np.clip(ys, 0, h - 1) - y0).astype(np.float32)
    wx = (np.clip(xs, 0, w - 1) - x0).astype(np.float32)
    if arr.ndim == 3:
        wy = wy[:, None, None]
        wx = wx[None, :, None]
    else:
        wy = wy[:, None]
        wx = wx[None, :]
    a00 = arr[np.ix_(y0, x0)]
    a01 = arr[np.ix_(y0, x1)]
    a10 = arr[np.ix_(y1, x0)]
    a11 = arr[np.ix_(y1, x1)]
    top = a00 * (1 - wx) + a01 * wx
    bot = a10 * (1 - wx) + a11 * wx
    return (top * (1 - wy) + bot * wy).astype(np.float32)


def resize_bilinear(img: Image, out_h: int, out_w: int) -> Image:
    """Bilinear resample to out_h x out_w with edge-clamped corners."""
    if out_h < 1 or out_w < 1:
        raise ValueError("zero-dimension resize request")
    if out_h == img.height and out_w == img.width:
        return img
    ys = _axis_coords(img.height, out_h)
    xs = _axis_coords(img.width, out_w)
    out = np.clip(_bilinear_plane(img.data, ys, xs), 0.0, 1.0)
    return Image(out)


def resample_with_mask(
    values: np.ndarray, mask: np.ndarray, out_h: int, out_w: int
) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear resample of a masked field.

    An output pixel is valid only when all four bilinear source pixels are
    valid; returned values at invalid pixels are zero.
    """
    h, w = values.shape
    ys = _axis_coords(h, out_h)
    xs = _axis_coords(w, out_w)
    y0 = np.clip(np.floor(ys).astype(np.intp), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.intp), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (np.clip(ys, 0, h - 1) - y0).astype(np.float32)[:, None]
    wx = (np.clip(xs, 0, w - 1) - x0).astype(np.float32)[None, :]
    out = (
        values[np.ix_(y0, x0)] * (1 - wx) * (1 - wy)
        + values[np.ix_(y0, x1)] * wx * (1 - wy)
        + values[np.ix_(y1, x0)] * (1 - wx) * wy
        + values[np.ix_(y1, x1)] * wx * wy
    ).astype(np.float32)
    new_mask = (
        mask[np.ix_(y0, x0)]
        & mask[np.ix_(y0, x1)]
        & mask[np.ix_(y1, x0)]
        & mask[np.ix_(y1, x1)]
    )
    out[~new_mask] = 0.0
    return out, new_mask


def build_dual_pyramids(
    left: Image, right: Image, spec: PyramidSpec
) -> tuple[list[PyramidLevel], list[PyramidLevel]]:
    """Build the two randomized K-level pyramids.

    The first returned group feeds the left-referenced disparity path, the
    second the right-referenced path; each draws its own scale jitter so the
    two paths vote over independent resolutions. Level 1 of either group is
    the untouched input pair. Fixed seed implies bit-identical output.
    """
    if (left.height, left.width) != (right.height, right.width):
        raise ValueError("stereo pair dimensions differ")
    rng = np.random.default_rng(spec.seed)
    groups: list[list[PyramidLevel]] = []
    for _ in range(2):
        levels = [PyramidLevel(left, right, k=1, scale=1.0)]
        for k in range(2, spec.levels + 1):
            eps = rng.uniform(-1.0 + spec.guard, 1.0 - spec.guard)
            s = k + eps
            out_h = max(1, int(round(left.height / s)))
            out_w = max(1, int(round(left.width / s)))
            levels.append(
                PyramidLevel(
                    _decimate(left, out_h, out_w),
                    _decimate(right, out_h, out_w),
                    k=k,
                    scale=s,
                )
            )
        groups.append(levels)
    return groups[0], groups[1]


def _decimate(img: Image, out_h: int, out_w: int) -> Image:
    # area-filtered decimation: point-sampled bilinear aliases dot-scale
    # texture badly at coarse levels, which poisons the cross-scale statistics
    out = cv2.resize(img.data, (out_w, out_h), interpolation=cv2.INTER_AREA)
    return Image(np.clip(out, 0.0, 1.0))


def flip_pair(left: Image, right: Image) -> tuple[Image, Image]:
    """Mirror both images horizontally and swap their roles.

    The mirrored right image becomes the new left image and vice versa,
    which preserves left-referenced positive disparity.
    """
    if (left.height, left.width) != (right.height, right.width):
        raise ValueError("stereo pair dimensions differ")
    new_left = Image(np.ascontiguousarray(right.data[:, ::-1]))
    new_right = Image(np.ascontiguousarray(left.data[:, ::-1]))
    return new_left, new_right


def save_disparity(d: DisparityMap, path, fmt: str | None = None) -> None:
    """Write a disparity map as PFM (lossless) or 16-bit PNG (x256 fixed point).

    PNG16 stores round(256 * disparity) with 0 marking invalid pixels, so it
    cannot represent disparities above 255.99 px.
    """
    path = str(path)
    fmt = _infer_format(path, fmt)
    if fmt == "pfm":
        vals = np.where(d.mask, d.values, np.float32(PFM_INVALID))
        with open(path, "wb") as f:
            f.write(b"Pf\n")
            f.write(f"{d.width} {d.height}\n".encode("ascii"))
            f.write(b"-1.0\n")
            f.write(np.flipud(vals).astype("<f4").tobytes())
    elif fmt == "png16":
        if d.mask.any() and d.values[d.mask].max() > 255.99:
            raise ValueError("disparity exceeds 255.99 px, not representable in PNG16")
        enc = np.where(d.mask, np.rint(d.values * 256.0), 0.0).astype(np.uint16)
        if not cv2.imwrite(path, enc):
            raise OSError(f"failed to write {path}")
    else:
        raise ValueError(f"unknown disparity format {fmt!r}")


def load_disparity(path, fmt: str | None = None) -> DisparityMap:
    path = str(path)
    fmt = _infer_format(path, fmt)
    if fmt == "pfm":
        with open(path, "rb") as f:
            header = f.readline().strip()
            if header != b"Pf":
                raise ValueError("malformed PFM header (expected grayscale 'Pf')")
            dims = f.readline().decode("ascii")
            m = re.match(r"^\s*(\d+)\s+(\d+)\s*$", dims)
            if m is None:
                raise ValueError("malformed PFM dimensions line")
            w, h = int(m.group(1)), int(m.group(2))
            scale = float(f.readline().decode("ascii").strip())
            dtype = "<f4" if scale < 0 else ">f4"
            raw = np.frombuffer(f.read(4 * h * w), dtype=dtype)
            if raw.size != h * w:
                raise ValueError("truncated PFM payload")
        vals = np.flipud(raw.reshape(h, w)).astype(np.float32)
        mask = vals >= 0.0
        return DisparityMap(np.where(mask, vals, 0.0), mask)
    if fmt == "png16":
        enc = cv2.imread(path, cv2.IMREAD_UNCHANGED)
        if enc is None:
            raise OSError(f"failed to read {path}")
        if enc.ndim != 2 or enc.dtype != np.uint16:
            raise ValueError("expected a single-channel 16-bit PNG")
        mask = enc > 0
        return DisparityMap((enc / 256.0).astype(np.float32) * mask, mask)
    raise ValueError(f"unknown disparity format {fmt!r}")


def _infer_format(path: str, fmt: str | None) -> str:
    if fmt is not None:
        return fmt.lower()
    if path.lower().endswith(".pfm"):
        return "pfm"
    if path.lower().endswith(".png"):
        return "png16"
    raise ValueError(f"cannot infer disparity format from {path!r}")


def colorize_disparity(d: DisparityMap, max_d: float) -> Image:
    """Render a disparity map through a fixed color ramp; invalid pixels black."""
    if max_d <= 0:
        raise ValueError("max_d must be positive")
    from matplotlib import colormaps

    t = np.clip(d.values / max_d, 0.0, 1.0)
    rgb = colormaps["turbo"](t)[:, :, :3].astype(np.float32)
    rgb[~d.mask] = 0.0
    return Image(rgb)
