"""Forward numerical core of the iterative refinement network: deterministic
patch features, dot-product cost volume, pooled cost pyramid, bounded lookup,
GRU refinement cell, update head, and x8 upsampling.

Everything here is a pure function of its inputs; weights are plain arrays
loadable from a flat binary sidecar so externally trained parameters can be
replayed. No training happens in this module.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .pyramid import DisparityMap, Image, resample_with_mask

FEATURE_CHANNELS = 256
HIDDEN_CHANNELS = 128
HEAD_CHANNELS = 96
LOOKUP_DISTANCE = 4
NUM_LEVELS = 4
DEFAULT_ITERS = 8

_SIDECAR_MAGIC = b"PVSW"


@dataclass(frozen=True)
class FeatureMap:
    data: np.ndarray  # (H, W, C) float32

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 3:
            raise ValueError("feature map must be (H, W, C)")
        if not np.all(np.isfinite(d)):
            raise ValueError("non-finite features")
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class CostVolumePyramid:
    levels: tuple[np.ndarray, ...]  # level k: (H, W, W / 2**k)

    def __post_init__(self):
        if len(self.levels) != NUM_LEVELS:
            raise ValueError(f"expected {NUM_LEVELS} pyramid levels")


@dataclass(frozen=True)
class GruState:
    h: np.ndarray  # (H, W, hidden)
    d_s: np.ndarray  # (H, W) disparity at 1/8 resolution
    iteration: int = 0


@dataclass(frozen=True)
class GruWeights:
    """Convolution kernels for the three gates, the update head, and the two
    post-upsample convolutions. Kernel layout is (kh, kw, c_in, c_out)."""

    wz: np.ndarray
    bz: np.ndarray
    wr: np.ndarray
    br: np.ndarray
    wh: np.ndarray
    bh: np.ndarray
    head_w1: np.ndarray
    head_b1: np.ndarray
    head_w2: np.ndarray
    head_b2: np.ndarray
    up_w1: np.ndarray
    up_b1: np.ndarray
    up_w2: np.ndarray
    up_b2: np.ndarray

    _FIELDS = (
        "wz", "bz", "wr", "br", "wh", "bh",
        "head_w1", "head_b1", "head_w2", "head_b2",
        "up_w1", "up_b1", "up_w2", "up_b2",
    )

    @property
    def hidden(self) -> int:
        return self.wz.shape[3]

    @staticmethod
    def _shapes(feat_channels: int, hidden: int) -> dict[str, tuple[int, ...]]:
        x_channels = 1 + NUM_LEVELS * (2 * LOOKUP_DISTANCE + 1) + feat_channels
        gate_in = hidden + x_channels
        return {
            "wz": (3, 3, gate_in, hidden),
            "bz": (hidden,),
            "wr": (3, 3, gate_in, hidden),
            "br": (hidden,),
            "wh": (3, 3, gate_in, hidden),
            "bh": (hidden,),
            "head_w1": (3, 3, hidden, HEAD_CHANNELS),
            "head_b1": (HEAD_CHANNELS,),
            "head_w2": (3, 3, HEAD_CHANNELS, 1),
            "head_b2": (1,),
            "up_w1": (3, 3, 1, 1),
            "up_b1": (1,),
            "up_w2": (3, 3, 1, 1),
            "up_b2": (1,),
        }

    @classmethod
    def zeros(
        cls, feat_channels: int = FEATURE_CHANNELS, hidden: int = HIDDEN_CHANNELS
    ) -> "GruWeights":
        shapes = cls._shapes(feat_channels, hidden)
        return cls(**{k: np.zeros(s, dtype=np.float32) for k, s in shapes.items()})

    @classmethod
    def random(
        cls,
        seed: int,
        feat_channels: int = FEATURE_CHANNELS,
        hidden: int = HIDDEN_CHANNELS,
        scale: float = 0.1,
    ) -> "GruWeights":
        """Seeded fan-in-scaled Gaussian weights with identity upsample convs."""
        rng = np.random.default_rng(seed)
        shapes = cls._shapes(feat_channels, hidden)
        arrays = {}
        for name, shape in shapes.items():
            if len(shape) == 4:
                fan_in = shape[0] * shape[1] * shape[2]
                arrays[name] = (
                    rng.standard_normal(shape) * scale / np.sqrt(fan_in)
                ).astype(np.float32)
            else:
                arrays[name] = np.zeros(shape, dtype=np.float32)
        for name in ("up_w1", "up_w2"):
            k = np.zeros(shapes[name], dtype=np.float32)
            k[1, 1, 0, 0] = 1.0
            arrays[name] = k
        return cls(**arrays)

    def save(self, path) -> None:
        with open(str(path), "wb") as f:
            f.write(_SIDECAR_MAGIC)
            f.write(struct.pack("<I", len(self._FIELDS)))
            for name in self._FIELDS:
                arr = np.ascontiguousarray(getattr(self, name), dtype="<f4")
                f.write(struct.pack("<I", arr.ndim))
                f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                f.write(arr.tobytes())

    @classmethod
    def load(cls, path) -> "GruWeights":
        with open(str(path), "rb") as f:
            if f.read(4) != _SIDECAR_MAGIC:
                raise ValueError("not a weight sidecar file")
            (count,) = struct.unpack("<I", f.read(4))
            if count != len(cls._FIELDS):
                raise ValueError(f"expected {len(cls._FIELDS)} tensors, found {count}")
            arrays = {}
            for name in cls._FIELDS:
                (rank,) = struct.unpack("<I", f.read(4))
                shape = struct.unpack(f"<{rank}I", f.read(4 * rank))
                n = int(np.prod(shape))
                buf = f.read(4 * n)
                if len(buf) != 4 * n:
                    raise ValueError("truncated weight sidecar")
                arrays[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
        return cls(**arrays)


def conv2d_same(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 stride-1 convolution with zero padding; x is (H, W, Cin)."""
    h, wd, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if (kh, kw) != (3, 3) or wcin != cin:
        raise ValueError(f"kernel {w.shape} incompatible with input {x.shape}")
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    cols = np.empty((h, wd, 9, cin), dtype=np.float32)
    idx = 0
    for dy in range(3):
        for dx in range(3):
            cols[:, :, idx] = xp[dy : dy + h, dx : dx + wd]
            idx += 1
    out = cols.reshape(h, wd, 9 * cin).astype(np.float64) @ w.reshape(
        9 * cin, cout
    ).astype(np.float64)
    return (out + b).astype(np.float32)


def toy_features(img: Image, channels: int = FEATURE_CHANNELS) -> FeatureMap:
    """Deterministic 1/8-resolution descriptor.

    Each 8x8 patch is flattened, mean-subtracted, L2-normalized, and padded
    (or truncated) to the requested channel count. Constant patches map to
    the zero vector.
    """
    if img.height % 8 or img.width % 8:
        raise ValueError("image dimensions must be divisible by 8")
    g = img.gray().astype(np.float64)
    h8, w8 = img.height // 8, img.width // 8
    patches = g.reshape(h8, 8, w8, 8).transpose(0, 2, 1, 3).reshape(h8, w8, 64)
    patches = patches - patches.mean(axis=2, keepdims=True)
    norms = np.linalg.norm(patches, axis=2, keepdims=True)
    patches = np.where(norms > 1e-6, patches / np.maximum(norms, 1e-6), 0.0)
    if channels >= 64:
        feat = np.zeros((h8, w8, channels), dtype=np.float32)
        feat[:, :, :64] = patches
    else:
        feat = patches[:, :, :channels].astype(np.float32)
    return FeatureMap(feat)


def build_cost_volume(f_l: FeatureMap, f_r: FeatureMap) -> np.ndarray:
    """All-pairs per-row feature dot products: (i, j, k) -> <F_l(i,j), F_r(i,k)>."""
    if f_l.data.shape != f_r.data.shape:
        raise ValueError("feature dimensions differ")
    return np.einsum("ijh,ikh->ijk", f_l.data, f_r.data).astype(np.float32)


def pool_pyramid(m0: np.ndarray) -> CostVolumePyramid:
    """Average-pool the candidate axis into levels of width W / 2**k."""
    if m0.ndim != 3:
        raise ValueError("cost volume must be 3-D")
    if m0.shape[2] % 8:
        raise ValueError("candidate dimension must be divisible by 8")
    levels = [m0.astype(np.float32)]
    for _ in range(NUM_LEVELS - 1):
        prev = levels[-1]
        h, w, n = prev.shape
        levels.append(prev.reshape(h, w, n // 2, 2).mean(axis=3).astype(np.float32))
    return CostVolumePyramid(tuple(levels))


def lookup(
    pyr: CostVolumePyramid, d_s: np.ndarray, d: int = LOOKUP_DISTANCE
) -> np.ndarray:
    """Sample a bounded neighborhood of every pyramid level around the
    current correspondence estimate.

    For pixel (i, j) the correspondence column is j' = j - d_s(i, j); level k
    is sampled at j'/2**k + offset for offset in [-d, d] with linear
    interpolation along the candidate axis, clamping out-of-range positions
    to the boundary value. Output has 4 * (2d + 1) channels.
    """
    if d < 1:
        raise ValueError("lookup distance must be >= 1")
    h, w = d_s.shape
    jj = np.arange(w, dtype=np.float64)[None, :]
    centers = jj - d_s  # j' at level 0
    offsets = np.arange(-d, d + 1, dtype=np.float64)
    outs = []
    for k, level in enumerate(pyr.levels):
        n = level.shape[2]
        pos = centers[:, :, None] / (2**k) + offsets[None, None, :]
        pos = np.clip(pos, 0.0, n - 1)
        i0 = np.floor(pos).astype(np.intp)
        i1 = np.minimum(i0 + 1, n - 1)
        frac = pos - i0
        rows = np.arange(h)[:, None, None]
        cols = np.arange(w)[None, :, None]
        v0 = level[rows, cols, i0]
        v1 = level[rows, cols, i1]
        outs.append(v0 * (1 - frac) + v1 * frac)
    return np.concatenate(outs, axis=2).astype(np.float32)


def gru_step(
    state: GruState, m_l: np.ndarray, f_l: FeatureMap, w: GruWeights
) -> GruState:
    """One gated refinement update followed by the disparity head.

    The hidden state stays inside [-1, 1] whenever it starts there: the
    candidate is a tanh output and the update is a convex combination.
    """
    x = np.concatenate([state.d_s[:, :, None], m_l, f_l.data], axis=2)
    hx = np.concatenate([state.h, x], axis=2)
    z = _sigmoid(conv2d_same(hx, w.wz, w.bz))
    r = _sigmoid(conv2d_same(hx, w.wr, w.br))
    rx = np.concatenate([r * state.h, x], axis=2)
    h_tilde = np.tanh(conv2d_same(rx, w.wh, w.bh))
    h_new = ((1.0 - z) * state.h + z * h_tilde).astype(np.float32)
    a = np.maximum(conv2d_same(h_new, w.head_w1, w.head_b1), 0.0)
    delta = conv2d_same(a, w.head_w2, w.head_b2)[:, :, 0]
    return GruState(h_new, (state.d_s + delta).astype(np.float32), state.iteration + 1)


def upsample_disparity(d_s: np.ndarray, w: GruWeights) -> DisparityMap:
    """x8 bilinear upsample (values scaled by 8) plus the two output convs."""
    h, wd = d_s.shape
    mask = np.ones_like(d_s, dtype=bool)
    up, _ = resample_with_mask(d_s * np.float32(8.0), mask, h * 8, wd * 8)
    out = conv2d_same(up[:, :, None], w.up_w1, w.up_b1)
    out = conv2d_same(out, w.up_w2, w.up_b2)[:, :, 0]
    out = np.maximum(out, 0.0)
    return DisparityMap.dense(out)


def optstereo_forward(
    left: Image, right: Image, w: GruWeights, n_iters: int = DEFAULT_ITERS
) -> list[DisparityMap]:
    """Run the full forward pass, returning every full-resolution iterate."""
    if n_iters < 1:
        raise ValueError("need at least one iteration")
    f_l = toy_features(left, channels=w.wz.shape[2] - w.hidden - 1 - NUM_LEVELS * (2 * LOOKUP_DISTANCE + 1))
    f_r = toy_features(right, channels=f_l.channels)
    pyr = pool_pyramid(build_cost_volume(f_l, f_r))
    h, wd = f_l.height, f_l.width
    state = GruState(
        np.zeros((h, wd, w.hidden), dtype=np.float32),
        np.zeros((h, wd), dtype=np.float32),
    )
    outputs = []
    for _ in range(n_iters):
        m_l = lookup(pyr, state.d_s, LOOKUP_DISTANCE)
        state = gru_step(state, m_l, f_l, w)
        outputs.append(upsample_disparity(state.d_s, w))
    return outputs


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return (1.0 / (1.0 + np.exp(-x))).astype(np.float32)
