"""Weak and strong image augmentation on (C, H, W) arrays in [0, 1].

Weak: horizontal flip (p=1/2) plus a small integer translation with edge
padding.  Strong: a fixed 14-op pool applied op_count times at a shared
magnitude, followed by gray cutout, after the usual recipe.  Geometric ops
resample nearest-neighbor with edge clamping, so every op is exactly
reproducible from its uniform draws.

Each call consumes a fixed number of uniforms whatever the outcome, which
keeps batch and single-image paths interchangeable: the batch variants pull
their uniforms from counter-derived lanes keyed by (run seed, iteration,
dataset index) instead of a sequential generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import uniform_lanes

__all__ = [
    "AugmentPolicy",
    "weak_augment",
    "strong_augment",
    "weak_augment_batch",
    "strong_augment_batch",
    "STRONG_OP_NAMES",
]

MAX_MAGNITUDE = 30


@dataclass(frozen=True)
class AugmentPolicy:
    kind: str = "strong"
    op_count: int = 2
    magnitude: int = 10
    cutout_fraction: float = 0.5

    def __post_init__(self):
        if self.kind not in ("weak", "strong"):
            raise ValueError(f"kind must be 'weak' or 'strong', got {self.kind!r}")
        if not 0 <= self.magnitude <= MAX_MAGNITUDE:
            raise ValueError(f"magnitude must lie in [0, {MAX_MAGNITUDE}]")
        if not 0 <= self.cutout_fraction <= 0.5:
            raise ValueError("cutout_fraction must lie in [0, 0.5]")
        if self.op_count < 0:
            raise ValueError("op_count must be non-negative")


# ---------------------------------------------------------------------------
# op implementations; each takes (image, severity v in [0,1], sign +-1)


def _warp(img: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    h, w = img.shape[1:]
    ys = np.clip(np.rint(sy).astype(np.int64), 0, h - 1)
    xs = np.clip(np.rint(sx).astype(np.int64), 0, w - 1)
    return img[:, ys, xs]


def _grid(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h, w = img.shape[1:]
    return np.meshgrid(
        np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij"
    )


def _blend(base: np.ndarray, img: np.ndarray, factor: float) -> np.ndarray:
    return base + factor * (img - base)


def _op_identity(img, v, sign):
    return img


def _op_autocontrast(img, v, sign):
    lo = img.min(axis=(1, 2), keepdims=True)
    hi = img.max(axis=(1, 2), keepdims=True)
    span = np.where(hi - lo > 1e-6, hi - lo, 1.0)
    return (img - lo) / span


def _op_brightness(img, v, sign):
    return img * (1.0 + sign * 0.9 * v)


def _luma(img):
    if img.shape[0] == 3:
        gray = 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]
    else:
        gray = img.mean(axis=0)
    return np.broadcast_to(gray, img.shape)


def _op_color_shift(img, v, sign):
    return _blend(_luma(img), img, 1.0 + sign * 0.9 * v)


def _op_contrast(img, v, sign):
    return _blend(img.mean(), img, 1.0 + sign * 0.9 * v)


def _op_equalize(img, v, sign):
    out = np.empty_like(img)
    for c in range(img.shape[0]):
        quantized = np.clip((img[c] * 255.0).astype(np.int64), 0, 255)
        hist = np.bincount(quantized.reshape(-1), minlength=256)
        cdf = hist.cumsum()
        low = cdf[quantized.min()]
        total = cdf[-1]
        if total == low:
            out[c] = img[c]
            continue
        lut = (cdf - low) / (total - low)
        out[c] = lut[quantized]
    return out


def _op_posterize(img, v, sign):
    bits = int(round(8 - 4 * v))
    keep = 256 - (1 << (8 - bits))
    quantized = np.clip((img * 255.0).astype(np.int64), 0, 255) & keep
    return quantized / 255.0


def _op_rotate(img, v, sign):
    theta = np.deg2rad(30.0 * v) * sign
    yy, xx = _grid(img)
    h, w = img.shape[1:]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    sy = cy + cos_t * (yy - cy) + sin_t * (xx - cx)
    sx = cx - sin_t * (yy - cy) + cos_t * (xx - cx)
    return _warp(img, sy, sx)


def _op_sharpness(img, v, sign):
    # 3x3 smoothing with edge-replicated borders, then blend away or toward
    padded = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="edge")
    acc = np.zeros_like(img, dtype=np.float64)
    weights = ((1, 1, 1), (1, 5, 1), (1, 1, 1))
    for dy in range(3):
        for dx in range(3):
            acc += weights[dy][dx] * padded[
                :, dy : dy + img.shape[1], dx : dx + img.shape[2]
            ]
    smooth = acc / 13.0
    return _blend(smooth, img, 1.0 + sign * 0.9 * v)


def _op_shear_x(img, v, sign):
    s = sign * 0.3 * v
    yy, xx = _grid(img)
    cy = (img.shape[1] - 1) / 2.0
    return _warp(img, yy, xx - s * (yy - cy))


def _op_shear_y(img, v, sign):
    s = sign * 0.3 * v
    yy, xx = _grid(img)
    cx = (img.shape[2] - 1) / 2.0
    return _warp(img, yy - s * (xx - cx), xx)


def _op_solarize(img, v, sign):
    threshold = 1.0 - v
    return np.where(img >= threshold, 1.0 - img, img)


def _op_translate_x(img, v, sign):
    d = sign * 0.3 * v * img.shape[2]
    yy, xx = _grid(img)
    return _warp(img, yy, xx - d)


def _op_translate_y(img, v, sign):
    d = sign * 0.3 * v * img.shape[1]
    yy, xx = _grid(img)
    return _warp(img, yy - d, xx)


STRONG_OPS = (
    ("identity", _op_identity),
    ("autocontrast", _op_autocontrast),
    ("brightness", _op_brightness),
    ("color-shift", _op_color_shift),
    ("contrast", _op_contrast),
    ("equalize", _op_equalize),
    ("posterize", _op_posterize),
    ("rotate", _op_rotate),
    ("sharpness", _op_sharpness),
    ("shear-x", _op_shear_x),
    ("shear-y", _op_shear_y),
    ("solarize", _op_solarize),
    ("translate-x", _op_translate_x),
    ("translate-y", _op_translate_y),
)
STRONG_OP_NAMES = tuple(name for name, _ in STRONG_OPS)


# ---------------------------------------------------------------------------
# pipelines


def _weak_from_uniforms(image: np.ndarray, u: np.ndarray) -> np.ndarray:
    h, w = image.shape[1:]
    out = image
    if u[0] < 0.5:
        out = out[:, :, ::-1]
    max_shift = h // 8
    if max_shift:
        span = 2 * max_shift + 1
        dy = min(int(u[1] * span), span - 1) - max_shift
        dx = min(int(u[2] * span), span - 1) - max_shift
        if dy or dx:
            yy, xx = _grid(image)
            out = _warp(out, yy - dy, xx - dx)
    return np.ascontiguousarray(out, dtype=np.float32)


def _strong_from_uniforms(
    image: np.ndarray, u: np.ndarray, policy: AugmentPolicy
) -> np.ndarray:
    out = image.astype(np.float64)
    v = policy.magnitude / MAX_MAGNITUDE
    n_ops = len(STRONG_OPS)
    for j in range(policy.op_count):
        choice = min(int(u[2 * j] * n_ops), n_ops - 1)
        sign = 1.0 if u[2 * j + 1] < 0.5 else -1.0
        out = STRONG_OPS[choice][1](out, v, sign)
    side = int(policy.cutout_fraction * image.shape[1])
    if side:
        h, w = image.shape[1:]
        cy = min(int(u[-2] * h), h - 1)
        cx = min(int(u[-1] * w), w - 1)
        y0, x0 = max(cy - side // 2, 0), max(cx - side // 2, 0)
        out = out.copy()
        out[:, y0 : y0 + side, x0 : x0 + side] = 0.5
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _strong_width(policy: AugmentPolicy) -> int:
    return 2 * policy.op_count + 2


def weak_augment(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Flip with probability 1/2, then shift up to floor(H/8) pixels per axis
    with edge padding.  Consumes exactly 3 uniforms."""
    return _weak_from_uniforms(image, rng.random(3))


def strong_augment(
    image: np.ndarray, rng: np.random.Generator, policy: AugmentPolicy | None = None
) -> np.ndarray:
    """Apply op_count random pool ops at the policy magnitude, then cutout.

    Consumes exactly 2*op_count + 2 uniforms; output clipped to [0, 1].
    """
    policy = policy or AugmentPolicy()
    return _strong_from_uniforms(image, rng.random(_strong_width(policy)), policy)


def weak_augment_batch(
    images: np.ndarray, key: int, t: int, sample_indices: np.ndarray
) -> np.ndarray:
    """Per-sample weak augmentation with uniforms derived from
    (key, t, dataset index); vectorized over the batch."""
    n = len(images)
    if n == 0:
        return images.copy()
    lanes = uniform_lanes(key, t, sample_indices, 3)
    h, w = images.shape[2:]
    out = images.copy()
    flips = lanes[:, 0] < 0.5
    out[flips] = out[flips][:, :, :, ::-1]
    max_shift = h // 8
    if max_shift:
        span = 2 * max_shift + 1
        dy = np.minimum((lanes[:, 1] * span).astype(np.int64), span - 1) - max_shift
        dx = np.minimum((lanes[:, 2] * span).astype(np.int64), span - 1) - max_shift
        ys = np.clip(np.arange(h)[None, :] - dy[:, None], 0, h - 1)
        xs = np.clip(np.arange(w)[None, :] - dx[:, None], 0, w - 1)
        # advanced indices around the channel slice put (n, H, W) first
        gathered = out[
            np.arange(n)[:, None, None], :, ys[:, :, None], xs[:, None, :]
        ]
        out = np.ascontiguousarray(gathered.transpose(0, 3, 1, 2))
    return out


def strong_augment_batch(
    images: np.ndarray,
    key: int,
    t: int,
    sample_indices: np.ndarray,
    policy: AugmentPolicy | None = None,
) -> np.ndarray:
    """Per-sample strong augmentation with uniforms derived from
    (key, t, dataset index)."""
    policy = policy or AugmentPolicy()
    if len(images) == 0:
        return images.copy()
    lanes = uniform_lanes(key, t, sample_indices, _strong_width(policy))
    out = np.empty_like(images)
    for i in range(len(images)):
        out[i] = _strong_from_uniforms(images[i], lanes[i], policy)
    return out
