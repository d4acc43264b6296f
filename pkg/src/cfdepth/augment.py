"""Training-time augmentation: crop + depth rescale, rotation/flip/color
jitter, and mask dropout with excluded-pixel bookkeeping.

A smaller crop resized to the network input mimics a closer camera, so
both depth maps are divided by the crop fraction alpha. Rotation resamples
on the image plane and zooms to the largest inscribed window; depth VALUES
are left untouched (a documented approximation, adequate for +-5 deg).
Ground-truth normals are never carried through the warps: they are
recomputed from the final rescaled target depth at the loss resolution,
so they can never be stale.

All randomness for one sample comes from a single seeded stream with a
fixed draw order (crop fraction, anchor, angle, flip, color, dropout);
new parameters must be appended after the existing draws.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidInput
from .imgeo import (
    DepthMap,
    Intrinsics,
    ObjectMask,
    RgbImage,
    bilinear_resize,
    center_crop_box,
    crop,
    intrinsics_for_resize,
    rescale_depth_for_crop,
    resize_nearest,
)
from .normals import BinGrid, gradient_normals, quantized_smoothed_normals
from .synthgen import SampleRecord

__all__ = [
    "AugmentConfig",
    "AugmentedSample",
    "random_crop_rescale",
    "geometric_color_jitter",
    "mask_dropout",
    "augment_sample",
]


@dataclass(frozen=True)
class AugmentConfig:
    crop_min: float = 2.0 / 3.0
    crop_max: float = 1.0
    rotation_deg: float = 5.0
    flip_prob: float = 0.5
    color_min: float = 0.8
    color_max: float = 1.2
    mask_dropout_rate: float = 0.1

    def __post_init__(self):
        if not (0 < self.crop_min <= self.crop_max <= 1):
            raise InvalidInput("crop range must satisfy 0 < min <= max <= 1")
        if self.rotation_deg < 0:
            raise InvalidInput("rotation range must be non-negative")
        if not (0 <= self.flip_prob <= 1):
            raise InvalidInput("flip probability must be in [0, 1]")
        if not (0 < self.color_min <= self.color_max):
            raise InvalidInput("color range must satisfy 0 < min <= max")
        if not (0 <= self.mask_dropout_rate <= 1):
            raise InvalidInput("mask dropout rate must be in [0, 1]")


@dataclass(frozen=True)
class AugmentedSample:
    """Train-ready sample: network-input fields plus loss-resolution truth."""

    rgb: np.ndarray          # (3, in_h, in_w) float32
    mask: np.ndarray         # (in_h, in_w) uint8, post-dropout network input
    flipped: np.ndarray      # (in_h, in_w) bool, dropout-flipped positions
    target_depth: np.ndarray  # (out_h, out_w) float32
    normals: np.ndarray      # (3, out_h, out_w) float32
    conf: np.ndarray         # (out_h, out_w) float32
    valid: np.ndarray        # (out_h, out_w) float64 in {0, 1}
    intrinsics_out: Intrinsics


def random_crop_rescale(sample: SampleRecord, alpha: float, anchor: tuple[int, int],
                        aspect_w: int = 5, aspect_h: int = 4) -> SampleRecord:
    """Crop a window of fraction alpha of the largest center crop at the
    given top-left anchor, dividing both depth maps by alpha."""
    if not (0 < alpha <= 1):
        raise InvalidInput(f"crop fraction must be in (0, 1], got {alpha}")
    w, h = sample.rgb.width, sample.rgb.height
    _, _, cw0, ch0 = center_crop_box(w, h, aspect_w, aspect_h)
    cw = max(1, int(round(alpha * cw0)))
    ch = max(1, int(round(alpha * ch0)))
    x0, y0 = anchor
    if x0 < 0 or y0 < 0 or x0 + cw > w or y0 + ch > h:
        raise InvalidInput(
            f"crop window ({x0},{y0},{cw},{ch}) outside {w}x{h} image"
        )
    return replace(
        sample,
        rgb=crop(sample.rgb, x0, y0, cw, ch),
        mask=crop(sample.mask, x0, y0, cw, ch),
        depth_with=rescale_depth_for_crop(crop(sample.depth_with, x0, y0, cw, ch), alpha),
        depth_without=rescale_depth_for_crop(crop(sample.depth_without, x0, y0, cw, ch), alpha),
        intrinsics=crop(sample.depth_with, x0, y0, cw, ch).intrinsics,
    )


def _rotation_scale(angle_deg: float, w: int, h: int) -> float:
    """Zoom of the largest aspect-preserving window inside the rotated frame."""
    a = abs(math.radians(angle_deg))
    c, s = math.cos(a), math.sin(a)
    return min(w / (w * c + h * s), h / (w * s + h * c))


def _warp(arr: np.ndarray, angle_deg: float, scale: float, nearest: bool) -> np.ndarray:
    """Inverse-map rotation about the center combined with a zoom of 1/scale."""
    h, w = arr.shape[:2]
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    th = math.radians(angle_deg)
    cos_t, sin_t = math.cos(-th), math.sin(-th)
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    vx = (xs - cx) * scale
    vy = (ys - cy) * scale
    sx = cx + cos_t * vx - sin_t * vy
    sy = cy + sin_t * vx + cos_t * vy
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    if nearest:
        ix = np.rint(sx).astype(np.intp)
        iy = np.rint(sy).astype(np.intp)
        return arr[iy, ix]
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    if arr.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    src = arr.astype(np.float64)
    top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
    bot = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def geometric_color_jitter(sample: SampleRecord, angle_deg: float, flip: bool,
                           color_scale: tuple[float, float, float]) -> SampleRecord:
    """Rotate (with inscribed-window zoom), mirror, and scale RGB channels."""
    rgb = sample.rgb.data
    mask = sample.mask.data
    dw = sample.depth_with.data
    dwo = sample.depth_without.data
    intr = sample.intrinsics
    h, w = mask.shape

    if angle_deg != 0.0:
        s = _rotation_scale(angle_deg, w, h)
        rgb = np.clip(_warp(rgb, angle_deg, s, nearest=False), 0.0, 1.0)
        dw = np.maximum(_warp(dw, angle_deg, s, nearest=False), 0.0)
        dwo = np.maximum(_warp(dwo, angle_deg, s, nearest=False), 0.0)
        mask = _warp(mask, angle_deg, s, nearest=True)
        # The zoom shortens the effective pixel pitch; depth values are
        # deliberately not rescaled here (small-angle approximation).
        intr = Intrinsics(fx=intr.fx / s, fy=intr.fy / s, cx=intr.cx, cy=intr.cy)

    if flip:
        rgb = rgb[:, ::-1]
        dw = dw[:, ::-1]
        dwo = dwo[:, ::-1]
        mask = mask[:, ::-1]
        intr = replace(intr, cx=(w - 1) - intr.cx)

    scale = np.asarray(color_scale, dtype=np.float64)
    if np.any(scale <= 0):
        raise InvalidInput(f"color scales must be positive, got {color_scale}")
    rgb = np.clip(rgb.astype(np.float64) * scale, 0.0, 1.0)

    return replace(
        sample,
        rgb=RgbImage(data=np.ascontiguousarray(rgb).astype(np.float32)),
        mask=ObjectMask(data=np.ascontiguousarray(mask).astype(np.uint8)),
        depth_with=DepthMap(data=np.ascontiguousarray(dw).astype(np.float32), intrinsics=intr),
        depth_without=DepthMap(data=np.ascontiguousarray(dwo).astype(np.float32), intrinsics=intr),
        intrinsics=intr,
    )


def mask_dropout(mask: ObjectMask, rate: float, seed) -> tuple[ObjectMask, np.ndarray]:
    """Independently flip each mask pixel with the given probability.

    Returns the corrupted mask and the boolean map of flipped pixels (for
    loss exclusion). The flips depend only on the seed, never on content.
    """
    if not (0 <= rate <= 1):
        raise InvalidInput(f"dropout rate must be in [0, 1], got {rate}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    flipped = rng.random(mask.data.shape) < rate
    out = np.where(flipped, 1 - mask.data, mask.data).astype(np.uint8)
    return ObjectMask(data=out), flipped


def augment_sample(sample: SampleRecord, seed, config: AugmentConfig = AugmentConfig(),
                   net_in_hw: tuple[int, int] = (64, 80),
                   net_out_hw: tuple[int, int] = (32, 40),
                   empty_mask: bool = False,
                   grid: BinGrid = BinGrid()) -> AugmentedSample:
    """Full augmentation pipeline producing a train-ready sample.

    With empty_mask the network input mask is all-ones (the sample is used
    as a plain depth-prediction target) and the target is the with-object
    depth; otherwise the object mask is used and the target is the
    without-object depth. Dropout applies to both kinds of mask.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    in_h, in_w = net_in_hw
    out_h, out_w = net_out_hw

    # Draw order is part of the format: crop, anchor, angle, flip, color,
    # then dropout inside mask_dropout.
    alpha = float(rng.uniform(config.crop_min, config.crop_max))
    w, h = sample.rgb.width, sample.rgb.height
    _, _, cw0, ch0 = center_crop_box(w, h, in_w, in_h)
    cw = max(1, int(round(alpha * cw0)))
    ch = max(1, int(round(alpha * ch0)))
    ax = int(rng.integers(0, w - cw + 1))
    ay = int(rng.integers(0, h - ch + 1))
    angle = float(rng.uniform(-config.rotation_deg, config.rotation_deg))
    flip = bool(rng.random() < config.flip_prob)
    color = tuple(float(v) for v in rng.uniform(config.color_min, config.color_max, size=3))

    out = random_crop_rescale(sample, alpha, (ax, ay), aspect_w=in_w, aspect_h=in_h)
    out = geometric_color_jitter(out, angle, flip, color)

    rgb_net = bilinear_resize(out.rgb, in_w, in_h)
    mask_net = resize_nearest(out.mask, in_w, in_h)
    if empty_mask:
        mask_net = ObjectMask(data=np.ones((in_h, in_w), dtype=np.uint8))
        target_src = out.depth_with
    else:
        target_src = out.depth_without
    mask_net, flipped = mask_dropout(mask_net, config.mask_dropout_rate, rng)

    target = bilinear_resize(target_src, out_w, out_h)
    raw = gradient_normals(target)
    normals, conf = quantized_smoothed_normals(raw, grid)

    not_flipped_out = resize_nearest((~flipped).astype(np.uint8), out_w, out_h)
    valid = (target.data > 0).astype(np.float64) * not_flipped_out

    return AugmentedSample(
        rgb=np.ascontiguousarray(rgb_net.data.transpose(2, 0, 1)).astype(np.float32),
        mask=mask_net.data,
        flipped=flipped,
        target_depth=target.data,
        normals=np.ascontiguousarray(normals.data.transpose(2, 0, 1)),
        conf=conf.data,
        valid=valid,
        intrinsics_out=target.intrinsics,
    )
