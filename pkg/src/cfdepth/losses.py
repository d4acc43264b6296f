"""Training objective: berHu + average-depth + surface-normal terms.

All losses run over (B, 1, h, w) tensors at the network output resolution
and respect a per-pixel 0/1 validity mask: pixels flipped by mask dropout
and pixels with invalid ground truth carry weight 0 and are excluded from
both numerators and denominators. The surface term additionally drops
pixels whose central-difference taps would read an excluded pixel, which
makes every loss bit-invariant to values stored at excluded pixels.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import InvalidInput
from .imgeo import Intrinsics

__all__ = [
    "LossWeights",
    "validity_mask",
    "berhu_loss",
    "avg_depth_loss",
    "surface_normal_loss",
    "total_loss",
]

# Central-difference kernels for the predicted-depth normal.
_KX = np.array([[[[-0.5, 0.0, 0.5]]]])
_KY = np.array([[[[-0.5]], [[0.0]], [[0.5]]]]).reshape(1, 1, 3, 1)

_DOT_FLOOR = 1e-6  # keeps log() finite when normals are near-opposed


@dataclass(frozen=True)
class LossWeights:
    """Term weights (surface, average-depth, berHu)."""

    w1: float = 1.0
    w2: float = 0.5
    w3: float = 1.0

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or self.w3 < 0:
            raise InvalidInput("loss weights must be non-negative")


def validity_mask(gt: np.ndarray, excluded: np.ndarray | None = None) -> np.ndarray:
    """Per-pixel weights: 0 at invalid ground truth and at excluded pixels."""
    valid = (np.asarray(gt) > 0).astype(np.float64)
    if excluded is not None:
        valid = valid * (~np.asarray(excluded, dtype=bool)).astype(np.float64)
    return valid


def _check_inputs(pred: ad.Tensor, gt: np.ndarray, valid: np.ndarray):
    if gt.shape != pred.data.shape or valid.shape != pred.data.shape:
        raise InvalidInput(
            f"shape mismatch: pred {pred.data.shape}, gt {gt.shape}, valid {valid.shape}"
        )
    q = int(np.sum(valid > 0))
    if q == 0:
        raise InvalidInput("no valid pixel in batch")
    return q


def berhu_loss(pred: ad.Tensor, gt: np.ndarray, valid: np.ndarray,
               cutoff: float | None = None) -> ad.Tensor:
    """Mean reverse-Huber residual over valid pixels.

    The cutoff defaults to 0.2 x the largest absolute valid residual of
    this batch and is treated as a constant with respect to gradients
    (pass an explicit cutoff to freeze it, e.g. for finite-difference
    checks).
    """
    q = _check_inputs(pred, gt, valid)
    dtype = pred.data.dtype
    r = ad.sub(pred, ad.constant(gt, dtype=dtype))
    if cutoff is None:
        masked = np.abs(r.data) * (valid > 0)
        cutoff = 0.2 * float(np.max(masked))
    per_pixel = ad.berhu(r, cutoff)
    return ad.mul_scalar(ad.masked_select_sum(per_pixel, valid.astype(dtype)), 1.0 / q)


def avg_depth_loss(pred: ad.Tensor, gt: np.ndarray, valid: np.ndarray) -> ad.Tensor:
    """Squared mean depth difference: ((sum gt - sum pred) / Q)^2."""
    q = _check_inputs(pred, gt, valid)
    dtype = pred.data.dtype
    gt_sum = float(np.sum(np.asarray(gt, dtype=np.float64) * (valid > 0)))
    pred_sum = ad.masked_select_sum(pred, valid.astype(dtype))
    diff = ad.sub(ad.constant(np.full((1, 1, 1, 1), gt_sum), dtype=dtype), pred_sum)
    return ad.square(ad.mul_scalar(diff, 1.0 / q))


def _focal_maps(intrinsics, shape, dtype):
    """Per-sample (B, 1, h, w) maps of fx and fy."""
    b = shape[0]
    if isinstance(intrinsics, Intrinsics):
        intrinsics = [intrinsics] * b
    if len(intrinsics) != b:
        raise InvalidInput(f"need {b} intrinsics, got {len(intrinsics)}")
    fx = np.empty((b, 1, 1, 1), dtype=dtype)
    fy = np.empty((b, 1, 1, 1), dtype=dtype)
    for i, intr in enumerate(intrinsics):
        fx[i] = intr.fx
        fy[i] = intr.fy
    ones = np.ones((1, 1) + shape[2:], dtype=dtype)
    return fx * ones, fy * ones


def surface_normal_loss(pred_depth: ad.Tensor, gt_normals: np.ndarray,
                        gt_conf: np.ndarray, valid: np.ndarray,
                        intrinsics) -> ad.Tensor:
    """Confidence-weighted negative log of the normal agreement.

    The predicted normal is the single-step central-difference normal
    normalize((fx gx, fy gy, 1)); its dot product with the precomputed
    ground-truth normal is clamped to [1e-6, 1] before the log. The sum
    runs over pixels that are valid, interior, and whose four difference
    taps are all valid; Q is the size of that set.
    """
    shape = pred_depth.data.shape
    if gt_normals.shape != (shape[0], 3) + shape[2:]:
        raise InvalidInput(f"gt_normals shape {gt_normals.shape} does not match pred {shape}")
    if gt_conf.shape != shape or valid.shape != shape:
        raise InvalidInput("gt_conf/valid shape mismatch")
    dtype = pred_depth.data.dtype

    v = (valid > 0)
    interior = np.zeros(shape, dtype=bool)
    interior[:, :, 1:-1, 1:-1] = True
    taps_ok = np.ones(shape, dtype=bool)
    taps_ok[:, :, :, 1:] &= v[:, :, :, :-1]
    taps_ok[:, :, :, :-1] &= v[:, :, :, 1:]
    taps_ok[:, :, 1:, :] &= v[:, :, :-1, :]
    taps_ok[:, :, :-1, :] &= v[:, :, 1:, :]
    summed = v & interior & taps_ok
    q = int(np.sum(summed))
    if q == 0:
        raise InvalidInput("no valid interior pixel for the surface-normal loss")

    fx_map, fy_map = _focal_maps(intrinsics, shape, dtype)
    gx = ad.conv2d(pred_depth, ad.constant(_KX, dtype=dtype), pad=(0, 1))
    gy = ad.conv2d(pred_depth, ad.constant(_KY, dtype=dtype), pad=(1, 0))
    gxf = ad.mul(gx, ad.constant(fx_map, dtype=dtype))
    gyf = ad.mul(gy, ad.constant(fy_map, dtype=dtype))

    nx = ad.constant(gt_normals[:, 0:1].astype(dtype), dtype=dtype)
    ny = ad.constant(gt_normals[:, 1:2].astype(dtype), dtype=dtype)
    nz = gt_normals[:, 2:3].astype(dtype)
    num = ad.add(ad.add(ad.mul(gxf, nx), ad.mul(gyf, ny)), ad.constant(nz, dtype=dtype))
    ones = np.ones(shape, dtype=dtype)
    den = ad.sqrt(ad.add(ad.add(ad.square(gxf), ad.square(gyf)), ad.constant(ones, dtype=dtype)))
    dot = ad.clamp(ad.div(num, den), _DOT_FLOOR, 1.0)

    weights = (np.asarray(gt_conf, dtype=np.float64) * summed).astype(dtype)
    return ad.mul_scalar(ad.masked_select_sum(ad.log(dot), weights), -1.0 / q)


def total_loss(pred: ad.Tensor, gt: np.ndarray, gt_normals: np.ndarray,
               gt_conf: np.ndarray, valid: np.ndarray,
               weights: LossWeights, intrinsics,
               berhu_cutoff: float | None = None) -> ad.Tensor:
    """Weighted sum w1 * surface + w2 * average-depth + w3 * berHu.

    Terms with weight exactly 0 are skipped (their value would be
    multiplied by 0 anyway; skipping avoids wasted work in ablations).
    """
    terms = []
    if weights.w1 != 0:
        terms.append(
            ad.mul_scalar(
                surface_normal_loss(pred, gt_normals, gt_conf, valid, intrinsics), weights.w1
            )
        )
    if weights.w2 != 0:
        terms.append(ad.mul_scalar(avg_depth_loss(pred, gt, valid), weights.w2))
    if weights.w3 != 0:
        terms.append(ad.mul_scalar(berhu_loss(pred, gt, valid, cutoff=berhu_cutoff), weights.w3))
    if not terms:
        raise InvalidInput("all loss weights are zero")
    out = terms[0]
    for term in terms[1:]:
        out = ad.add(out, term)
    return out
