"""Surface-normal computation from depth maps.

Three methods are provided:

* ``gradient_normals`` -- window-based gradient smoothing: the x/y slopes
  are averaged symmetric differences over offsets 1..8, scaled by the
  focal lengths, with z fixed to 1 before normalization.
* ``quantized_smoothed_normals`` -- the gradient normals snapped to a
  discrete latitude/azimuth bin grid. Each bin is scored over the pixel's
  8x8 neighborhood by the clamped-dot-product-to-the-beta score; the
  winning bin supplies the output normal and its score the confidence.
  Planes collapse to a single bin while ridges keep one dominant bin per
  side, so discontinuities survive the smoothing.
* ``planefit_normals`` -- total-least-squares plane fit over a square
  window of back-projected 3-D points (the classical, much slower method,
  kept as a comparison baseline).

All normals follow the hemisphere convention n_z > 0 (pointing toward the
viewer); invalid pixels are marked (0, 0, 0).
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .imgeo import DepthMap, _check_field

__all__ = [
    "NormalField",
    "ConfidenceMap",
    "BinGrid",
    "bin_centers",
    "gradient_normals",
    "quantized_smoothed_normals",
    "planefit_normals",
    "normal_accuracy",
]

# The smoothing neighborhood is fixed at 8x8: an even window needs an anchor
# convention, so offsets run -3..+4 in both axes and the score denominator
# stays at 64 even when part of the window is outside the image.
_WINDOW_OFFSETS = range(-3, 5)
_WINDOW_SIZE = 64.0


@dataclass(frozen=True)
class NormalField:
    """Per-pixel unit normals; invalid pixels are exactly (0, 0, 0).

    The container only checks unit length; the n_z > 0 hemisphere
    convention is an invariant of the computation methods below (a field
    may legitimately hold rotated normals, e.g. when measuring accuracy
    against a transformed reference).
    """

    data: np.ndarray  # (H, W, 3) float32

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        _check_field(arr, 3, "normals")
        norms = np.linalg.norm(arr.astype(np.float64), axis=2)
        valid = norms > 0
        if np.any(np.abs(norms[valid] - 1.0) > 1e-6):
            raise InvalidInput("valid normals must have unit length")
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def valid(self) -> np.ndarray:
        return np.any(self.data != 0, axis=2)


@dataclass(frozen=True)
class ConfidenceMap:
    """Per-pixel weights in [0, 1]; 0 exactly at invalid pixels."""

    data: np.ndarray  # (H, W) float32

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        _check_field(arr, None, "confidence")
        if np.any(arr < 0) or np.any(arr > 1):
            raise InvalidInput("confidence values must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class BinGrid:
    """Quantization grid over the n_z > 0 hemisphere.

    Latitude bands split the polar angle [0, 90] deg evenly; azimuth sectors
    split [0, 360) deg evenly with sector centers on the image axes (0, 90,
    180, 270 deg for the default four sectors), which is where indoor
    structures concentrate. beta shapes how fast a neighbor's vote decays
    with angular distance.
    """

    n_latitudes: int = 16
    n_azimuths: int = 4
    beta: float = 8.0

    def __post_init__(self):
        if self.n_latitudes < 1 or self.n_azimuths < 1:
            raise InvalidInput("bin counts must be at least 1")
        if not self.beta > 0:
            raise InvalidInput("beta must be positive")

    @property
    def n_bins(self) -> int:
        return self.n_latitudes * self.n_azimuths


def bin_centers(grid: BinGrid) -> np.ndarray:
    """Representative unit normals, one per bin, ordered latitude-major."""
    lat = (np.arange(grid.n_latitudes, dtype=np.float64) + 0.5) * (np.pi / 2) / grid.n_latitudes
    az = np.arange(grid.n_azimuths, dtype=np.float64) * (2 * np.pi) / grid.n_azimuths
    theta = np.repeat(lat, grid.n_azimuths)
    phi = np.tile(az, grid.n_latitudes)
    return np.stack(
        [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=1
    )


def _shifted(arr: np.ndarray, dy: int, dx: int, fill: float = 0.0) -> np.ndarray:
    """arr sampled at (y+dy, x+dx), zero-filled outside the image."""
    h, w = arr.shape[:2]
    out = np.full_like(arr, fill)
    y0, y1 = max(0, -dy), min(h, h - dy)
    x0, x1 = max(0, -dx), min(w, w - dx)
    if y1 <= y0 or x1 <= x0:
        return out
    out[y0:y1, x0:x1] = arr[y0 + dy : y1 + dy, x0 + dx : x1 + dx]
    return out


def gradient_normals(depth: DepthMap) -> NormalField:
    """Window-gradient normals from a depth map.

    Per axis, the slope is the average over offsets i in 1..8 of the
    symmetric difference (d(x+i) - d(x-i)) / (2i); offsets that fall off
    the image or touch an invalid pixel are dropped and the average is
    taken over the remaining ones. The unnormalized normal is
    (fx * slope_x, fy * slope_y, 1).
    """
    d = depth.data.astype(np.float64)
    valid = d > 0
    sums = [np.zeros_like(d), np.zeros_like(d)]
    counts = [np.zeros_like(d), np.zeros_like(d)]
    for axis, (dy, dx) in enumerate([(0, 1), (1, 0)]):
        for i in range(1, 9):
            plus = _shifted(d, dy * i, dx * i)
            minus = _shifted(d, -dy * i, -dx * i)
            ok = _shifted(valid, dy * i, dx * i, False) & _shifted(valid, -dy * i, -dx * i, False)
            sums[axis] += np.where(ok, (plus - minus) / (2.0 * i), 0.0)
            counts[axis] += ok
    ok_pixel = (counts[0] > 0) & (counts[1] > 0)
    nx = np.where(ok_pixel, depth.intrinsics.fx * sums[0] / np.maximum(counts[0], 1), 0.0)
    ny = np.where(ok_pixel, depth.intrinsics.fy * sums[1] / np.maximum(counts[1], 1), 0.0)
    nz = np.where(ok_pixel, 1.0, 0.0)
    n = np.stack([nx, ny, nz], axis=2)
    norm = np.linalg.norm(n, axis=2, keepdims=True)
    n = np.where(norm > 0, n / np.maximum(norm, 1e-300), 0.0)
    return NormalField(data=n.astype(np.float32))


def quantized_smoothed_normals(
    raw: NormalField, grid: BinGrid = BinGrid()
) -> tuple[NormalField, ConfidenceMap]:
    """Snap normals to the best-scoring grid bin over each 8x8 neighborhood.

    Bin b's score at pixel p is the mean over the 64 neighbors q of
    max(n_q . n_b, 0) ** beta; invalid or out-of-image neighbors contribute
    0 but still count in the denominator. The winner (lowest bin index on
    ties) gives the output normal, its score the confidence. Pixels whose
    whole window is invalid come out invalid.
    """
    h, w = raw.height, raw.width
    n = raw.data.astype(np.float64).reshape(-1, 3)
    centers = bin_centers(grid)
    dots = np.maximum(n @ centers.T, 0.0)
    if float(grid.beta) == 8.0:
        scores = ((dots * dots) ** 2) ** 2
    else:
        scores = np.power(dots, grid.beta)
    # Invalid pixels have n = 0 so their scores are already 0.
    scores = scores.reshape(h, w, grid.n_bins)

    # The 8x8 window sum is separable: 8 shifted adds per axis.
    acc = np.zeros_like(scores)
    for dx in _WINDOW_OFFSETS:
        acc += _shifted(scores, 0, dx)
    total = np.zeros_like(scores)
    for dy in _WINDOW_OFFSETS:
        total += _shifted(acc, dy, 0)
    conf = total / _WINDOW_SIZE

    best = np.argmax(conf, axis=2)
    best_conf = np.take_along_axis(conf, best[..., None], axis=2)[..., 0]
    out = centers[best]
    out[best_conf <= 0] = 0.0
    conf_out = np.clip(best_conf, 0.0, 1.0)
    conf_out[best_conf <= 0] = 0.0
    return (
        NormalField(data=out.astype(np.float32)),
        ConfidenceMap(data=conf_out.astype(np.float32)),
    )


def _window_sums(arr: np.ndarray, half_lo: int, half_hi: int) -> np.ndarray:
    acc = np.zeros_like(arr)
    for dx in range(-half_lo, half_hi + 1):
        acc += _shifted(arr, 0, dx)
    out = np.zeros_like(arr)
    for dy in range(-half_lo, half_hi + 1):
        out += _shifted(acc, dy, 0)
    return out


def planefit_normals(depth: DepthMap, window: int = 9) -> NormalField:
    """Total-least-squares plane normals over a square window.

    Window pixels are back-projected through the intrinsics
    (X = (x-cx) d / fx, Y = (y-cy) d / fy, Z = d); the normal is the
    eigenvector of the smallest eigenvalue of the centered scatter matrix,
    oriented so n_z > 0. Windows with fewer than 3 valid points give an
    invalid pixel.
    """
    if window < 3 or window % 2 == 0:
        raise InvalidInput(f"window must be odd and >= 3, got {window}")
    half = window // 2
    d = depth.data.astype(np.float64)
    valid = (d > 0).astype(np.float64)
    h, w = d.shape
    intr = depth.intrinsics
    xs = (np.arange(w, dtype=np.float64) - intr.cx)[None, :] / intr.fx
    ys = (np.arange(h, dtype=np.float64) - intr.cy)[:, None] / intr.fy
    px = xs * d * valid
    py = ys * d * valid
    pz = d * valid

    sums = {}
    fields = {"1": valid, "x": px, "y": py, "z": pz,
              "xx": px * px, "xy": px * py, "xz": px * pz,
              "yy": py * py, "yz": py * pz, "zz": pz * pz}
    for key, field in fields.items():
        sums[key] = _window_sums(field, half, half)

    count = sums["1"]
    ok = count >= 3
    cnt = np.maximum(count, 1.0)
    # Centered scatter matrix: sum(p p^T) - sum(p) sum(p)^T / n.
    sxx = sums["xx"] - sums["x"] * sums["x"] / cnt
    sxy = sums["xy"] - sums["x"] * sums["y"] / cnt
    sxz = sums["xz"] - sums["x"] * sums["z"] / cnt
    syy = sums["yy"] - sums["y"] * sums["y"] / cnt
    syz = sums["yz"] - sums["y"] * sums["z"] / cnt
    szz = sums["zz"] - sums["z"] * sums["z"] / cnt

    scatter = np.zeros((h, w, 3, 3))
    scatter[..., 0, 0] = sxx
    scatter[..., 0, 1] = scatter[..., 1, 0] = sxy
    scatter[..., 0, 2] = scatter[..., 2, 0] = sxz
    scatter[..., 1, 1] = syy
    scatter[..., 1, 2] = scatter[..., 2, 1] = syz
    scatter[..., 2, 2] = szz

    _, vecs = np.linalg.eigh(scatter.reshape(-1, 3, 3))
    normal = vecs[:, :, 0].reshape(h, w, 3)  # eigenvalues ascend: column 0 is smallest
    flip = normal[..., 2] < 0
    normal[flip] = -normal[flip]
    ok = ok & (normal[..., 2] > 1e-12)
    normal[~ok] = 0.0
    return NormalField(data=normal.astype(np.float32))


def normal_accuracy(pred: NormalField, truth: NormalField) -> float:
    """Mean dot product over pixels valid in both fields (range [-1, 1])."""
    if pred.data.shape != truth.data.shape:
        raise InvalidInput(
            f"shape mismatch: {pred.data.shape} vs {truth.data.shape}"
        )
    both = pred.valid() & truth.valid()
    if not np.any(both):
        raise InvalidInput("no pixel is valid in both normal fields")
    dots = np.sum(pred.data.astype(np.float64) * truth.data.astype(np.float64), axis=2)
    return float(np.mean(dots[both]))
