"""Image and depth containers, binary file codecs, and resampling geometry.

Conventions used throughout the toolkit:

* depth maps hold metric depths in meters; 0 marks an invalid/missing pixel
* object masks are binary, 0 = pixel on the object to remove, 1 = keep
* pixel (x, y) has its center at integer coordinates, so the principal
  point of a centered camera is ((W-1)/2, (H-1)/2)
* resampling uses half-pixel-center alignment: output pixel x samples the
  source at u = (x + 0.5) * (W_in / W_out) - 0.5, clamped to the border

File formats are deliberately minimal and bit-exact: PFM (32-bit float,
1 or 3 channels) for depth/normal/confidence fields, binary PPM (P6) for
RGB, binary PGM (P5) for masks.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidInput, ParseError

__all__ = [
    "Intrinsics",
    "DepthMap",
    "RgbImage",
    "ObjectMask",
    "default_intrinsics",
    "intrinsics_for_crop",
    "intrinsics_for_resize",
    "encode_pfm",
    "decode_pfm",
    "decode_pfm_array",
    "encode_ppm",
    "decode_ppm",
    "encode_pgm",
    "decode_pgm",
    "bilinear_resize",
    "resize_nearest",
    "center_crop_box",
    "center_crop_to_aspect",
    "crop",
    "rescale_depth_for_crop",
]


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera intrinsics in pixel units."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInput(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")


def default_intrinsics(width: int, height: int, hfov_deg: float = 60.0) -> Intrinsics:
    """Centered intrinsics with the given horizontal field of view and square pixels."""
    fx = 0.5 * width / math.tan(math.radians(hfov_deg) / 2.0)
    return Intrinsics(fx=fx, fy=fx, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0)


def intrinsics_for_crop(intr: Intrinsics, x0: int, y0: int) -> Intrinsics:
    return replace(intr, cx=intr.cx - x0, cy=intr.cy - y0)


def intrinsics_for_resize(intr: Intrinsics, sx: float, sy: float) -> Intrinsics:
    # Half-pixel-center alignment moves the principal point too.
    return Intrinsics(
        fx=intr.fx * sx,
        fy=intr.fy * sy,
        cx=(intr.cx + 0.5) * sx - 0.5,
        cy=(intr.cy + 0.5) * sy - 0.5,
    )


def _check_field(data: np.ndarray, ndim_last: int | None, what: str) -> np.ndarray:
    if ndim_last is None:
        if data.ndim != 2:
            raise InvalidInput(f"{what} must be 2-D (H, W), got shape {data.shape}")
    else:
        if data.ndim != 3 or data.shape[2] != ndim_last:
            raise InvalidInput(f"{what} must be (H, W, {ndim_last}), got shape {data.shape}")
    if data.shape[0] < 1 or data.shape[1] < 1:
        raise InvalidInput(f"{what} must be nonempty, got shape {data.shape}")
    return data


@dataclass(frozen=True)
class DepthMap:
    """Single-channel field of metric depths with camera intrinsics attached.

    Values are non-negative finite floats; 0 denotes an invalid pixel.
    """

    data: np.ndarray  # (H, W) float32
    intrinsics: Intrinsics

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        _check_field(arr, None, "depth")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise InvalidInput("depth values must be finite and non-negative")
        if not (0 <= self.intrinsics.cx < arr.shape[1] and 0 <= self.intrinsics.cy < arr.shape[0]):
            raise InvalidInput(
                f"principal point ({self.intrinsics.cx}, {self.intrinsics.cy}) outside "
                f"{arr.shape[1]}x{arr.shape[0]} image"
            )
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def valid(self) -> np.ndarray:
        """Boolean mask of valid (nonzero) pixels."""
        return self.data > 0


@dataclass(frozen=True)
class RgbImage:
    """3-channel image with values in [0, 1]."""

    data: np.ndarray  # (H, W, 3) float32

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        _check_field(arr, 3, "rgb")
        if np.any(arr < 0) or np.any(arr > 1) or not np.all(np.isfinite(arr)):
            raise InvalidInput("rgb values must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class ObjectMask:
    """Binary mask: 0 = pixel on the object to be removed, 1 = keep."""

    data: np.ndarray  # (H, W) uint8, values in {0, 1}

    def __post_init__(self):
        arr = np.asarray(self.data)
        _check_field(arr, None, "mask")
        if not np.all((arr == 0) | (arr == 1)):
            raise InvalidInput("mask values must be 0 or 1")
        object.__setattr__(self, "data", arr.astype(np.uint8))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


# ---------------------------------------------------------------------------
# PFM / PPM / PGM codecs
# ---------------------------------------------------------------------------

def _field_array(m) -> np.ndarray:
    if isinstance(m, np.ndarray):
        return m
    data = getattr(m, "data", None)
    if data is None:
        raise InvalidInput(f"cannot encode object of type {type(m).__name__}")
    return data


def encode_pfm(m) -> bytes:
    """Encode a 1-channel (Pf) or 3-channel (PF) float map as PFM bytes.

    Rows are written bottom first, little-endian 32-bit floats, scale -1.0.
    """
    arr = np.asarray(_field_array(m), dtype=np.float32)
    if arr.ndim == 2:
        magic = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"PF"
    else:
        raise InvalidInput(f"PFM supports (H, W) or (H, W, 3) data, got shape {arr.shape}")
    h, w = arr.shape[0], arr.shape[1]
    if h < 1 or w < 1:
        raise InvalidInput("cannot encode zero-sized map")
    header = magic + b"\n" + f"{w} {h}\n".encode("ascii") + b"-1.0\n"
    payload = np.flipud(arr).astype("<f4").tobytes()
    return header + payload


def _read_line(data: bytes, pos: int) -> tuple[bytes, int]:
    end = data.find(b"\n", pos)
    if end < 0:
        raise ParseError("truncated header: missing newline", offset=pos)
    return data[pos:end], end + 1


def _decode_pfm_raw(data: bytes) -> tuple[np.ndarray, int]:
    """Parse PFM bytes into a (H, W[, 3]) float32 array plus channel count."""
    magic, pos = _read_line(data, 0)
    if magic == b"Pf":
        channels = 1
    elif magic == b"PF":
        channels = 3
    else:
        raise ParseError(f"bad PFM magic {magic!r}", offset=0)
    dims, dims_pos = _read_line(data, pos)
    parts = dims.split()
    if len(parts) != 2:
        raise ParseError(f"bad PFM dimensions line {dims!r}", offset=pos)
    try:
        w, h = int(parts[0]), int(parts[1])
    except ValueError:
        raise ParseError(f"bad PFM dimensions line {dims!r}", offset=pos) from None
    if w < 1 or h < 1:
        raise ParseError(f"non-positive PFM dimensions {w}x{h}", offset=pos)
    scale_line, payload_pos = _read_line(data, dims_pos)
    try:
        scale = float(scale_line)
    except ValueError:
        raise ParseError(f"bad PFM scale line {scale_line!r}", offset=dims_pos) from None
    if scale == 0:
        raise ParseError("PFM scale must be nonzero", offset=dims_pos)
    expected = w * h * channels * 4
    if len(data) - payload_pos != expected:
        raise ParseError(
            f"payload is {len(data) - payload_pos} bytes, expected {expected}",
            offset=payload_pos,
        )
    dtype = "<f4" if scale < 0 else ">f4"
    flat = np.frombuffer(data, dtype=dtype, count=w * h * channels, offset=payload_pos)
    shape = (h, w) if channels == 1 else (h, w, 3)
    arr = np.flipud(flat.reshape(shape)).astype(np.float32)
    return arr, channels


def decode_pfm_array(data: bytes) -> np.ndarray:
    """Decode PFM bytes to a bare float32 array (no container, no intrinsics)."""
    arr, _ = _decode_pfm_raw(data)
    return arr


def decode_pfm(data: bytes, intrinsics: Intrinsics | None = None):
    """Decode PFM bytes to a DepthMap (1 channel) or NormalField (3 channels).

    PFM carries no intrinsics; callers that know them should pass them in,
    otherwise a nominal 60-degree-fov camera is attached.
    """
    arr, channels = _decode_pfm_raw(data)
    if channels == 3:
        from .normals import NormalField

        return NormalField(data=arr)
    h, w = arr.shape
    if intrinsics is None:
        intrinsics = default_intrinsics(w, h)
    return DepthMap(data=arr, intrinsics=intrinsics)


def encode_ppm(img: RgbImage) -> bytes:
    """Encode an RgbImage as binary PPM (P6, 8-bit)."""
    arr = _field_array(img)
    h, w = arr.shape[0], arr.shape[1]
    quantized = np.clip(np.rint(np.asarray(arr, dtype=np.float64) * 255.0), 0, 255)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + quantized.astype(np.uint8).tobytes()


def decode_ppm(data: bytes) -> RgbImage:
    arr = _decode_netpbm(data, b"P6", channels=3)
    return RgbImage(data=(arr.astype(np.float32) / 255.0))


def encode_pgm(mask: ObjectMask) -> bytes:
    """Encode a mask as binary PGM (P5): 0 = remove, 255 = keep."""
    arr = _field_array(mask)
    h, w = arr.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + (arr.astype(np.uint8) * 255).tobytes()


def decode_pgm(data: bytes) -> ObjectMask:
    arr = _decode_netpbm(data, b"P5", channels=1)
    # Any value below 128 means "remove".
    return ObjectMask(data=(arr >= 128).astype(np.uint8))


def _decode_netpbm(data: bytes, magic: bytes, channels: int) -> np.ndarray:
    got, pos = _read_line(data, 0)
    if got != magic:
        raise ParseError(f"bad magic {got!r}, expected {magic!r}", offset=0)
    dims, dims_pos = _read_line(data, pos)
    parts = dims.split()
    if len(parts) != 2:
        raise ParseError(f"bad dimensions line {dims!r}", offset=pos)
    w, h = int(parts[0]), int(parts[1])
    maxval, payload_pos = _read_line(data, dims_pos)
    if maxval != b"255":
        raise ParseError(f"unsupported maxval {maxval!r}", offset=dims_pos)
    expected = w * h * channels
    if len(data) - payload_pos != expected:
        raise ParseError(
            f"payload is {len(data) - payload_pos} bytes, expected {expected}",
            offset=payload_pos,
        )
    arr = np.frombuffer(data, dtype=np.uint8, count=expected, offset=payload_pos)
    return arr.reshape((h, w) if channels == 1 else (h, w, channels))


# ---------------------------------------------------------------------------
# Resampling and cropping
# ---------------------------------------------------------------------------

def _axis_coords(n_out: int, n_in: int) -> np.ndarray:
    u = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    return np.clip(u, 0.0, n_in - 1)


def _bilinear_array(arr: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    src = np.asarray(arr, dtype=np.float64)
    h, w = src.shape[0], src.shape[1]
    ux = _axis_coords(out_w, w)
    uy = _axis_coords(out_h, h)
    x0 = np.floor(ux).astype(np.intp)
    y0 = np.floor(uy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (ux - x0)[None, :]
    fy = (uy - y0)[:, None]
    if src.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = src[y0[:, None], x0[None, :]] * (1 - fx) + src[y0[:, None], x1[None, :]] * fx
    bot = src[y1[:, None], x0[None, :]] * (1 - fx) + src[y1[:, None], x1[None, :]] * fx
    return top * (1 - fy) + bot * fy


def _nearest_array(arr: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    h, w = arr.shape[0], arr.shape[1]
    ix = np.clip(np.rint(_axis_coords(out_w, w)), 0, w - 1).astype(np.intp)
    iy = np.clip(np.rint(_axis_coords(out_h, h)), 0, h - 1).astype(np.intp)
    return arr[iy[:, None], ix[None, :]]


def bilinear_resize(m, out_width: int, out_height: int):
    """Bilinearly resample to the given size (half-pixel-center alignment).

    Accepts DepthMap (intrinsics are rescaled), RgbImage, or a bare array.
    """
    if out_width < 1 or out_height < 1:
        raise InvalidInput(f"output size must be positive, got {out_width}x{out_height}")
    if isinstance(m, DepthMap):
        out = _bilinear_array(m.data, out_width, out_height).astype(np.float32)
        intr = intrinsics_for_resize(m.intrinsics, out_width / m.width, out_height / m.height)
        return DepthMap(data=np.maximum(out, 0.0), intrinsics=intr)
    if isinstance(m, RgbImage):
        out = _bilinear_array(m.data, out_width, out_height)
        return RgbImage(data=np.clip(out, 0.0, 1.0).astype(np.float32))
    if isinstance(m, ObjectMask):
        # Masks must stay binary; bilinear blending is never correct for them.
        return resize_nearest(m, out_width, out_height)
    return _bilinear_array(np.asarray(m), out_width, out_height)


def resize_nearest(m, out_width: int, out_height: int):
    """Nearest-neighbor resample (used for masks to keep them binary)."""
    if out_width < 1 or out_height < 1:
        raise InvalidInput(f"output size must be positive, got {out_width}x{out_height}")
    if isinstance(m, ObjectMask):
        return ObjectMask(data=_nearest_array(m.data, out_width, out_height))
    if isinstance(m, DepthMap):
        intr = intrinsics_for_resize(m.intrinsics, out_width / m.width, out_height / m.height)
        return DepthMap(data=_nearest_array(m.data, out_width, out_height), intrinsics=intr)
    return _nearest_array(np.asarray(m), out_width, out_height)


def center_crop_box(width: int, height: int, aspect_w: int, aspect_h: int) -> tuple[int, int, int, int]:
    """Largest centered window with ratio aspect_w:aspect_h, as (x0, y0, w, h).

    The window is the largest integer multiple of the reduced aspect pair,
    so the ratio is exact whenever the image can host at least one unit;
    only tiny degenerate images fall back to a rounded window. With odd
    margins the extra pixel goes to the right/bottom.
    """
    if aspect_w <= 0 or aspect_h <= 0:
        raise InvalidInput(f"aspect must be positive, got {aspect_w}:{aspect_h}")
    g = math.gcd(aspect_w, aspect_h)
    aw, ah = aspect_w // g, aspect_h // g
    k = min(width // aw, height // ah)
    if k >= 1:
        cw, ch = k * aw, k * ah
    else:
        # Image smaller than one reduced-aspect unit: best rounded window.
        if width * ah <= height * aw:
            cw = width
            ch = max(1, (width * ah) // aw)
        else:
            ch = height
            cw = max(1, (height * aw) // ah)
    x0 = (width - cw) // 2
    y0 = (height - ch) // 2
    return x0, y0, cw, ch


def crop(m, x0: int, y0: int, w: int, h: int):
    """Crop a window; DepthMap intrinsics are shifted accordingly."""
    arr = _field_array(m)
    if x0 < 0 or y0 < 0 or x0 + w > arr.shape[1] or y0 + h > arr.shape[0] or w < 1 or h < 1:
        raise InvalidInput(
            f"crop window ({x0},{y0},{w},{h}) outside {arr.shape[1]}x{arr.shape[0]} image"
        )
    window = arr[y0 : y0 + h, x0 : x0 + w].copy()
    if isinstance(m, DepthMap):
        return DepthMap(data=window, intrinsics=intrinsics_for_crop(m.intrinsics, x0, y0))
    if isinstance(m, RgbImage):
        return RgbImage(data=window)
    if isinstance(m, ObjectMask):
        return ObjectMask(data=window)
    return window


def center_crop_to_aspect(m, aspect_w: int, aspect_h: int):
    """Largest centered crop with the given aspect ratio."""
    arr = _field_array(m)
    x0, y0, cw, ch = center_crop_box(arr.shape[1], arr.shape[0], aspect_w, aspect_h)
    return crop(m, x0, y0, cw, ch)


def rescale_depth_for_crop(depth: DepthMap, alpha: float) -> DepthMap:
    """Divide valid depths by the crop fraction alpha; invalid pixels stay 0.

    A crop of fraction alpha mimics a camera alpha times closer, so depths
    shrink by the same factor. Intrinsics are untouched (the resize step
    owns the pixel-scale change).
    """
    if not (0 < alpha <= 1):
        raise InvalidInput(f"crop fraction must be in (0, 1], got {alpha}")
    if alpha == 1.0:
        return depth
    out = depth.data.copy()
    valid = out > 0
    out[valid] = out[valid] / np.float32(alpha)
    return DepthMap(data=out, intrinsics=depth.intrinsics)
