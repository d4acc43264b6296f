"""Synthetic indoor scenes: composition, ray-cast rendering, sensor noise.

A scene is a rectangular room (floor at y = 0, extents in meters) holding
a designated removable object plus optional neighbor and background
clutter, all built from axis-aligned boxes and spheres. Rendering casts
one primary ray per pixel and produces the paired sample the pipeline
trains on: RGB (flat Lambertian shading), the removable object's mask,
and depth maps with and without the object. Depth is the camera-frame z
of the nearest hit, clipped at the far limit.

World frame: x/z horizontal, y up. Camera yaw 0 faces +z; positive pitch
looks up. Factor-labelled scenes place the removable object at the
requested camera distance with the requested surroundings; the same
machinery generates unconstrained training scenes from randomly drawn
factor labels.
"""

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetError, InvalidInput, PlacementError
from .imgeo import (
    DepthMap,
    Intrinsics,
    ObjectMask,
    RgbImage,
    decode_pfm_array,
    decode_pgm,
    decode_ppm,
    default_intrinsics,
    encode_pfm,
    encode_pgm,
    encode_ppm,
)

__all__ = [
    "CameraPose",
    "FactorLabels",
    "SampleRecord",
    "SceneObject",
    "SceneSpec",
    "Box",
    "Sphere",
    "COMPLEXITY_LEVELS",
    "RARITY_LEVELS",
    "NEIGHBOR_LEVELS",
    "BEHIND_LEVELS",
    "DISTANCE_LEVELS",
    "factor_sweep",
    "draw_training_factors",
    "sample_camera",
    "generate_scene",
    "render_sample",
    "generate_sample",
    "simulate_sensor_noise",
    "write_dataset",
    "load_dataset",
    "check_sample",
]

MAX_DEPTH = 5.0
AMBIENT = 0.35

COMPLEXITY_LEVELS = ("simple", "complex")
RARITY_LEVELS = ("common", "rare")
NEIGHBOR_LEVELS = (0, 1, 2)
BEHIND_LEVELS = ("wall", "empty", "objects")
DISTANCE_LEVELS = (1.5, 2.0)


@dataclass(frozen=True)
class FactorLabels:
    """One level per factor of the five-factor evaluation design."""

    complexity: str
    rarity: str
    neighbors: int
    behind: str
    distance: float

    def __post_init__(self):
        if self.complexity not in COMPLEXITY_LEVELS:
            raise InvalidInput(f"bad complexity {self.complexity!r}")
        if self.rarity not in RARITY_LEVELS:
            raise InvalidInput(f"bad rarity {self.rarity!r}")
        if self.neighbors not in NEIGHBOR_LEVELS:
            raise InvalidInput(f"bad neighbor count {self.neighbors!r}")
        if self.behind not in BEHIND_LEVELS:
            raise InvalidInput(f"bad behind level {self.behind!r}")
        if self.distance not in DISTANCE_LEVELS:
            raise InvalidInput(f"bad distance {self.distance!r}")


def factor_sweep() -> list[FactorLabels]:
    """The full 2 x 2 x 3 x 3 x 2 = 72-cell factorial, in a fixed order."""
    cells = []
    for c in COMPLEXITY_LEVELS:
        for r in RARITY_LEVELS:
            for n in NEIGHBOR_LEVELS:
                for b in BEHIND_LEVELS:
                    for d in DISTANCE_LEVELS:
                        cells.append(FactorLabels(c, r, n, b, d))
    return cells


def draw_training_factors(rng: np.random.Generator, rare_rate: float = 0.04) -> FactorLabels:
    """Random labels for training scenes; rare shapes stay below rare_rate."""
    return FactorLabels(
        complexity=COMPLEXITY_LEVELS[int(rng.integers(2))],
        rarity="rare" if rng.random() < rare_rate else "common",
        neighbors=int(rng.integers(3)),
        behind=BEHIND_LEVELS[int(rng.integers(3))],
        distance=DISTANCE_LEVELS[int(rng.integers(2))],
    )


@dataclass(frozen=True)
class CameraPose:
    position: tuple[float, float, float]
    yaw_deg: float
    pitch_deg: float


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float


@dataclass(frozen=True)
class SceneObject:
    object_id: int
    primitives: tuple
    albedo: tuple[float, float, float]
    category: str


@dataclass(frozen=True)
class SceneSpec:
    room: tuple[float, float, float]  # extents (x, y, z); floor at y = 0
    objects: tuple[SceneObject, ...]
    removable_id: int
    light_dir: tuple[float, float, float]  # unit vector toward the light
    camera: CameraPose
    floor_albedo: tuple[float, float, float]
    wall_albedo: tuple[float, float, float]
    ceiling_albedo: tuple[float, float, float]

    def __post_init__(self):
        ids = [o.object_id for o in self.objects]
        if self.removable_id not in ids:
            raise InvalidInput(f"removable id {self.removable_id} not among objects {ids}")


@dataclass(frozen=True)
class SampleRecord:
    """One training/evaluation unit."""

    rgb: RgbImage
    mask: ObjectMask
    depth_with: DepthMap
    depth_without: DepthMap
    intrinsics: Intrinsics
    factors: FactorLabels | None
    sample_id: str
    seed: int


# ---------------------------------------------------------------------------
# Camera
# ---------------------------------------------------------------------------

PITCH_CLAMP_DEG = 40.0


def _rng_for(*entropy) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy))


def sample_camera(seed: int, room: tuple[float, float, float] | None = None) -> CameraPose:
    """Agent pose: uniform floor position, height ~ N(1.0, 0.1) m,
    pitch ~ N(0, 10) deg (clamped at +-40), yaw uniform."""
    rng = _rng_for(seed, 0xCA)
    if room is None:
        rx = rz = 1.0
    else:
        rx, _, rz = room
    margin = min(0.3, rx / 4, rz / 4)
    x = rng.uniform(margin, rx - margin)
    z = rng.uniform(margin, rz - margin)
    height = float(np.clip(rng.normal(1.0, 0.1), 0.3, 1.8))
    pitch = float(np.clip(rng.normal(0.0, 10.0), -PITCH_CLAMP_DEG, PITCH_CLAMP_DEG))
    yaw = float(rng.uniform(0.0, 360.0))
    return CameraPose(position=(float(x), height, float(z)), yaw_deg=yaw, pitch_deg=pitch)


def _camera_axes(camera: CameraPose) -> np.ndarray:
    """Rows are the camera x (image right), y (image down), z (forward) axes."""
    psi = math.radians(camera.yaw_deg)
    phi = math.radians(camera.pitch_deg)
    forward = np.array([math.cos(phi) * math.sin(psi), math.sin(phi), math.cos(phi) * math.cos(psi)])
    right = np.array([-math.cos(psi), 0.0, math.sin(psi)])
    down = np.cross(forward, right)
    return np.stack([right, down, forward])


# ---------------------------------------------------------------------------
# Scene composition
# ---------------------------------------------------------------------------

def _saturated_albedo(rng) -> tuple[float, float, float]:
    hue = rng.permutation(3)
    vals = np.array([rng.uniform(0.55, 0.9), rng.uniform(0.15, 0.4), rng.uniform(0.05, 0.25)])
    out = np.empty(3)
    out[hue] = vals
    return tuple(float(v) for v in out)


def _medium_albedo(rng) -> tuple[float, float, float]:
    return tuple(float(v) for v in rng.uniform(0.25, 0.65, size=3))


def _box_on_floor(cx, cz, hx, hy, hz) -> Box:
    return Box(lo=(cx - hx, 0.0, cz - hz), hi=(cx + hx, 2 * hy, cz + hz))


def _removable_primitives(factors: FactorLabels, cx: float, cz: float, rng):
    """Shape family by (complexity, rarity): box / sphere / chair / doll."""
    if factors.complexity == "simple" and factors.rarity == "common":
        hx, hy, hz = rng.uniform(0.16, 0.28), rng.uniform(0.2, 0.33), rng.uniform(0.14, 0.24)
        return (_box_on_floor(cx, cz, hx, hy, hz),), 2 * hy, max(hx, hz)
    if factors.complexity == "simple" and factors.rarity == "rare":
        r = rng.uniform(0.2, 0.3)
        return (Sphere(center=(cx, r, cz), radius=r),), 2 * r, r
    if factors.complexity == "complex" and factors.rarity == "common":
        # Chair: four legs, a seat, a back rest.
        seat_h = rng.uniform(0.38, 0.48)
        seat_half = rng.uniform(0.18, 0.24)
        leg = 0.03
        back_h = seat_h + rng.uniform(0.35, 0.5)
        prims = []
        for sx in (-1, 1):
            for sz in (-1, 1):
                lx = cx + sx * (seat_half - leg)
                lz = cz + sz * (seat_half - leg)
                prims.append(Box(lo=(lx - leg, 0.0, lz - leg), hi=(lx + leg, seat_h, lz + leg)))
        prims.append(Box(lo=(cx - seat_half, seat_h, cz - seat_half),
                         hi=(cx + seat_half, seat_h + 0.05, cz + seat_half)))
        prims.append(Box(lo=(cx - seat_half, seat_h, cz + seat_half - 0.05),
                         hi=(cx + seat_half, back_h, cz + seat_half)))
        return tuple(prims), back_h, seat_half
    # complex + rare: doll of three stacked spheres.
    r0 = rng.uniform(0.16, 0.22)
    r1, r2 = 0.72 * r0, 0.5 * r0
    prims = (
        Sphere(center=(cx, r0, cz), radius=r0),
        Sphere(center=(cx, 2 * r0 + 0.8 * r1, cz), radius=r1),
        Sphere(center=(cx, 2 * r0 + 1.6 * r1 + 0.7 * r2, cz), radius=r2),
    )
    return prims, 2 * r0 + 1.6 * r1 + 1.4 * r2, r0


def _object_bounds(primitives) -> tuple[np.ndarray, np.ndarray]:
    los, his = [], []
    for p in primitives:
        if isinstance(p, Box):
            los.append(p.lo)
            his.append(p.hi)
        else:
            c, r = np.asarray(p.center), p.radius
            los.append(c - r)
            his.append(c + r)
    return np.min(los, axis=0), np.max(his, axis=0)


def _inside_room(lo, hi, room, margin=0.04) -> bool:
    rx, ry, rz = room
    return (
        lo[0] >= margin and hi[0] <= rx - margin
        and lo[1] >= -1e-9 and hi[1] <= ry - margin
        and lo[2] >= margin and hi[2] <= rz - margin
    )


def _overlaps(lo1, hi1, lo2, hi2, gap=0.03) -> bool:
    return bool(np.all(hi1 + gap > lo2) and np.all(hi2 + gap > lo1))


def generate_scene(factors: FactorLabels, seed: int) -> SceneSpec:
    """Compose a room whose removable object matches the factor labels.

    The camera pose is part of the scene: the object sits at the requested
    distance along the camera's horizontal forward direction, and the
    pitch aims at the object (jittered) so the silhouette lands in frame.
    """
    rng = _rng_for(seed, 0x5C)
    last_err = "no attempt"
    for _ in range(40):
        room = (float(rng.uniform(3.4, 4.6)), float(rng.uniform(2.4, 2.8)),
                float(rng.uniform(3.4, 4.6)))
        rx, ry, rz = room
        dist = factors.distance
        yaw = float(rng.uniform(-24.0, 24.0))
        psi = math.radians(yaw)
        fwd = np.array([math.sin(psi), 0.0, math.cos(psi)])

        cam_h = float(np.clip(rng.normal(1.0, 0.1), 0.6, ry - 0.4))
        cam_x = float(rng.uniform(0.3 * rx, 0.7 * rx))

        obj_depth_half = 0.3  # provisional upper bound on the shape's half-depth
        if factors.behind == "wall":
            gap = rng.uniform(0.04, 0.15)
            cam_z = rz - (dist + obj_depth_half + gap) * math.cos(psi)
        else:
            clear = rng.uniform(1.4, 2.1)
            cam_z = rz - (dist + clear) * math.cos(psi)
        if not (0.25 <= cam_z <= rz - 0.25):
            last_err = f"camera z {cam_z:.2f} outside room"
            continue

        cam_pos = np.array([cam_x, cam_h, cam_z])
        obj_center = cam_pos + fwd * dist
        obj_cx, obj_cz = float(obj_center[0]), float(obj_center[2])

        prims, obj_h, obj_lat = _removable_primitives(factors, obj_cx, obj_cz, rng)
        lo, hi = _object_bounds(prims)
        if not _inside_room(lo, hi, room):
            last_err = "removable object leaves the room"
            continue

        objects = [SceneObject(object_id=1, primitives=prims,
                               albedo=_saturated_albedo(rng), category="removable")]
        next_id = 2
        ok = True

        perp = np.array([math.cos(psi), 0.0, -math.sin(psi)])
        sides = [1, -1] if rng.random() < 0.5 else [-1, 1]
        for k in range(factors.neighbors):
            placed = False
            for _try in range(12):
                off = rng.uniform(0.62, 1.0) + 0.3 * (k // 2)
                zj = rng.uniform(-0.25, 0.25)
                ctr = obj_center + perp * (sides[k % 2] * off) + fwd * zj
                hx, hy, hz = rng.uniform(0.12, 0.2), rng.uniform(0.15, 0.3), rng.uniform(0.1, 0.18)
                nb = _box_on_floor(float(ctr[0]), float(ctr[2]), hx, hy, hz)
                nlo, nhi = _object_bounds([nb])
                if not _inside_room(nlo, nhi, room):
                    continue
                if _overlaps(nlo, nhi, lo, hi):
                    continue
                objects.append(SceneObject(object_id=next_id, primitives=(nb,),
                                           albedo=_medium_albedo(rng), category="neighbor"))
                next_id += 1
                placed = True
                break
            if not placed:
                ok = False
                last_err = "could not place a neighbor"
                break
        if not ok:
            continue

        if factors.behind == "objects":
            # A tall box behind the object, laterally offset so it covers
            # roughly one side of the silhouette: the revealed background
            # has one side much closer than the other.
            placed = False
            for _try in range(12):
                back = rng.uniform(0.7, 1.2)
                side = 1 if rng.random() < 0.5 else -1
                lat = side * rng.uniform(0.1, 0.35)
                ctr = obj_center + fwd * back + perp * lat
                hx = rng.uniform(0.3, 0.5)
                hy = rng.uniform(0.45, 0.7)
                hz = rng.uniform(0.12, 0.25)
                cb = _box_on_floor(float(ctr[0]), float(ctr[2]), hx, hy, hz)
                clo, chi = _object_bounds([cb])
                if not _inside_room(clo, chi, room):
                    continue
                if _overlaps(clo, chi, lo, hi):
                    continue
                objects.append(SceneObject(object_id=next_id, primitives=(cb,),
                                           albedo=_medium_albedo(rng), category="clutter"))
                next_id += 1
                placed = True
                break
            if not placed:
                last_err = "could not place background clutter"
                continue

        # Aim the pitch at the object's mid-height, with jitter.
        aim = math.degrees(math.atan2(obj_h * 0.55 - cam_h, dist))
        pitch = float(np.clip(aim + rng.normal(0.0, 4.0), -PITCH_CLAMP_DEG, PITCH_CLAMP_DEG))

        light = np.array([rng.uniform(-0.35, 0.35), 1.0, rng.uniform(-0.35, 0.35)])
        light /= np.linalg.norm(light)

        floor = tuple(float(v) for v in (rng.uniform(0.34, 0.5), rng.uniform(0.24, 0.36),
                                         rng.uniform(0.16, 0.28)))
        wall = tuple(float(v) for v in rng.uniform(0.55, 0.75, size=3))
        ceiling = tuple(float(v) for v in rng.uniform(0.78, 0.9, size=3))

        return SceneSpec(
            room=room,
            objects=tuple(objects),
            removable_id=1,
            light_dir=tuple(float(v) for v in light),
            camera=CameraPose(position=tuple(float(v) for v in cam_pos),
                              yaw_deg=yaw, pitch_deg=pitch),
            floor_albedo=floor,
            wall_albedo=wall,
            ceiling_albedo=ceiling,
        )
    raise PlacementError(f"could not compose scene for {factors}: {last_err}")


# ---------------------------------------------------------------------------
# Ray casting
# ---------------------------------------------------------------------------

def _ray_dirs(camera: CameraPose, width: int, height: int, intr: Intrinsics) -> np.ndarray:
    axes = _camera_axes(camera)
    xs = (np.arange(width, dtype=np.float64) - intr.cx) / intr.fx
    ys = (np.arange(height, dtype=np.float64) - intr.cy) / intr.fy
    dx, dy = np.meshgrid(xs, ys)
    # Unnormalized: the camera-z component is exactly 1, so the ray
    # parameter t IS the camera-frame depth.
    dirs = dx[..., None] * axes[0] + dy[..., None] * axes[1] + axes[2]
    return dirs.reshape(-1, 3)


def _room_hits(origin, dirs, room):
    """Exit distance of each ray from the room interior plus surface id.

    Surfaces: 0 floor (y=0), 1 ceiling, 2 x=0 wall, 3 x=rx wall,
    4 z=0 wall, 5 z=rz wall.
    """
    rx, ry, rz = room
    n = dirs.shape[0]
    t_best = np.full(n, np.inf)
    surf = np.zeros(n, dtype=np.int8)
    bounds = [(1, 0.0, 0), (1, ry, 1), (0, 0.0, 2), (0, rx, 3), (2, 0.0, 4), (2, rz, 5)]
    for axis, plane, sid in bounds:
        d = dirs[:, axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (plane - origin[axis]) / d
        hit = (d != 0) & (t > 1e-9) & (t < t_best)
        t_best = np.where(hit, t, t_best)
        surf = np.where(hit, np.int8(sid), surf)
    return t_best, surf


_ROOM_NORMALS = np.array([
    [0.0, 1.0, 0.0],   # floor
    [0.0, -1.0, 0.0],  # ceiling
    [1.0, 0.0, 0.0],   # x = 0 wall
    [-1.0, 0.0, 0.0],  # x = rx wall
    [0.0, 0.0, 1.0],   # z = 0 wall
    [0.0, 0.0, -1.0],  # z = rz wall
])


def _box_hits(origin, dirs, box: Box):
    lo = np.asarray(box.lo)
    hi = np.asarray(box.hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    t1 = (lo - origin) * inv
    t2 = (hi - origin) * inv
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    # Rays parallel to a slab: inside gives (-inf, inf), outside must miss.
    parallel = dirs == 0
    outside = parallel & ((origin < lo) | (origin > hi))
    tmin = np.where(parallel, -np.inf, tmin)
    tmax = np.where(parallel, np.inf, tmax)
    tmax = np.where(outside, -np.inf, tmax)
    near_axis = np.argmax(tmin, axis=1)
    tn = np.take_along_axis(tmin, near_axis[:, None], axis=1)[:, 0]
    tf = np.min(tmax, axis=1)
    hit = (tf >= tn) & (tn > 1e-9)
    t = np.where(hit, tn, np.inf)
    sign = -np.sign(np.take_along_axis(dirs, near_axis[:, None], axis=1)[:, 0])
    normals = np.zeros_like(dirs)
    rows = np.arange(dirs.shape[0])
    normals[rows, near_axis] = sign
    return t, normals


def _sphere_hits(origin, dirs, sphere: Sphere):
    c = np.asarray(sphere.center)
    oc = origin - c
    a = np.sum(dirs * dirs, axis=1)
    b = 2.0 * dirs @ oc
    cc = float(oc @ oc) - sphere.radius**2
    disc = b * b - 4 * a * cc
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0 = (-b - sq) / (2 * a)
    t1 = (-b + sq) / (2 * a)
    t = np.where(t0 > 1e-9, t0, t1)
    t = np.where(ok & (t > 1e-9), t, np.inf)
    pts = origin + dirs * t[:, None]
    normals = (pts - c) / sphere.radius
    return t, normals


def _render_pass(scene: SceneSpec, camera: CameraPose, dirs, include_removable: bool):
    origin = np.asarray(camera.position, dtype=np.float64)
    n = dirs.shape[0]

    t_room, surf = _room_hits(origin, dirs, scene.room)
    best_t = t_room
    best_obj = np.zeros(n, dtype=np.int32)  # 0 = room
    best_normal = _ROOM_NORMALS[surf]
    best_albedo = np.where(
        (surf == 0)[:, None], np.asarray(scene.floor_albedo),
        np.where((surf == 1)[:, None], np.asarray(scene.ceiling_albedo),
                 np.asarray(scene.wall_albedo)),
    )

    for obj in scene.objects:
        if not include_removable and obj.object_id == scene.removable_id:
            continue
        for prim in obj.primitives:
            if isinstance(prim, Box):
                t, normals = _box_hits(origin, dirs, prim)
            else:
                t, normals = _sphere_hits(origin, dirs, prim)
            closer = t < best_t
            best_t = np.where(closer, t, best_t)
            best_obj = np.where(closer, np.int32(obj.object_id), best_obj)
            best_normal = np.where(closer[:, None], normals, best_normal)
            best_albedo = np.where(closer[:, None], np.asarray(obj.albedo), best_albedo)
    return best_t, best_obj, best_normal, best_albedo


def render_sample(scene: SceneSpec, camera: CameraPose, width: int, height: int,
                  intrinsics: Intrinsics | None = None,
                  factors: FactorLabels | None = None,
                  sample_id: str = "", seed: int = 0,
                  max_depth: float = MAX_DEPTH) -> SampleRecord:
    """Render the with/without pair, the object mask, and shaded RGB."""
    if intrinsics is None:
        intrinsics = default_intrinsics(width, height)
    dirs = _ray_dirs(camera, width, height, intrinsics)

    t_with, obj_with, normal, albedo = _render_pass(scene, camera, dirs, include_removable=True)
    t_without, _, _, _ = _render_pass(scene, camera, dirs, include_removable=False)

    light = np.asarray(scene.light_dir)
    facing = np.sum(normal * dirs, axis=1) > 0
    normal = np.where(facing[:, None], -normal, normal)
    shade = AMBIENT + (1 - AMBIENT) * np.maximum(normal @ light, 0.0)
    rgb = np.clip(albedo * shade[:, None], 0.0, 1.0)
    # Snap to the 8-bit lattice so dataset round trips are bit-exact.
    rgb = np.rint(rgb * 255.0) / 255.0

    depth_with = np.minimum(t_with, max_depth).reshape(height, width)
    depth_without = np.minimum(t_without, max_depth).reshape(height, width)
    mask = (obj_with != scene.removable_id).astype(np.uint8).reshape(height, width)

    return SampleRecord(
        rgb=RgbImage(data=rgb.reshape(height, width, 3).astype(np.float32)),
        mask=ObjectMask(data=mask),
        depth_with=DepthMap(data=depth_with.astype(np.float32), intrinsics=intrinsics),
        depth_without=DepthMap(data=depth_without.astype(np.float32), intrinsics=intrinsics),
        intrinsics=intrinsics,
        factors=factors,
        sample_id=sample_id,
        seed=seed,
    )


def _silhouette_ok(mask: np.ndarray, min_pixels: int = 30, border: int = 2) -> bool:
    inside = mask == 0
    if inside.sum() < min_pixels:
        return False
    ys, xs = np.nonzero(inside)
    h, w = mask.shape
    return (ys.min() >= border and xs.min() >= border
            and ys.max() < h - border and xs.max() < w - border)


def generate_sample(factors: FactorLabels, seed: int, width: int, height: int,
                    intrinsics: Intrinsics | None = None,
                    sample_id: str = "") -> SampleRecord:
    """Scene + render with a usable silhouette; retries with derived seeds."""
    last = "no attempt"
    for attempt in range(30):
        sub = int(np.random.SeedSequence((seed, attempt, 0xF0)).generate_state(1)[0])
        try:
            scene = generate_scene(factors, sub)
        except PlacementError as e:
            last = str(e)
            continue
        rec = render_sample(scene, scene.camera, width, height, intrinsics,
                            factors=factors, sample_id=sample_id, seed=seed)
        if _silhouette_ok(rec.mask.data):
            return rec
        last = "silhouette clipped or too small"
    raise PlacementError(f"no usable sample for {factors} seed {seed}: {last}")


def check_sample(record: SampleRecord):
    """Occlusion invariants every generated sample must satisfy."""
    m = record.mask.data
    dw = record.depth_with.data
    dwo = record.depth_without.data
    if not np.array_equal(dw[m == 1], dwo[m == 1]):
        raise InvalidInput("removal altered visible geometry")
    if not np.all(dwo[m == 0] > dw[m == 0]):
        raise InvalidInput("removal failed to reveal strictly farther geometry")


# ---------------------------------------------------------------------------
# Sensor-noise simulation
# ---------------------------------------------------------------------------

def simulate_sensor_noise(depth: DepthMap, seed: int, white_sigma: float = 0.001,
                          patch_prob: float = 0.01, patch_value: float = 0.01,
                          patch_diameter: int = 5) -> DepthMap:
    """White noise plus randomly seeded elevated discs.

    Every pixel independently becomes a disc center with patch_prob; discs
    add patch_value once per covering disc (overlaps accumulate). The
    white-noise field is drawn first, then the centers, in one stream.
    """
    rng = _rng_for(seed, 0x7E)
    h, w = depth.data.shape
    out = depth.data.astype(np.float64)
    if white_sigma > 0:
        out = out + rng.normal(0.0, white_sigma, size=(h, w))
    else:
        rng.normal(0.0, 1.0, size=(h, w))  # keep the stream layout fixed
    if patch_prob > 0:
        centers = (rng.random((h, w)) < patch_prob).astype(np.float64)
        radius = patch_diameter / 2.0
        r = int(math.floor(radius))
        cover = np.zeros((h, w))
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                if dy * dy + dx * dx <= radius * radius:
                    shifted = np.zeros((h, w))
                    ys = slice(max(0, -dy), min(h, h - dy))
                    xs = slice(max(0, -dx), min(w, w - dx))
                    shifted[ys, xs] = centers[max(0, dy):min(h, h + dy), max(0, dx):min(w, w + dx)]
                    cover += shifted
        out = out + patch_value * cover
    return DepthMap(data=np.maximum(out, 0.0).astype(np.float32), intrinsics=depth.intrinsics)


# ---------------------------------------------------------------------------
# Dataset directory layout
# ---------------------------------------------------------------------------

_FILES = ("rgb.ppm", "mask.pgm", "depth_with.pfm", "depth_without.pfm", "meta.json")


def _meta_dict(record: SampleRecord) -> dict:
    return {
        "sample_id": record.sample_id,
        "seed": record.seed,
        "width": record.rgb.width,
        "height": record.rgb.height,
        "intrinsics": asdict(record.intrinsics),
        "factors": asdict(record.factors) if record.factors else None,
    }


def write_dataset(records, directory):
    """One subdirectory per sample with the five canonical files."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    for rec in records:
        d = root / rec.sample_id
        d.mkdir(parents=True, exist_ok=True)
        (d / "rgb.ppm").write_bytes(encode_ppm(rec.rgb))
        (d / "mask.pgm").write_bytes(encode_pgm(rec.mask))
        (d / "depth_with.pfm").write_bytes(encode_pfm(rec.depth_with))
        (d / "depth_without.pfm").write_bytes(encode_pfm(rec.depth_without))
        (d / "meta.json").write_text(json.dumps(_meta_dict(rec), indent=2, sort_keys=True) + "\n")


def load_dataset(directory) -> list[SampleRecord]:
    """Load every sample subdirectory, sorted by id."""
    root = Path(directory)
    if not root.is_dir():
        raise DatasetError(f"not a dataset directory: {directory}")
    records = []
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        sid = d.name
        for name in _FILES:
            if not (d / name).is_file():
                raise DatasetError(f"sample {sid}: {name} missing")
        try:
            meta = json.loads((d / "meta.json").read_text())
            intr = Intrinsics(**meta["intrinsics"])
            factors = FactorLabels(**meta["factors"]) if meta.get("factors") else None
            rgb = decode_ppm((d / "rgb.ppm").read_bytes())
            mask = decode_pgm((d / "mask.pgm").read_bytes())
            dw = decode_pfm_array((d / "depth_with.pfm").read_bytes())
            dwo = decode_pfm_array((d / "depth_without.pfm").read_bytes())
        except DatasetError:
            raise
        except Exception as e:
            raise DatasetError(f"sample {sid}: {e}") from e
        shapes = {rgb.data.shape[:2], mask.data.shape, dw.shape, dwo.shape}
        if len(shapes) != 1:
            raise DatasetError(f"sample {sid}: field dimensions disagree: {shapes}")
        records.append(
            SampleRecord(
                rgb=rgb,
                mask=mask,
                depth_with=DepthMap(data=dw, intrinsics=intr),
                depth_without=DepthMap(data=dwo, intrinsics=intr),
                intrinsics=intr,
                factors=factors,
                sample_id=meta.get("sample_id", sid),
                seed=int(meta.get("seed", 0)),
            )
        )
    return records
