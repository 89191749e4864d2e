"""Deterministic synthetic lidar/camera scenes with exact ground truth.

Every lidar beam is ray-cast against a flat ground plane and a set of
yawed boxes and vertical cylinders; the nearest hit is emitted. The
camera segmentation map is produced by the same ray caster from the
camera center, so labels and points agree by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .evaluation import GroundTruth
from .model import (
    Box2D,
    CameraModel,
    Detection,
    PointCloud,
    SegMap,
    camera_center,
    make_camera,
    pixel_rays,
)
from .proposals import SceneBundle
from .range_cluster import bin_centers

SHAPES = ("box", "cylinder")
KINDS = ("common", "corner", "background_structure")
ROAD_ID = 0
SKY_ID = 10
DEFAULT_SEG_IDS = {
    "car": 13,
    "truck": 14,
    "pedestrian": 11,
    "cyclist": 18,
    "building": 2,
    "wall": 3,
    "fence": 4,
    "pole": 5,
    "tree": 8,
}
# Unlabeled id for anything a road-scene segmenter has no class for.
UNKNOWN_SEG_ID = 255
GROUND_LABEL = -1
CYLINDER_SIDES = 32


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class ObjectSpec:
    """A box or vertical cylinder. ``position`` is the geometric center;
    ``extents`` are (length, width, height), cylinders use length/2 as radius."""

    shape: str
    position: tuple[float, float, float]
    extents: tuple[float, float, float]
    kind: str
    yaw: float = 0.0
    category: str = "object"
    seg_id: int | None = None

    @property
    def label_id(self) -> int:
        if self.seg_id is not None:
            return self.seg_id
        return DEFAULT_SEG_IDS.get(self.category, UNKNOWN_SEG_ID)

    def footprint_radius(self) -> float:
        if self.shape == "cylinder":
            return self.extents[0] / 2.0
        return math.hypot(self.extents[0], self.extents[1]) / 2.0

    def hull_vertices(self) -> np.ndarray:
        """Vertices of a convex solid containing the object."""
        cx, cy, cz = self.position
        l, w, h = self.extents
        if self.shape == "box":
            local = np.array([(sx * l / 2, sy * w / 2) for sx in (-1, 1) for sy in (-1, 1)])
            c, s = math.cos(self.yaw), math.sin(self.yaw)
            xy = local @ np.array([[c, s], [-s, c]])
        else:
            r = l / 2 / math.cos(math.pi / CYLINDER_SIDES)
            ang = 2 * math.pi * np.arange(CYLINDER_SIDES) / CYLINDER_SIDES
            xy = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
        xy = xy + (cx, cy)
        lo = np.hstack([xy, np.full((len(xy), 1), cz - h / 2)])
        hi = np.hstack([xy, np.full((len(xy), 1), cz + h / 2)])
        return np.vstack([lo, hi])

    def contains(self, p) -> bool:
        q = np.asarray(p, dtype=np.float64) - self.position
        l, w, h = self.extents
        if abs(q[2]) > h / 2:
            return False
        if self.shape == "cylinder":
            return math.hypot(q[0], q[1]) <= l / 2
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        lx = c * q[0] + s * q[1]
        ly = -s * q[0] + c * q[1]
        return abs(lx) <= l / 2 and abs(ly) <= w / 2


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    camera: CameraModel
    objects: tuple[ObjectSpec, ...] = ()
    ground_height: float = 1.73
    rows: int = 64
    cols: int = 2048
    elevation_min: float = -24.9
    elevation_max: float = 2.0
    max_range: float = 120.0
    range_noise: float = 0.0
    detection_jitter: float = 0.0
    scene_id: str = "scene"


@dataclass(frozen=True, eq=False)
class SceneOracle:
    """Generator-side truth: per-point owner (-1 ground), per-object 2D
    box (None when not visible) and lidar hit counts."""

    point_labels: np.ndarray
    object_boxes: tuple[Box2D | None, ...]
    hit_counts: tuple[int, ...]
    objects: tuple[ObjectSpec, ...]

    @property
    def ground_mask(self) -> np.ndarray:
        return self.point_labels == GROUND_LABEL

    def ground_truth(self, kinds=("corner",)) -> list[GroundTruth]:
        return [
            GroundTruth(box, obj.category)
            for obj, box in zip(self.objects, self.object_boxes)
            if box is not None and obj.kind in kinds
        ]


def validate_spec(spec: SceneSpec) -> None:
    if spec.rows < 1 or spec.cols < 1:
        raise InvalidSpec("lidar needs at least one row and column")
    if not spec.elevation_min < spec.elevation_max:
        raise InvalidSpec("elevation_min must be below elevation_max")
    if not spec.ground_height > 0:
        raise InvalidSpec("sensor must be above the ground")
    if spec.max_range <= 0 or spec.range_noise < 0 or spec.detection_jitter < 0:
        raise InvalidSpec("max_range must be positive and noise levels non-negative")
    cam_c = camera_center(spec.camera)
    for i, obj in enumerate(spec.objects):
        if obj.shape not in SHAPES:
            raise InvalidSpec(f"object {i}: unknown shape {obj.shape!r}")
        if obj.kind not in KINDS:
            raise InvalidSpec(f"object {i}: unknown kind {obj.kind!r}")
        if not all(e > 0 for e in obj.extents):
            raise InvalidSpec(f"object {i}: extents must be positive")
        if obj.contains((0.0, 0.0, 0.0)) or obj.contains(cam_c):
            raise InvalidSpec(f"object {i} encloses a sensor")


def _ray_box(origin: np.ndarray, dirs: np.ndarray, obj: ObjectSpec) -> np.ndarray:
    c, s = math.cos(obj.yaw), math.sin(obj.yaw)
    rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    o = rot @ (origin - np.asarray(obj.position))
    d = dirs @ rot.T
    half = np.asarray(obj.extents) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / d
        t2 = (half - o) / d
    tmin = np.fmin(t1, t2)
    tmax = np.fmax(t1, t2)
    # axis-parallel rays: inside the slab means no constraint, outside means miss
    parallel = d == 0
    inside_slab = np.abs(o) <= half
    tmin = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), tmin)
    tmax = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), tmax)
    near = tmin.max(axis=1)
    far = tmax.min(axis=1)
    return np.where((near <= far) & (near > 0), near, np.inf)


def _ray_cylinder(origin: np.ndarray, dirs: np.ndarray, obj: ObjectSpec) -> np.ndarray:
    cx, cy, cz = obj.position
    r = obj.extents[0] / 2.0
    zb, zt = cz - obj.extents[2] / 2.0, cz + obj.extents[2] / 2.0
    ox, oy, oz = origin[0] - cx, origin[1] - cy, origin[2]
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    a = dx * dx + dy * dy
    b = 2 * (ox * dx + oy * dy)
    cc = ox * ox + oy * oy - r * r
    disc = b * b - 4 * a * cc
    best = np.full(dirs.shape[0], np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
        for t in ((-b - sq) / (2 * a), (-b + sq) / (2 * a)):
            z = oz + t * dz
            ok = (t > 0) & (z >= zb) & (z <= zt)
            best = np.where(ok & (t < best), t, best)
        for zc in (zb, zt):
            t = (zc - oz) / dz
            px, py = ox + t * dx, oy + t * dy
            ok = (t > 0) & (px * px + py * py <= r * r)
            best = np.where(ok & (t < best), t, best)
    return best


def ray_cast(origin, dirs: np.ndarray, spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Nearest hit distance along each unit ray and the owner id
    (-1 ground, object index, or -2 for no hit within ``max_range``)."""
    origin = np.asarray(origin, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = np.where(dirs[:, 2] < 0, (-spec.ground_height - origin[2]) / dirs[:, 2], np.inf)
    t_best = np.where(t_ground > 0, t_ground, np.inf)
    owner = np.full(dirs.shape[0], GROUND_LABEL, dtype=np.int64)
    for k, obj in enumerate(spec.objects):
        t = _ray_box(origin, dirs, obj) if obj.shape == "box" else _ray_cylinder(origin, dirs, obj)
        closer = t < t_best
        t_best = np.where(closer, t, t_best)
        owner[closer] = k
    miss = ~(t_best <= spec.max_range)
    owner[miss] = -2
    t_best[miss] = np.inf
    return t_best, owner


def beam_directions(spec: SceneSpec) -> np.ndarray:
    """Unit direction per beam, row-major over (row, col) with row 0 on top."""
    row_angles, col_angles = bin_centers(spec.rows, spec.cols, spec.elevation_min, spec.elevation_max)
    el = np.radians(row_angles)[:, None]
    az = np.radians(col_angles)[None, :]
    d = np.stack(
        np.broadcast_arrays(np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)),
        axis=-1,
    )
    return d.reshape(-1, 3)


def analytic_box(obj: ObjectSpec, cam: CameraModel) -> Box2D | None:
    """Image-clipped envelope of the projected hull; None if any hull vertex
    is behind the camera or nothing lands inside the image."""
    hom = obj.hull_vertices() @ cam.P[:, :3].T + cam.P[:, 3]
    if np.any(hom[:, 2] <= 0):
        return None
    uv = hom[:, :2] / hom[:, 2:3]
    x0, y0 = max(uv[:, 0].min(), 0.0), max(uv[:, 1].min(), 0.0)
    x1, y1 = min(uv[:, 0].max(), float(cam.width)), min(uv[:, 1].max(), float(cam.height))
    if x1 <= x0 or y1 <= y0:
        return None
    return Box2D(float(x0), float(y0), float(x1 - x0), float(y1 - y0))


def render_segmentation(spec: SceneSpec) -> SegMap:
    cam = spec.camera
    v, u = np.mgrid[0 : cam.height, 0 : cam.width]
    dirs = pixel_rays(cam, u.ravel() + 0.5, v.ravel() + 0.5)
    _, owner = ray_cast(camera_center(cam), dirs, spec)
    lut = np.array([obj.label_id for obj in spec.objects] + [SKY_ID, ROAD_ID], dtype=np.uint8)
    # owner -2 -> SKY (index -2), -1 -> ROAD (index -1)
    return SegMap(lut[owner].reshape(cam.height, cam.width))


def generate_scene(spec: SceneSpec) -> tuple[SceneBundle, SceneOracle]:
    validate_spec(spec)
    rng = np.random.default_rng(spec.seed)
    dirs = beam_directions(spec)
    t, owner = ray_cast(np.zeros(3), dirs, spec)
    hit = owner != -2
    t, owner, dirs = t[hit], owner[hit], dirs[hit]
    if spec.range_noise > 0:
        t = t + rng.uniform(-spec.range_noise, spec.range_noise, size=t.shape)
    xyz = dirs * t[:, None]
    intensity = np.where(owner == GROUND_LABEL, 0.2, 0.6)
    cloud = PointCloud(np.hstack([xyz, intensity[:, None]]))

    boxes = []
    for obj in spec.objects:
        boxes.append(analytic_box(obj, spec.camera) if obj.kind != "background_structure" else None)
    counts = tuple(int(np.count_nonzero(owner == k)) for k in range(len(spec.objects)))

    detections = []
    for obj, box in zip(spec.objects, boxes):
        if obj.kind != "common" or box is None:
            continue
        if spec.detection_jitter > 0:
            dx, dy = rng.uniform(-spec.detection_jitter, spec.detection_jitter, size=2)
            x0 = min(max(box.x + dx, 0.0), spec.camera.width - 1.0)
            y0 = min(max(box.y + dy, 0.0), spec.camera.height - 1.0)
            w = min(box.w, spec.camera.width - x0)
            h = min(box.h, spec.camera.height - y0)
            box = Box2D(float(x0), float(y0), float(w), float(h))
        detections.append(Detection(box, obj.category, 1.0))

    bundle = SceneBundle(spec.scene_id, cloud, spec.camera, render_segmentation(spec), tuple(detections))
    oracle = SceneOracle(owner.copy(), tuple(boxes), counts, spec.objects)
    return bundle, oracle


@dataclass(frozen=True)
class CorpusKnobs:
    """Per-scene object count ranges (inclusive) and placement limits."""

    corner: tuple[int, int] = (1, 2)
    common: tuple[int, int] = (1, 2)
    background: tuple[int, int] = (0, 2)
    offscreen_background: tuple[int, int] = (0, 2)
    corner_distance: tuple[float, float] = (8.0, 25.0)
    common_distance: tuple[float, float] = (10.0, 30.0)
    background_distance: tuple[float, float] = (8.0, 30.0)
    max_yaw: float = 25.0
    rows: int = 64
    cols: int = 2048
    elevation_min: float = -24.9
    elevation_max: float = 2.0
    image_width: int = 1024
    image_height: int = 384
    fov: float = 100.0
    camera_offset: tuple[float, float, float] = (0.27, 0.0, -0.08)
    ground_height: float = 1.73
    range_noise: float = 0.0
    detection_jitter: float = 0.0
    angular_margin: float = 2.0


CORNER_TEMPLATES = (
    ("cone", "cylinder", (0.5, 0.7), (0.5, 0.7), (0.8, 1.1)),
    ("barrier", "box", (0.4, 0.6), (1.2, 2.4), (0.8, 1.2)),
    ("debris", "box", (0.7, 1.5), (0.7, 1.5), (0.7, 1.2)),
    ("cart", "box", (0.9, 1.4), (0.6, 0.9), (0.9, 1.3)),
)
COMMON_TEMPLATES = (
    ("car", "box", (3.6, 4.6), (1.6, 1.9), (1.4, 1.7)),
    ("pedestrian", "cylinder", (0.5, 0.7), (0.5, 0.7), (1.6, 1.9)),
)
BACKGROUND_TEMPLATES = (
    ("wall", "box", (0.3, 0.5), (3.0, 6.0), (2.5, 4.0)),
    ("pole", "cylinder", (0.25, 0.35), (0.25, 0.35), (4.0, 6.0)),
    ("tree", "cylinder", (0.5, 0.9), (0.5, 0.9), (3.0, 5.0)),
)


def _sample_object(rng, template, kind, distance, azimuth, yaw, ground_height) -> ObjectSpec:
    name, shape, lr, wr, hr = template
    l = float(rng.uniform(*lr))
    w = l if shape == "cylinder" else float(rng.uniform(*wr))
    h = float(rng.uniform(*hr))
    a = math.radians(azimuth)
    pos = (distance * math.cos(a), distance * math.sin(a), -ground_height + h / 2)
    return ObjectSpec(shape, pos, (l, w, h), kind, yaw, name)


def _layout(rng, knobs: CorpusKnobs, counts: dict[str, int]) -> list[ObjectSpec] | None:
    half_fov = knobs.fov / 2.0
    usable = half_fov - knobs.angular_margin
    taken: list[tuple[float, float]] = []
    placed: list[ObjectSpec] = []

    def free(lo: float, hi: float) -> bool:
        return all(hi + knobs.angular_margin < a or lo - knobs.angular_margin > b for a, b in taken)

    plan = (
        [("common", COMMON_TEMPLATES, knobs.common_distance, True)] * counts["common"]
        + [("corner", CORNER_TEMPLATES, knobs.corner_distance, True)] * counts["corner"]
        + [("background_structure", BACKGROUND_TEMPLATES, knobs.background_distance, True)] * counts["background"]
        + [("background_structure", BACKGROUND_TEMPLATES, knobs.background_distance, False)]
        * counts["offscreen_background"]
    )
    for kind, templates, (dmin, dmax), visible in plan:
        template = templates[int(rng.integers(len(templates)))]
        for _ in range(200):
            d = float(rng.uniform(dmin, dmax))
            if visible:
                az = float(rng.uniform(-usable, usable))
            else:
                az = float(rng.uniform(half_fov + 10.0, 360.0 - half_fov - 10.0))
                az = az - 360.0 if az > 180.0 else az
            if template[0] == "wall":
                yaw = math.radians(az)
            else:
                yaw = math.radians(float(rng.uniform(-knobs.max_yaw, knobs.max_yaw)))
            obj = _sample_object(rng, template, kind, d, az, yaw, knobs.ground_height)
            half = math.degrees(math.asin(min(1.0, obj.footprint_radius() / d)))
            lo, hi = az - half, az + half
            if visible and (lo < -usable or hi > usable):
                continue
            if not visible and (abs(lo) <= half_fov + 5.0 or abs(hi) <= half_fov + 5.0 or lo < -180 or hi > 180):
                continue
            if free(lo, hi):
                taken.append((lo, hi))
                placed.append(obj)
                break
        else:
            return None
    return placed


def generate_corpus(n: int, seed: int = 0, knobs: CorpusKnobs | None = None) -> list[SceneSpec]:
    if n < 1:
        raise ValueError("corpus needs at least one scene")
    knobs = knobs or CorpusKnobs()
    focal = knobs.image_width / 2.0 / math.tan(math.radians(knobs.fov / 2.0))
    cam = make_camera(focal, knobs.image_width, knobs.image_height, knobs.camera_offset)
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(n):
        counts = {
            name: int(rng.integers(lo, hi + 1))
            for name, (lo, hi) in (
                ("corner", knobs.corner),
                ("common", knobs.common),
                ("background", knobs.background),
                ("offscreen_background", knobs.offscreen_background),
            )
        }
        for _ in range(100):
            objects = _layout(rng, knobs, counts)
            if objects is not None:
                break
        else:
            raise InvalidSpec(f"could not place {counts} without overlap; loosen the knobs")
        specs.append(
            SceneSpec(
                seed=int(rng.integers(2**31)),
                camera=cam,
                objects=tuple(objects),
                ground_height=knobs.ground_height,
                rows=knobs.rows,
                cols=knobs.cols,
                elevation_min=knobs.elevation_min,
                elevation_max=knobs.elevation_max,
                range_noise=knobs.range_noise,
                detection_jitter=knobs.detection_jitter,
                scene_id=f"scene_{i:04d}",
            )
        )
    return specs
