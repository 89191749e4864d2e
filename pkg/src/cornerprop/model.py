"""Shared geometry and annotation types, calibration math and pipeline config."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

# Cityscapes train ids: road, sidewalk, building, wall, fence, pole,
# vegetation, terrain, sky.
DEFAULT_BACKGROUND_IDS = frozenset({0, 1, 2, 3, 4, 5, 8, 9, 10})
# box extents below this many pixels are projection round-off, not width
MIN_BOX_EXTENT = 1e-6


class Point3(NamedTuple):
    x: float
    y: float
    z: float
    intensity: float = 0.0


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered lidar returns as an (N, 4) float64 array of x, y, z, intensity.

    Row order is the point identity used by every later stage.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 1 and arr.size == 0:
            arr = arr.reshape(0, 4)
        if arr.ndim != 2 or arr.shape[1] not in (3, 4):
            raise ValueError(f"point array must be (N, 3) or (N, 4), got {arr.shape}")
        if arr.shape[1] == 3:
            arr = np.hstack([arr, np.zeros((arr.shape[0], 1))])
        if not np.all(np.isfinite(arr[:, :3])):
            raise ValueError("point coordinates must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_points(cls, points: Sequence[Sequence[float]]) -> PointCloud:
        if not points:
            return cls(np.zeros((0, 4)))
        return cls(np.array([tuple(p) for p in points], dtype=np.float64))

    @property
    def xyz(self) -> np.ndarray:
        return self.data[:, :3]

    def __len__(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, i: int) -> Point3:
        return Point3(*map(float, self.data[i]))

    def subset(self, indices) -> np.ndarray:
        return self.data[np.asarray(indices, dtype=np.intp)]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole camera given by a 3x4 matrix taking lidar-frame points to pixels."""

    P: np.ndarray
    width: int
    height: int

    def __post_init__(self) -> None:
        P = np.asarray(self.P, dtype=np.float64)
        if P.shape != (3, 4):
            raise ValueError(f"P must be 3x4, got {P.shape}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if np.linalg.matrix_rank(P) < 3:
            raise ValueError("P must have full row rank")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CameraModel):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and bool(np.array_equal(self.P, other.P))
        )


@dataclass(frozen=True)
class Box2D:
    """Continuous pixel rectangle, COCO (x, y, w, h) convention."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box must have positive size, got w={self.w} h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class Detection:
    box: Box2D
    category: str
    score: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")


@dataclass(frozen=True, eq=False)
class SegMap:
    """Per-pixel 8-bit class ids, shape (height, width)."""

    labels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise ValueError("segmentation labels must be 2-D")
        arr = arr.astype(np.uint8, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "labels", arr)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SegMap):
            return NotImplemented
        return bool(np.array_equal(self.labels, other.labels))


@dataclass(frozen=True)
class PipelineConfig:
    theta_min: float = 8.0
    min_cluster_points: int = 10
    max_cluster_distance: float = 50.0
    bg_ratio_max: float = 0.45
    suppression_iou_max: float = 0.25
    ransac_iterations: int = 200
    ransac_inlier_dist: float = 0.2
    # None disables the wall guard.
    ransac_max_tilt: float | None = 30.0
    range_rows: int = 64
    range_cols: int = 2048
    elevation_min: float = -24.9
    elevation_max: float = 2.0
    background_class_ids: frozenset[int] = field(default=DEFAULT_BACKGROUND_IDS)
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "background_class_ids", frozenset(int(i) for i in self.background_class_ids))
        if not 0.0 < self.theta_min < 180.0:
            raise ValueError("theta_min must be in (0, 180) degrees")
        for name in ("bg_ratio_max", "suppression_iou_max"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.range_rows < 1 or self.range_cols < 1:
            raise ValueError("range image size must be at least 1x1")
        if not self.elevation_min < self.elevation_max:
            raise ValueError("elevation_min must be below elevation_max")
        if self.min_cluster_points < 0 or self.max_cluster_distance < 0:
            raise ValueError("cluster thresholds must be non-negative")
        if self.ransac_iterations < 1 or self.ransac_inlier_dist < 0:
            raise ValueError("invalid RANSAC parameters")
        if any(not 0 <= i <= 255 for i in self.background_class_ids):
            raise ValueError("background class ids must be 8-bit")


def project_points(xyz: np.ndarray, cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Project (N, 3) points; returns (N, 2) pixels and a visibility mask.

    Visible means positive depth and a pixel inside the half-open image
    rectangle. Pixels of invisible points are NaN where depth <= 0.
    """
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    hom = xyz @ cam.P[:, :3].T + cam.P[:, 3]
    depth = hom[:, 2]
    front = depth > 0
    uv = np.full((xyz.shape[0], 2), np.nan)
    uv[front] = hom[front, :2] / depth[front, None]
    with np.errstate(invalid="ignore"):
        inside = (
            front
            & (uv[:, 0] >= 0)
            & (uv[:, 0] < cam.width)
            & (uv[:, 1] >= 0)
            & (uv[:, 1] < cam.height)
        )
    return uv, inside


def project_point(p: Point3 | Sequence[float], cam: CameraModel) -> tuple[float, float] | None:
    uv, inside = project_points(np.asarray(tuple(p)[:3], dtype=np.float64), cam)
    if not inside[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1])


def iou(a: Box2D, b: Box2D) -> float:
    if a == b:
        # exact even where x + w - x != w in floating point
        return 1.0
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return min(1.0, inter / union)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) xywh arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ax2 = a[:, 0] + a[:, 2]
    ay2 = a[:, 1] + a[:, 3]
    bx2 = b[:, 0] + b[:, 2]
    by2 = b[:, 1] + b[:, 3]
    iw = np.minimum(ax2[:, None], bx2[None]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(ay2[:, None], by2[None]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(inter > 0, inter / union, 0.0)
    same = np.all(a[:, None, :] == b[None, :, :], axis=2)
    return np.where(same, 1.0, np.minimum(out, 1.0))


def box_from_pixels(pixels, cam: CameraModel) -> Box2D | None:
    pts = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if len(np.unique(pts, axis=0)) < 2:
        return None
    x0 = max(float(pts[:, 0].min()), 0.0)
    y0 = max(float(pts[:, 1].min()), 0.0)
    x1 = min(float(pts[:, 0].max()), float(cam.width))
    y1 = min(float(pts[:, 1].max()), float(cam.height))
    if x1 - x0 <= MIN_BOX_EXTENT or y1 - y0 <= MIN_BOX_EXTENT:
        return None
    return Box2D(x0, y0, x1 - x0, y1 - y0)


def make_camera(
    focal: float,
    width: int,
    height: int,
    translation: Sequence[float] = (0.0, 0.0, 0.0),
    cx: float | None = None,
    cy: float | None = None,
) -> CameraModel:
    """Forward-looking camera in the lidar frame (x forward, y left, z up).

    ``translation`` is the camera center expressed in the lidar frame.
    """
    cx = width / 2.0 if cx is None else cx
    cy = height / 2.0 if cy is None else cy
    K = np.array([[focal, 0.0, cx], [0.0, focal, cy], [0.0, 0.0, 1.0]])
    # camera x right = -lidar y, camera y down = -lidar z, camera z = lidar x
    R = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    t = -R @ np.asarray(translation, dtype=np.float64)
    return CameraModel(K @ np.hstack([R, t[:, None]]), width, height)


def camera_center(cam: CameraModel) -> np.ndarray:
    """Optical center in the lidar frame (right null vector of P)."""
    M = cam.P[:, :3]
    return -np.linalg.solve(M, cam.P[:, 3])


def pixel_rays(cam: CameraModel, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Unit lidar-frame ray directions through continuous pixels (u, v)."""
    M = cam.P[:, :3]
    hom = np.stack([u, v, np.ones_like(u)], axis=-1)
    d = hom @ np.linalg.inv(M).T
    return d / np.linalg.norm(d, axis=-1, keepdims=True)
