"""RANSAC ground plane removal."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import PointCloud

COLLINEAR_EPS = 1e-9


class TooFewPoints(ValueError):
    pass


class DegenerateGeometry(ValueError):
    pass


@dataclass(frozen=True)
class Plane:
    """The set {p : normal . p + offset = 0} with a unit normal."""

    normal: tuple[float, float, float]
    offset: float

    def __post_init__(self) -> None:
        n = np.asarray(self.normal, dtype=np.float64)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("plane normal must be unit length")
        object.__setattr__(self, "normal", tuple(float(c) for c in n))
        object.__setattr__(self, "offset", float(self.offset))

    def distances(self, xyz: np.ndarray) -> np.ndarray:
        return np.abs(np.asarray(xyz) @ np.asarray(self.normal) + self.offset)

    def flipped(self) -> Plane:
        return Plane(tuple(-c for c in self.normal), -self.offset)


@dataclass(frozen=True)
class GroundSplit:
    ground_indices: np.ndarray
    nonground_indices: np.ndarray
    plane: Plane | None


def _plane_through(p0: np.ndarray, p1: np.ndarray, p2: np.ndarray) -> Plane | None:
    n = np.cross(p1 - p0, p2 - p0)
    norm = float(np.linalg.norm(n))
    if norm < COLLINEAR_EPS:
        return None
    n = n / norm
    return Plane(tuple(n), -float(n @ p0))


def fit_ground_plane(
    cloud: PointCloud,
    iterations: int = 200,
    inlier_dist: float = 0.2,
    seed: int = 0,
    max_tilt: float | None = 30.0,
    log: list | None = None,
) -> Plane:
    """Best 3-point plane hypothesis by inlier count.

    Collinear triples are resampled without consuming an iteration. Planes
    tilted more than ``max_tilt`` degrees from horizontal are counted as
    iterations but never accepted. Ties keep the earliest hypothesis.
    If ``log`` is a list, every accepted-for-scoring hypothesis is appended
    as ``(plane, inlier_count)``.
    """
    xyz = cloud.xyz
    n = xyz.shape[0]
    if n < 3:
        raise TooFewPoints(f"need at least 3 points, got {n}")
    rng = np.random.default_rng(seed)
    cos_tilt = None if max_tilt is None else math.cos(math.radians(max_tilt))
    best: Plane | None = None
    best_count = -1
    done = 0
    wasted = 0
    max_wasted = max(1000, 100 * iterations)
    while done < iterations:
        i, j, k = rng.choice(n, size=3, replace=False)
        plane = _plane_through(xyz[i], xyz[j], xyz[k])
        if plane is None:
            wasted += 1
            if wasted > max_wasted:
                break
            continue
        done += 1
        if cos_tilt is not None and abs(plane.normal[2]) < cos_tilt:
            continue
        count = int(np.count_nonzero(plane.distances(xyz) <= inlier_dist))
        if log is not None:
            log.append((plane, count))
        if count > best_count:
            best, best_count = plane, count
    if best is None:
        raise DegenerateGeometry("no admissible plane hypothesis found")
    return best


def split_ground(cloud: PointCloud, plane: Plane, inlier_dist: float = 0.2) -> GroundSplit:
    if len(cloud) == 0:
        empty = np.zeros(0, dtype=np.intp)
        return GroundSplit(empty, empty.copy(), plane)
    mask = plane.distances(cloud.xyz) <= inlier_dist
    return GroundSplit(np.flatnonzero(mask), np.flatnonzero(~mask), plane)
