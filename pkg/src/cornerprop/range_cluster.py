"""Range-image construction and angle-criterion BFS clustering."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .model import PointCloud


@dataclass(frozen=True, eq=False)
class RangeImage:
    """Polar grid of ranges. Row 0 is the highest elevation bin.

    ``range`` is 0 and ``point_index`` is -1 where there is no return.
    """

    range: np.ndarray
    point_index: np.ndarray
    row_angles: np.ndarray
    col_angles: np.ndarray

    @property
    def rows(self) -> int:
        return self.range.shape[0]

    @property
    def cols(self) -> int:
        return self.range.shape[1]

    @property
    def occupied(self) -> np.ndarray:
        return self.point_index >= 0


@dataclass(frozen=True, eq=False)
class ClusterLabels:
    """Cluster id per pixel, -1 for unoccupied pixels."""

    label: np.ndarray
    num_clusters: int


@dataclass(frozen=True, eq=False)
class Cluster:
    id: int
    pixel_coords: np.ndarray
    point_indices: np.ndarray
    min_sensor_distance: float

    @property
    def size(self) -> int:
        return int(self.point_indices.shape[0])


def bin_centers(rows: int, cols: int, elevation_min: float, elevation_max: float) -> tuple[np.ndarray, np.ndarray]:
    span = elevation_max - elevation_min
    row_angles = elevation_max - (np.arange(rows) + 0.5) * span / rows
    col_angles = -180.0 + (np.arange(cols) + 0.5) * 360.0 / cols
    return row_angles, col_angles


def build_range_image(
    cloud: PointCloud,
    rows: int,
    cols: int,
    elevation_min: float,
    elevation_max: float,
    indices=None,
) -> RangeImage:
    """Bin points into an elevation x azimuth grid, nearest return wins.

    ``indices`` restricts the build to a subset of the cloud; stored
    back-pointers always refer to the full cloud.
    """
    if rows < 1 or cols < 1:
        raise ValueError("range image needs at least one row and column")
    if not elevation_min < elevation_max:
        raise ValueError("elevation_min must be below elevation_max")
    row_angles, col_angles = bin_centers(rows, cols, elevation_min, elevation_max)
    rng_img = np.zeros((rows, cols))
    idx_img = np.full((rows, cols), -1, dtype=np.int64)

    src = np.arange(len(cloud)) if indices is None else np.asarray(indices, dtype=np.int64)
    xyz = cloud.xyz[src]
    r = np.linalg.norm(xyz, axis=1)
    keep = r > 0
    src, xyz, r = src[keep], xyz[keep], r[keep]
    elev = np.degrees(np.arctan2(xyz[:, 2], np.hypot(xyz[:, 0], xyz[:, 1])))
    az = np.degrees(np.arctan2(xyz[:, 1], xyz[:, 0]))
    inside = (elev >= elevation_min) & (elev <= elevation_max)
    src, r, elev, az = src[inside], r[inside], elev[inside], az[inside]

    span = elevation_max - elevation_min
    row = np.minimum(np.floor((elevation_max - elev) / span * rows).astype(np.int64), rows - 1)
    col = np.floor((az + 180.0) / 360.0 * cols).astype(np.int64) % cols
    flat = row * cols + col
    order = np.lexsort((src, r, flat))
    flat, r, src = flat[order], r[order], src[order]
    first = np.ones(flat.shape[0], dtype=bool)
    first[1:] = flat[1:] != flat[:-1]
    rng_img.ravel()[flat[first]] = r[first]
    idx_img.ravel()[flat[first]] = src[first]
    return RangeImage(rng_img, idx_img, row_angles, col_angles)


def merge_angle(d1: float, d2: float, alpha: float) -> float:
    """Angle in degrees at the farther return between the nearer return and
    the farther beam; large values mean both returns lie on one surface."""
    if d1 < d2:
        d1, d2 = d2, d1
    a = math.radians(alpha)
    return math.degrees(math.atan2(d2 * math.sin(a), d1 - d2 * math.cos(a)))


def _merge_angles(ra: np.ndarray, rb: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    d1 = np.maximum(ra, rb)
    d2 = np.minimum(ra, rb)
    a = np.radians(alpha)
    return np.degrees(np.arctan2(d2 * np.sin(a), d1 - d2 * np.cos(a)))


def neighbor_steps(img: RangeImage) -> tuple[np.ndarray, np.ndarray]:
    """Angular step to the next row (rows-1,) and to the next column with
    wrap-around (cols,)."""
    row_step = np.abs(np.diff(img.row_angles))
    ca = img.col_angles
    col_step = np.empty(img.cols)
    col_step[:-1] = np.diff(ca)
    col_step[-1] = ca[0] + 360.0 - ca[-1]
    return row_step, np.abs(col_step)


def merge_edges(img: RangeImage, theta_min: float) -> tuple[np.ndarray, np.ndarray]:
    """Boolean masks of passing neighbor pairs.

    ``down[r, c]`` links (r, c)-(r+1, c); ``right[r, c]`` links
    (r, c)-(r, (c+1) % cols).
    """
    occ = img.occupied
    rng = img.range
    row_step, col_step = neighbor_steps(img)
    with np.errstate(invalid="ignore", divide="ignore"):
        down = occ[:-1] & occ[1:] & (_merge_angles(rng[:-1], rng[1:], row_step[:, None]) > theta_min)
        nxt = np.roll(rng, -1, axis=1)
        right = occ & np.roll(occ, -1, axis=1) & (_merge_angles(rng, nxt, col_step[None, :]) > theta_min)
    if img.cols == 1:
        right[:] = False
    return down, right


def cluster_range_image(img: RangeImage, theta_min: float = 8.0) -> ClusterLabels:
    """Breadth-first labeling over 4-neighbors joined by the merge-angle test.

    Ids follow row-major order of each cluster's first pixel.
    """
    rows, cols = img.rows, img.cols
    down, right = merge_edges(img, theta_min)
    down_l = down.tolist()
    right_l = right.tolist()
    occ_flat = np.flatnonzero(img.occupied.ravel()).tolist()
    label = [-1] * (rows * cols)
    next_id = 0
    queue: deque[int] = deque()
    for seed in occ_flat:
        if label[seed] >= 0:
            continue
        label[seed] = next_id
        queue.append(seed)
        while queue:
            p = queue.popleft()
            r, c = divmod(p, cols)
            if c + 1 < cols:
                if right_l[r][c] and label[p + 1] < 0:
                    label[p + 1] = next_id
                    queue.append(p + 1)
            elif right_l[r][c] and label[p - c] < 0:
                label[p - c] = next_id
                queue.append(p - c)
            if c > 0:
                if right_l[r][c - 1] and label[p - 1] < 0:
                    label[p - 1] = next_id
                    queue.append(p - 1)
            elif cols > 1 and right_l[r][cols - 1] and label[p + cols - 1] < 0:
                label[p + cols - 1] = next_id
                queue.append(p + cols - 1)
            if r + 1 < rows and down_l[r][c] and label[p + cols] < 0:
                label[p + cols] = next_id
                queue.append(p + cols)
            if r > 0 and down_l[r - 1][c] and label[p - cols] < 0:
                label[p - cols] = next_id
                queue.append(p - cols)
        next_id += 1
    return ClusterLabels(np.array(label, dtype=np.int64).reshape(rows, cols), next_id)


def extract_clusters(
    labels: ClusterLabels,
    img: RangeImage,
    min_points: int = 10,
    max_distance: float = 50.0,
) -> list[Cluster]:
    flat_label = labels.label.ravel()
    occ = np.flatnonzero(flat_label >= 0)
    if occ.size == 0:
        return []
    order = occ[np.argsort(flat_label[occ], kind="stable")]
    lab = flat_label[order]
    starts = np.flatnonzero(np.r_[True, lab[1:] != lab[:-1]])
    ends = np.r_[starts[1:], lab.size]
    rng = img.range.ravel()
    pidx = img.point_index.ravel()
    out = []
    for s, e in zip(starts.tolist(), ends.tolist()):
        members = order[s:e]
        nearest = float(rng[members].min())
        if members.size < min_points or nearest > max_distance:
            continue
        rc = np.stack(np.divmod(members, img.cols), axis=1)
        out.append(Cluster(int(lab[s]), rc, pidx[members].copy(), nearest))
    return out
