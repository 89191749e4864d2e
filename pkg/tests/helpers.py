"""Independent oracles shared by unit and acceptance tests."""

from __future__ import annotations

import math

import numpy as np

from cornerprop.range_cluster import RangeImage


def beam_angle_oracle(d1: float, d2: float, alpha_deg: float) -> float:
    """Angle at the farther return between the sensor and the nearer return,
    from plain vector geometry."""
    far, near = max(d1, d2), min(d1, d2)
    a = math.radians(alpha_deg)
    m = np.array([far, 0.0])
    n = np.array([near * math.cos(a), near * math.sin(a)])
    to_sensor = -m
    to_near = n - m
    cos_b = to_sensor @ to_near / (np.linalg.norm(to_sensor) * np.linalg.norm(to_near))
    return math.degrees(math.acos(max(-1.0, min(1.0, cos_b))))


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int) -> None:
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


def components_oracle(img: RangeImage, theta: float) -> np.ndarray:
    """Connected components over 4-neighbor pairs passing the angle test,
    relabeled in row-major first-encounter order; -1 where empty."""
    rows, cols = img.range.shape
    occ = img.point_index >= 0
    uf = UnionFind(rows * cols)
    for r in range(rows):
        for c in range(cols):
            if not occ[r, c]:
                continue
            if r + 1 < rows and occ[r + 1, c]:
                alpha = abs(img.row_angles[r + 1] - img.row_angles[r])
                if beam_angle_oracle(img.range[r, c], img.range[r + 1, c], alpha) > theta:
                    uf.union(r * cols + c, (r + 1) * cols + c)
            if cols > 1:
                c2 = (c + 1) % cols
                if occ[r, c2]:
                    if c2 == 0:
                        alpha = img.col_angles[0] + 360.0 - img.col_angles[-1]
                    else:
                        alpha = img.col_angles[c2] - img.col_angles[c]
                    if beam_angle_oracle(img.range[r, c], img.range[r, c2], abs(alpha)) > theta:
                        uf.union(r * cols + c, r * cols + c2)
    out = np.full(rows * cols, -1, dtype=np.int64)
    names: dict[int, int] = {}
    for p in range(rows * cols):
        if occ.flat[p]:
            root = uf.find(p)
            out[p] = names.setdefault(root, len(names))
    return out.reshape(rows, cols)


def random_range_image(rng: np.random.Generator, rows=None, cols=None) -> RangeImage:
    """Patchy range image: smooth surfaces plus jumps, irregular row spacing."""
    rows = rows or int(rng.integers(2, 14))
    cols = cols or int(rng.integers(3, 40))
    row_steps = rng.uniform(0.2, 2.0, rows)
    row_angles = 5.0 - np.cumsum(row_steps)
    col_angles = -180.0 + (np.arange(cols) + 0.5) * 360.0 / cols
    base = rng.uniform(3, 40)
    surf = base + np.cumsum(rng.normal(0, 0.4, (rows, cols)), axis=1)
    jumps = rng.random((rows, cols)) < 0.15
    surf = np.where(jumps, rng.uniform(2, 60, (rows, cols)), surf)
    surf = np.clip(surf, 0.5, None)
    occ = rng.random((rows, cols)) < rng.uniform(0.5, 0.95)
    rng_img = np.where(occ, surf, 0.0)
    idx = np.where(occ, np.arange(rows * cols).reshape(rows, cols), -1)
    return RangeImage(rng_img, idx, row_angles, col_angles)
