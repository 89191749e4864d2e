"""Proposal generation: clusters to boxes, then background and common-class filters."""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .ground import fit_ground_plane, split_ground
from .model import (
    Box2D,
    CameraModel,
    Detection,
    PipelineConfig,
    PointCloud,
    SegMap,
    box_from_pixels,
    iou_matrix,
    project_points,
)
from .range_cluster import Cluster, build_range_image, cluster_range_image, extract_clusters


class Stage(str, enum.Enum):
    INITIAL = "initial"
    INTERMEDIATE = "intermediate"
    FINAL = "final"


class EmptyRaster(ValueError):
    pass


class PipelineError(RuntimeError):
    def __init__(self, scene_id: str, stage: str, cause: Exception):
        super().__init__(f"scene {scene_id!r}: {stage} failed: {cause}")
        self.scene_id = scene_id
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class Proposal:
    box: Box2D
    source_cluster_id: int
    score: float
    stage: Stage = Stage.INITIAL


@dataclass(frozen=True)
class SceneBundle:
    scene_id: str
    cloud: PointCloud
    cam: CameraModel
    seg: SegMap | None = None
    detections: tuple[Detection, ...] | None = None

    def __post_init__(self) -> None:
        if self.seg is not None and (self.seg.width, self.seg.height) != (self.cam.width, self.cam.height):
            raise ValueError(
                f"scene {self.scene_id!r}: segmentation map is {self.seg.width}x{self.seg.height}, "
                f"camera image is {self.cam.width}x{self.cam.height}"
            )
        if self.detections is not None:
            object.__setattr__(self, "detections", tuple(self.detections))


@dataclass(frozen=True)
class ProposalSet:
    scene_id: str
    proposals: tuple[Proposal, ...]
    width: int = 0
    height: int = 0
    skipped_stages: tuple[str, ...] = ()
    # Per-stage wall time in ms; excluded from equality.
    timings: dict = field(default_factory=dict, compare=False)
    stage_counts: dict = field(default_factory=dict, compare=False)


def initial_proposals(clusters: Sequence[Cluster], cloud: PointCloud, cam: CameraModel) -> list[Proposal]:
    out = []
    for cl in clusters:
        uv, inside = project_points(cloud.xyz[cl.point_indices], cam)
        box = box_from_pixels(uv[inside], cam)
        if box is None:
            continue
        out.append(Proposal(box, cl.id, float(cl.size), Stage.INITIAL))
    return out


def _raster_span(lo: float, hi: float, limit: int, touched: bool) -> tuple[int, int]:
    if touched:
        # integer pixels [i, i+1) overlapping [lo, hi)
        return max(int(np.floor(lo)), 0), min(int(np.ceil(hi)), limit)
    # integer pixels i with lo <= i + 0.5 < hi
    return max(int(np.ceil(lo - 0.5)), 0), min(int(np.ceil(hi - 0.5)), limit)


def background_ratio(box: Box2D, seg: SegMap, background_ids, touched: bool = False) -> float:
    """Fraction of the box's pixels labeled as background.

    Pixels belong to the box when their centers fall inside it, or with
    ``touched`` when they overlap it at all.
    """
    c0, c1 = _raster_span(box.x, box.x2, seg.width, touched)
    r0, r1 = _raster_span(box.y, box.y2, seg.height, touched)
    if c1 <= c0 or r1 <= r0:
        raise EmptyRaster(f"box {box} covers no pixels")
    patch = seg.labels[r0:r1, c0:c1]
    lut = np.zeros(256, dtype=bool)
    lut[list(background_ids)] = True
    return float(np.count_nonzero(lut[patch])) / patch.size


def remove_background(
    proposals: Sequence[Proposal],
    seg: SegMap,
    background_ids,
    bg_ratio_max: float = 0.45,
) -> list[Proposal]:
    """Drop proposals whose box is mostly background.

    Sub-pixel boxes that contain no pixel center are measured over the
    pixels they touch instead.
    """
    out = []
    for p in proposals:
        try:
            ratio = background_ratio(p.box, seg, background_ids)
        except EmptyRaster:
            ratio = background_ratio(p.box, seg, background_ids, touched=True)
        if ratio <= bg_ratio_max:
            out.append(replace(p, stage=Stage.INTERMEDIATE))
    return out


def suppress_common(
    proposals: Sequence[Proposal],
    detections: Sequence[Detection],
    suppression_iou_max: float = 0.25,
) -> list[Proposal]:
    if not proposals:
        return []
    if not detections:
        return [replace(p, stage=Stage.FINAL) for p in proposals]
    ious = iou_matrix([p.box.as_list() for p in proposals], [d.box.as_list() for d in detections])
    keep = np.all(ious <= suppression_iou_max, axis=1)
    return [replace(p, stage=Stage.FINAL) for p, k in zip(proposals, keep) if k]


def run_pipeline(scene: SceneBundle, cfg: PipelineConfig, with_initial: bool = False):
    """Ground removal, clustering, projection and both filters for one scene.

    Returns the final ProposalSet; with ``with_initial`` also returns the
    initial and intermediate proposal lists.
    """
    timings: dict[str, float] = {}
    skipped: list[str] = []
    cloud = scene.cloud

    def timed(name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            result = fn(*args, **kwargs)
        except Exception as exc:
            raise PipelineError(scene.scene_id, name, exc) from exc
        timings[name] = (time.perf_counter() - t0) * 1e3
        return result

    if len(cloud) == 0:
        skipped.append("ground_removal")
        nonground = np.zeros(0, dtype=np.intp)
    else:
        plane = timed(
            "ground_removal",
            fit_ground_plane,
            cloud,
            cfg.ransac_iterations,
            cfg.ransac_inlier_dist,
            cfg.seed,
            cfg.ransac_max_tilt,
        )
        nonground = split_ground(cloud, plane, cfg.ransac_inlier_dist).nonground_indices

    def cluster_stage():
        img = build_range_image(
            cloud, cfg.range_rows, cfg.range_cols, cfg.elevation_min, cfg.elevation_max, indices=nonground
        )
        labels = cluster_range_image(img, cfg.theta_min)
        return extract_clusters(labels, img, cfg.min_cluster_points, cfg.max_cluster_distance)

    clusters = timed("clustering", cluster_stage)
    initial = timed("projection", initial_proposals, clusters, cloud, scene.cam)

    if scene.seg is None:
        skipped.append("background_removal")
        intermediate = [replace(p, stage=Stage.INTERMEDIATE) for p in initial]
    else:
        intermediate = timed(
            "background_removal",
            remove_background,
            initial,
            scene.seg,
            cfg.background_class_ids,
            cfg.bg_ratio_max,
        )

    if scene.detections is None:
        skipped.append("common_suppression")
        final = [replace(p, stage=Stage.FINAL) for p in intermediate]
    else:
        final = timed("common_suppression", suppress_common, intermediate, scene.detections, cfg.suppression_iou_max)

    result = ProposalSet(
        scene.scene_id,
        tuple(final),
        scene.cam.width,
        scene.cam.height,
        tuple(skipped),
        timings,
        {"clusters": len(clusters), "initial": len(initial), "intermediate": len(intermediate), "final": len(final)},
    )
    if with_initial:
        return result, initial, intermediate
    return result
