"""Corner-case proposal generation from lidar clusters, with COCO-style evaluation."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    Box2D,
    CameraModel,
    Detection,
    PipelineConfig,
    Point3,
    PointCloud,
    SegMap,
    box_from_pixels,
    iou,
    project_point,
)
from .proposals import ProposalSet, SceneBundle, run_pipeline  # noqa: E402

__all__ = [
    "Box2D",
    "CameraModel",
    "Detection",
    "PipelineConfig",
    "Point3",
    "PointCloud",
    "ProposalSet",
    "SceneBundle",
    "SegMap",
    "box_from_pixels",
    "iou",
    "project_point",
    "run_pipeline",
]
