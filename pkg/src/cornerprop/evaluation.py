"""COCO-style recall/precision with class-separation views.

Predictions are any objects exposing ``.box`` (Box2D) and ``.score``;
ground truth entries are :class:`GroundTruth`. Both are passed as
mappings from scene id to sequences.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .model import Box2D, iou_matrix

IOU_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2).tolist())
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
AREA_RANGES = {
    "all": (0.0, 1e10),
    "small": (0.0, 32.0**2),
    "medium": (32.0**2, 96.0**2),
    "large": (96.0**2, 1e10),
}
COMMON_CLASSES = ("pedestrian", "cyclist", "vehicle")
MAPPED_CLASSES = frozenset(COMMON_CLASSES) | {"novel", "ignore"}


class NoGroundTruth(ValueError):
    pass


class UnmappedCategory(KeyError):
    pass


class View(str, enum.Enum):
    CORNER = "CORNER"
    COMMON = "COMMON"
    NOVEL = "NOVEL"


@dataclass(frozen=True)
class GroundTruth:
    box: Box2D
    category: str = "object"
    area: float | None = None

    def __post_init__(self) -> None:
        if self.area is None:
            object.__setattr__(self, "area", self.box.area)


@dataclass(frozen=True)
class ScoredBox:
    box: Box2D
    score: float
    category: str = "object"


@dataclass(frozen=True)
class ClassSeparation:
    view: View = View.CORNER
    prediction_class_map: Mapping[str, str] = field(default_factory=dict)
    common_classes: tuple[str, ...] = COMMON_CLASSES

    def __post_init__(self) -> None:
        object.__setattr__(self, "view", View(self.view))
        bad = {k: v for k, v in self.prediction_class_map.items() if v not in MAPPED_CLASSES}
        if bad:
            raise ValueError(f"class map targets must be one of {sorted(MAPPED_CLASSES)}: {bad}")


@dataclass
class EvalReport:
    view: str
    AR: float | None
    AR50: float | None
    AR75: float | None
    AR_1: float | None
    AR_10: float | None
    AR_s: float | None
    AR_m: float | None
    AR_l: float | None
    AP: float | None
    num_proposals: int
    num_scenes_with_proposals: int
    num_scenes: int
    per_class: dict = field(default_factory=dict)

    METRICS = ("AR", "AR50", "AR75", "AR_1", "AR_10", "AR_s", "AR_m", "AR_l", "AP")

    def to_dict(self) -> dict:
        return asdict(self)


def _boxes(items) -> np.ndarray:
    return np.array([it.box.as_list() for it in items], dtype=np.float64).reshape(-1, 4)


def _sorted_preds(preds: Sequence, max_dets: int | None) -> list:
    order = sorted(range(len(preds)), key=lambda i: -preds[i].score)
    if max_dets is not None:
        order = order[:max_dets]
    return [preds[i] for i in order]


def _match_from_ious(ious: np.ndarray, iou_threshold: float) -> list[int]:
    """COCO assignment: each prediction in turn takes the free ground truth
    with the highest IoU at or above the threshold, later index on ties.
    Returns the matched gt index per prediction, -1 when unmatched."""
    n_pred, n_gt = ious.shape
    taken = np.zeros(n_gt, dtype=bool)
    out = [-1] * n_pred
    floor = min(iou_threshold, 1 - 1e-10)
    for d in range(n_pred):
        best = floor
        m = -1
        for g in range(n_gt):
            if taken[g] or ious[d, g] < best:
                continue
            best = ious[d, g]
            m = g
        if m >= 0:
            taken[m] = True
            out[d] = m
    return out


def greedy_match(preds: Sequence[Box2D], gts: Sequence[Box2D], iou_threshold: float = 0.5) -> list[tuple[int, int]]:
    """Match score-sorted prediction boxes to ground-truth boxes.

    Returns ``(pred_index, gt_index)`` pairs in prediction order.
    """
    if not preds or not gts:
        return []
    ious = iou_matrix([b.as_list() for b in preds], [b.as_list() for b in gts])
    return [(d, g) for d, g in enumerate(_match_from_ious(ious, iou_threshold)) if g >= 0]


def _in_range(gts: Sequence[GroundTruth], area_range) -> list[GroundTruth]:
    if area_range is None:
        return list(gts)
    lo, hi = AREA_RANGES[area_range] if isinstance(area_range, str) else area_range
    return [g for g in gts if lo <= g.area <= hi]


def _scene_ids(preds: Mapping, gts: Mapping) -> list:
    return sorted(set(preds) | set(gts), key=str)


def average_recall(
    preds: Mapping[str, Sequence],
    gts: Mapping[str, Sequence[GroundTruth]],
    max_dets: int = 100,
    area_range=None,
    iou_thresholds: Sequence[float] = IOU_THRESHOLDS,
) -> float:
    """Recall pooled over scenes, averaged over IoU thresholds.

    Ground truth outside ``area_range`` is dropped before matching, which
    gives the same recall as COCO's ignore flags.
    """
    n_gt = 0
    hits = np.zeros(len(iou_thresholds))
    for sid in _scene_ids(preds, gts):
        scene_gts = _in_range(gts.get(sid, ()), area_range)
        n_gt += len(scene_gts)
        scene_preds = _sorted_preds(list(preds.get(sid, ())), max_dets)
        if not scene_gts or not scene_preds:
            continue
        ious = iou_matrix(_boxes(scene_preds), _boxes(scene_gts))
        for ti, t in enumerate(iou_thresholds):
            hits[ti] += sum(1 for g in _match_from_ious(ious, t) if g >= 0)
    if n_gt == 0:
        raise NoGroundTruth(f"no ground truth in area range {area_range!r}")
    return float(np.mean(hits / n_gt))


def average_precision(
    preds: Mapping[str, Sequence],
    gts: Mapping[str, Sequence[GroundTruth]],
    max_dets: int = 100,
    iou_thresholds: Sequence[float] = IOU_THRESHOLDS,
) -> float:
    """101-point interpolated AP averaged over IoU thresholds."""
    n_gt = sum(len(v) for v in gts.values())
    if n_gt == 0:
        raise NoGroundTruth("no ground truth")
    scores: list[float] = []
    tp_rows: list[np.ndarray] = []
    for sid in _scene_ids(preds, gts):
        scene_preds = _sorted_preds(list(preds.get(sid, ())), max_dets)
        if not scene_preds:
            continue
        scene_gts = list(gts.get(sid, ()))
        tp = np.zeros((len(iou_thresholds), len(scene_preds)), dtype=bool)
        if scene_gts:
            ious = iou_matrix(_boxes(scene_preds), _boxes(scene_gts))
            for ti, t in enumerate(iou_thresholds):
                tp[ti] = np.array(_match_from_ious(ious, t)) >= 0
        scores.extend(p.score for p in scene_preds)
        tp_rows.append(tp)
    if not scores:
        return 0.0
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="mergesort")
    tps = np.concatenate(tp_rows, axis=1)[:, order]
    aps = []
    for row in tps:
        tp_sum = np.cumsum(row).astype(np.float64)
        fp_sum = np.cumsum(~row).astype(np.float64)
        recall = tp_sum / n_gt
        precision = tp_sum / (tp_sum + fp_sum + np.spacing(1))
        precision = np.maximum.accumulate(precision[::-1])[::-1]
        idx = np.searchsorted(recall, RECALL_POINTS, side="left")
        q = np.zeros(RECALL_POINTS.size)
        valid = idx < precision.size
        q[valid] = precision[idx[valid]]
        aps.append(q.mean())
    return float(np.mean(aps))


def apply_class_separation(
    preds: Mapping[str, Sequence[ScoredBox]],
    gts: Mapping[str, Sequence[GroundTruth]],
    sep: ClassSeparation,
) -> dict[str, tuple[dict, dict]]:
    """Split predictions and ground truth into per-class evaluation inputs.

    CORNER pools everything and never reads the class map. COMMON keeps
    pedestrian/cyclist/vehicle separately; NOVEL pools the novel-mapped
    entries. Entries mapped to ``ignore`` are dropped.
    """
    if sep.view is View.CORNER:
        return {"object": ({k: list(v) for k, v in preds.items()}, {k: list(v) for k, v in gts.items()})}

    cmap = sep.prediction_class_map

    def lookup(category: str) -> str:
        try:
            return cmap[category]
        except KeyError:
            raise UnmappedCategory(f"category {category!r} is not in the class map") from None

    if sep.view is View.COMMON:
        wanted = {c: c for c in sep.common_classes}
    else:
        wanted = {"novel": "novel"}
    out: dict[str, tuple[dict, dict]] = {name: ({}, {}) for name in wanted.values()}
    for slot, source in ((0, preds), (1, gts)):
        for sid, items in source.items():
            for it in items:
                target = lookup(it.category)
                if target in wanted:
                    out[wanted[target]][slot].setdefault(sid, []).append(it)
    return out


def _metric_or_none(fn, *args, **kwargs) -> float | None:
    try:
        return fn(*args, **kwargs)
    except NoGroundTruth:
        return None


def _single_class_metrics(preds: Mapping, gts: Mapping) -> dict[str, float | None]:
    return {
        "AR": _metric_or_none(average_recall, preds, gts, 100),
        "AR50": _metric_or_none(average_recall, preds, gts, 100, None, (0.5,)),
        "AR75": _metric_or_none(average_recall, preds, gts, 100, None, (0.75,)),
        "AR_1": _metric_or_none(average_recall, preds, gts, 1),
        "AR_10": _metric_or_none(average_recall, preds, gts, 10),
        "AR_s": _metric_or_none(average_recall, preds, gts, 100, "small"),
        "AR_m": _metric_or_none(average_recall, preds, gts, 100, "medium"),
        "AR_l": _metric_or_none(average_recall, preds, gts, 100, "large"),
        "AP": _metric_or_none(average_precision, preds, gts, 100),
    }


def evaluate(
    preds: Mapping[str, Sequence[ScoredBox]],
    gts: Mapping[str, Sequence[GroundTruth]],
    sep: ClassSeparation | None = None,
) -> EvalReport:
    """All report metrics for one view; multi-class views average over
    classes that have ground truth in the relevant area range."""
    sep = sep or ClassSeparation()
    per_class = {name: _single_class_metrics(p, g) for name, (p, g) in apply_class_separation(preds, gts, sep).items()}
    headline = {}
    for metric in EvalReport.METRICS:
        vals = [m[metric] for m in per_class.values() if m[metric] is not None]
        headline[metric] = float(np.mean(vals)) if vals else None
    scene_ids = _scene_ids(preds, gts)
    return EvalReport(
        view=sep.view.value,
        num_proposals=sum(len(v) for v in preds.values()),
        num_scenes_with_proposals=sum(1 for sid in scene_ids if preds.get(sid)),
        num_scenes=len(scene_ids),
        per_class=per_class if len(per_class) > 1 else {},
        **headline,
    )
