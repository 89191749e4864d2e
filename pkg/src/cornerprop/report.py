"""Proposal overlays as binary PPM and a per-scene metrics CSV."""

from __future__ import annotations

import csv
import re
from pathlib import Path

import numpy as np

from .model import Box2D, SegMap
from .proposals import ProposalSet, Stage

STAGE_COLORS = {
    Stage.INITIAL: (255, 0, 0),
    Stage.INTERMEDIATE: (255, 255, 0),
    Stage.FINAL: (0, 255, 0),
}
CSV_FIELDS = ("scene_id", "num_proposals", "initial", "intermediate", "final", "mean_box_area")


def _palette() -> np.ndarray:
    # fixed dim colors so overlays stay readable on top
    rng = np.random.default_rng(12345)
    pal = rng.integers(20, 120, size=(256, 3), dtype=np.uint8)
    pal[0] = (40, 40, 40)
    return pal


def draw_box(canvas: np.ndarray, box: Box2D, color) -> None:
    h, w = canvas.shape[:2]
    x0 = int(np.clip(np.floor(box.x), 0, w - 1))
    y0 = int(np.clip(np.floor(box.y), 0, h - 1))
    x1 = int(np.clip(np.ceil(box.x2) - 1, x0, w - 1))
    y1 = int(np.clip(np.ceil(box.y2) - 1, y0, h - 1))
    canvas[y0, x0 : x1 + 1] = color
    canvas[y1, x0 : x1 + 1] = color
    canvas[y0 : y1 + 1, x0] = color
    canvas[y0 : y1 + 1, x1] = color


def render_overlay(ps: ProposalSet, width: int, height: int, seg: SegMap | None = None) -> np.ndarray:
    if seg is not None:
        canvas = _palette()[seg.labels]
    else:
        canvas = np.zeros((height, width, 3), dtype=np.uint8)
    for p in ps.proposals:
        draw_box(canvas, p.box, STAGE_COLORS[p.stage])
    return canvas


def write_ppm(path: Path, rgb: np.ndarray) -> None:
    h, w = rgb.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def read_ppm(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None or int(m.group(3)) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PPM")
    w, h = int(m.group(1)), int(m.group(2))
    data = raw[m.end() : m.end() + w * h * 3]
    if len(data) != w * h * 3:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)


def metrics_row(ps: ProposalSet) -> dict:
    stages = [p.stage for p in ps.proposals]
    areas = [p.box.area for p in ps.proposals]
    return {
        "scene_id": ps.scene_id,
        "num_proposals": len(ps.proposals),
        "initial": stages.count(Stage.INITIAL),
        "intermediate": stages.count(Stage.INTERMEDIATE),
        "final": stages.count(Stage.FINAL),
        "mean_box_area": f"{np.mean(areas):.3f}" if areas else "",
    }


def write_metrics_csv(path: Path, sets: list[ProposalSet]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for ps in sets:
            writer.writerow(metrics_row(ps))
