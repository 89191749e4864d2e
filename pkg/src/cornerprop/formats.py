"""On-disk formats.

Scene directory layout::

    <corpus>/<scene_id>/cloud.bin        float32 LE x, y, z, intensity per point
    <corpus>/<scene_id>/calib.json       {"P": 3x4 rows, "width": int, "height": int}
    <corpus>/<scene_id>/seg.pgm          binary P5, one 8-bit class id per pixel
    <corpus>/<scene_id>/detections.json  COCO-style, optional
    <corpus>/<scene_id>/gt.json          COCO-style, optional

Proposals, detections and ground truth all use the COCO layout with
``images[].file_name`` carrying the scene id.
"""

from __future__ import annotations

import configparser
import json
import re
from dataclasses import fields
from pathlib import Path
from typing import Iterable

import numpy as np

from .evaluation import GroundTruth, ScoredBox
from .model import Box2D, CameraModel, Detection, PipelineConfig, PointCloud, SegMap
from .proposals import Proposal, ProposalSet, SceneBundle, Stage

CLOUD_FILE = "cloud.bin"
CALIB_FILE = "calib.json"
SEG_FILE = "seg.pgm"
DETECTIONS_FILE = "detections.json"
GT_FILE = "gt.json"
PROPOSAL_CATEGORY = "proposal"


class FormatError(ValueError):
    pass


def dump_json(obj, path: Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def load_json(path: Path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc


# point clouds


def write_cloud(path: Path, cloud: PointCloud) -> None:
    Path(path).write_bytes(cloud.data.astype("<f4").tobytes())


def read_cloud(path: Path) -> PointCloud:
    raw = Path(path).read_bytes()
    if len(raw) % 16:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of 16 bytes")
    return PointCloud(np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(np.float64))


# calibration


def calib_to_dict(cam: CameraModel) -> dict:
    return {"P": cam.P.tolist(), "width": int(cam.width), "height": int(cam.height)}


def write_calib(path: Path, cam: CameraModel) -> None:
    dump_json(calib_to_dict(cam), path)


def read_calib(path: Path) -> CameraModel:
    d = load_json(path)
    try:
        return CameraModel(np.array(d["P"], dtype=np.float64), int(d["width"]), int(d["height"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad calibration: {exc}") from exc


# segmentation maps


def write_pgm(path: Path, seg: SegMap) -> None:
    header = f"P5\n{seg.width} {seg.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + seg.labels.tobytes())


def read_pgm(path: Path) -> SegMap:
    raw = Path(path).read_bytes()
    # magic, width, height, maxval separated by whitespace, comments allowed
    tokens = []
    pos = 0
    token_re = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")
    for _ in range(4):
        m = token_re.match(raw, pos)
        if m is None:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5)")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise FormatError(f"{path}: only 8-bit PGM is supported")
    pos += 1
    data = raw[pos : pos + width * height]
    if len(data) != width * height:
        raise FormatError(f"{path}: expected {width * height} pixels, got {len(data)}")
    return SegMap(np.frombuffer(data, dtype=np.uint8).reshape(height, width))


# COCO-style annotation files


def _coco(entries: Iterable[tuple[str, int, int, list[dict]]], categories: list[str]) -> dict:
    images, annotations = [], []
    cat_ids = {name: i + 1 for i, name in enumerate(categories)}
    ann_id = 1
    for image_id, (scene_id, width, height, anns) in enumerate(entries, start=1):
        images.append({"id": image_id, "file_name": scene_id, "width": width, "height": height})
        for a in anns:
            a = dict(a)
            a["category_id"] = cat_ids[a.pop("category")]
            annotations.append({"id": ann_id, "image_id": image_id, **a})
            ann_id += 1
    return {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": cat_ids[n], "name": n} for n in categories],
    }


def _sorted_categories(names: Iterable[str]) -> list[str]:
    return sorted(set(names))


def detections_to_coco(scene_id: str, width: int, height: int, dets) -> dict:
    anns = [{"bbox": d.box.as_list(), "category": d.category, "score": d.score} for d in dets]
    return _coco([(scene_id, width, height, anns)], _sorted_categories(d.category for d in dets))


def ground_truth_to_coco(scene_id: str, width: int, height: int, gts) -> dict:
    anns = [{"bbox": g.box.as_list(), "category": g.category, "area": g.area} for g in gts]
    return _coco([(scene_id, width, height, anns)], _sorted_categories(g.category for g in gts))


def proposals_to_coco(ps: ProposalSet) -> dict:
    anns = [
        {
            "bbox": p.box.as_list(),
            "category": PROPOSAL_CATEGORY,
            "score": p.score,
            "area": p.box.area,
            "stage": p.stage.value,
            "source_cluster_id": p.source_cluster_id,
        }
        for p in ps.proposals
    ]
    doc = _coco([(ps.scene_id, ps.width, ps.height, anns)], [PROPOSAL_CATEGORY])
    doc["skipped_stages"] = list(ps.skipped_stages)
    return doc


def _index_coco(doc: dict, path) -> tuple[dict, dict, dict]:
    try:
        images = {im["id"]: im for im in doc["images"]}
        cats = {c["id"]: c["name"] for c in doc.get("categories", [])}
        by_image: dict = {im_id: [] for im_id in images}
        for a in doc.get("annotations", []):
            by_image[a["image_id"]].append(a)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed COCO document: {exc}") from exc
    return images, cats, by_image


def _category(a: dict, cats: dict, path) -> str:
    if "category_id" not in a:
        return PROPOSAL_CATEGORY
    try:
        return cats[a["category_id"]]
    except KeyError:
        raise FormatError(f"{path}: unknown category_id {a['category_id']}") from None


def proposals_from_coco(doc: dict, path="<memory>") -> list[ProposalSet]:
    images, cats, by_image = _index_coco(doc, path)
    out = []
    for im_id, im in images.items():
        props = tuple(
            Proposal(Box2D(*a["bbox"]), int(a.get("source_cluster_id", -1)), a.get("score", 1.0), Stage(a.get("stage", "final")))
            for a in by_image[im_id]
        )
        out.append(ProposalSet(im["file_name"], props, im.get("width", 0), im.get("height", 0), tuple(doc.get("skipped_stages", []))))
    return out


def scored_from_coco(doc: dict, path="<memory>") -> dict[str, list[ScoredBox]]:
    images, cats, by_image = _index_coco(doc, path)
    out: dict[str, list[ScoredBox]] = {}
    for im_id, im in images.items():
        out.setdefault(im["file_name"], []).extend(
            ScoredBox(Box2D(*a["bbox"]), float(a.get("score", 1.0)), _category(a, cats, path)) for a in by_image[im_id]
        )
    return out


def detections_from_coco(doc: dict, path="<memory>") -> dict[str, list[Detection]]:
    return {
        sid: [Detection(s.box, s.category, s.score) for s in items]
        for sid, items in scored_from_coco(doc, path).items()
    }


def ground_truth_from_coco(doc: dict, path="<memory>") -> dict[str, list[GroundTruth]]:
    images, cats, by_image = _index_coco(doc, path)
    out: dict[str, list[GroundTruth]] = {}
    for im_id, im in images.items():
        out.setdefault(im["file_name"], []).extend(
            GroundTruth(Box2D(*a["bbox"]), _category(a, cats, path), a.get("area")) for a in by_image[im_id]
        )
    return out


def _json_files(path: Path, name: str | None) -> list[Path]:
    """A single file, or every matching JSON under a directory."""
    path = Path(path)
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise FileNotFoundError(path)
    if name is not None:
        return sorted(path.glob(f"*/{name}"))
    return sorted(p for p in path.glob("*.json") if p.name != "manifest.json")


def load_predictions(path: Path) -> dict[str, list[ScoredBox]]:
    out: dict[str, list[ScoredBox]] = {}
    for f in _json_files(path, None):
        for sid, items in scored_from_coco(load_json(f), f).items():
            out.setdefault(sid, []).extend(items)
    return out


def load_ground_truth(path: Path) -> dict[str, list[GroundTruth]]:
    out: dict[str, list[GroundTruth]] = {}
    for f in _json_files(path, GT_FILE):
        for sid, items in ground_truth_from_coco(load_json(f), f).items():
            out.setdefault(sid, []).extend(items)
    return out


# scenes


def write_scene(scene_dir: Path, bundle: SceneBundle, gts=None) -> None:
    scene_dir = Path(scene_dir)
    scene_dir.mkdir(parents=True, exist_ok=True)
    cam = bundle.cam
    write_cloud(scene_dir / CLOUD_FILE, bundle.cloud)
    write_calib(scene_dir / CALIB_FILE, cam)
    if bundle.seg is not None:
        write_pgm(scene_dir / SEG_FILE, bundle.seg)
    if bundle.detections is not None:
        dump_json(detections_to_coco(bundle.scene_id, cam.width, cam.height, bundle.detections), scene_dir / DETECTIONS_FILE)
    if gts is not None:
        dump_json(ground_truth_to_coco(bundle.scene_id, cam.width, cam.height, gts), scene_dir / GT_FILE)


def read_scene(scene_dir: Path) -> SceneBundle:
    scene_dir = Path(scene_dir)
    scene_id = scene_dir.name
    cloud = read_cloud(scene_dir / CLOUD_FILE)
    cam = read_calib(scene_dir / CALIB_FILE)
    seg = read_pgm(scene_dir / SEG_FILE) if (scene_dir / SEG_FILE).exists() else None
    dets = None
    if (scene_dir / DETECTIONS_FILE).exists():
        dets = [d for items in detections_from_coco(load_json(scene_dir / DETECTIONS_FILE), scene_dir / DETECTIONS_FILE).values() for d in items]
    return SceneBundle(scene_id, cloud, cam, seg, tuple(dets) if dets is not None else None)


def list_scenes(corpus_dir: Path) -> list[Path]:
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise FileNotFoundError(corpus_dir)
    return sorted(p for p in corpus_dir.iterdir() if p.is_dir() and (p / CLOUD_FILE).exists())


# pipeline config

CONFIG_SECTIONS = {
    "ground": ("ransac_iterations", "ransac_inlier_dist", "ransac_max_tilt", "seed"),
    "range_image": ("range_rows", "range_cols", "elevation_min", "elevation_max"),
    "clustering": ("theta_min", "min_cluster_points", "max_cluster_distance"),
    "filters": ("bg_ratio_max", "suppression_iou_max", "background_class_ids"),
}
_INT_FIELDS = {"ransac_iterations", "seed", "range_rows", "range_cols", "min_cluster_points"}


def parse_config_value(key: str, raw: str):
    raw = raw.strip()
    if key not in {f.name for f in fields(PipelineConfig)}:
        raise FormatError(f"unknown config key {key!r}")
    if key == "background_class_ids":
        return frozenset(int(t) for t in re.split(r"[,\s]+", raw) if t)
    if key == "ransac_max_tilt" and raw.lower() in {"none", "off", ""}:
        return None
    if key in _INT_FIELDS:
        return int(raw)
    return float(raw)


def config_to_dict(cfg: PipelineConfig) -> dict:
    d = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        d[f.name] = sorted(v) if isinstance(v, frozenset) else v
    return d


def config_from_dict(d: dict) -> PipelineConfig:
    d = dict(d)
    if "background_class_ids" in d:
        d["background_class_ids"] = frozenset(d["background_class_ids"])
    return PipelineConfig(**d)


def read_config(path: Path | None, overrides: dict[str, str] | None = None) -> PipelineConfig:
    """INI file with the sections of CONFIG_SECTIONS; any section name is
    accepted as long as keys are known. ``overrides`` win over the file."""
    values: dict = {}
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise FormatError(f"{path}: {exc}") from exc
        for section in parser.sections():
            for key, raw in parser.items(section):
                values[key] = parse_config_value(key, raw)
    for key, raw in (overrides or {}).items():
        values[key] = parse_config_value(key, raw)
    try:
        return PipelineConfig(**values)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"invalid configuration: {exc}") from exc


def write_config(path: Path, cfg: PipelineConfig) -> None:
    d = config_to_dict(cfg)
    lines = []
    for section, keys in CONFIG_SECTIONS.items():
        lines.append(f"[{section}]")
        for k in keys:
            v = d[k]
            if isinstance(v, list):
                v = ", ".join(str(i) for i in v)
            elif v is None:
                v = "none"
            lines.append(f"{k} = {v}")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")
