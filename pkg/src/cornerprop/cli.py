"""Command line entry point: propose, evaluate, ablate, synth, report."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .evaluation import ClassSeparation, EvalReport, NoGroundTruth, UnmappedCategory, View, evaluate
from .formats import (
    FormatError,
    config_from_dict,
    config_to_dict,
    dump_json,
    list_scenes,
    load_ground_truth,
    load_json,
    load_predictions,
    proposals_from_coco,
    proposals_to_coco,
    read_config,
    read_pgm,
    read_scene,
    write_scene,
    SEG_FILE,
)
from .model import PipelineConfig
from .proposals import ProposalSet, run_pipeline
from .report import render_overlay, write_metrics_csv, write_ppm
from .synth import CorpusKnobs, InvalidSpec, generate_corpus, generate_scene

log = logging.getLogger("cornerprop")

ABLATION_PARAMETERS = ("theta_min", "min_cluster_points", "max_cluster_distance", "bg_ratio_max", "suppression_iou_max")
ABLATION_LABELS = {
    "theta_min": "Min. theta",
    "min_cluster_points": "Cluster size",
    "max_cluster_distance": "Max. dist.",
    "bg_ratio_max": "BG ratio",
    "suppression_iou_max": "IoU",
}
# ground removal + clustering + projection, per scene
THROUGHPUT_TARGET_MS = 100.0
CORE_STAGES = ("ground_removal", "clustering", "projection")


def _process_scene(scene_dir: Path, cfg: PipelineConfig) -> tuple[str, ProposalSet | None, str | None]:
    scene_id = Path(scene_dir).name
    try:
        return scene_id, run_pipeline(read_scene(scene_dir), cfg), None
    except Exception as exc:  # reported per scene in the manifest
        return scene_id, None, f"{type(exc).__name__}: {exc}"


def propose_corpus(corpus_dir: Path, cfg: PipelineConfig, workers: int = 1) -> list[tuple[str, ProposalSet | None, str | None]]:
    scenes = list_scenes(corpus_dir)
    if workers <= 1 or len(scenes) <= 1:
        return [_process_scene(s, cfg) for s in scenes]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_process_scene, scenes, [cfg] * len(scenes)))


def cmd_propose(corpus_dir, config_path, out_path, overrides=None, workers: int = 1) -> int:
    cfg = read_config(config_path, overrides)
    out = Path(out_path)
    out.mkdir(parents=True, exist_ok=True)
    results = propose_corpus(Path(corpus_dir), cfg, workers)
    entries = []
    for scene_id, ps, error in results:
        entry = {"scene_id": scene_id, "status": "ok" if error is None else "error", "error": error}
        if ps is not None:
            dump_json(proposals_to_coco(ps), out / f"{scene_id}.json")
            core = sum(ps.timings.get(s, 0.0) for s in CORE_STAGES)
            entry.update(
                skipped_stages=list(ps.skipped_stages),
                stage_counts=ps.stage_counts,
                timing_ms={k: round(v, 3) for k, v in ps.timings.items()},
                core_ms=round(core, 3),
                within_throughput_target=core < THROUGHPUT_TARGET_MS,
            )
        else:
            log.error("scene %s: %s", scene_id, error)
        entries.append(entry)
    manifest = {
        "tool": "cornerprop",
        "version": __version__,
        "config": config_to_dict(cfg),
        "corpus": str(corpus_dir),
        "throughput_target_ms": THROUGHPUT_TARGET_MS,
        "scenes": entries,
    }
    dump_json(manifest, out / "manifest.json")
    return 0 if all(e["status"] == "ok" for e in entries) else 1


def _fmt(v) -> str:
    return "-" if v is None else f"{100 * v:.1f}"


def format_report(report: EvalReport) -> str:
    cols = ("AR", "AR50", "AR75", "AR_1", "AR_10", "AR_s", "AR_m", "AR_l", "AP")
    header = ["View"] + list(cols) + ["#Proposals", "#Scenes"]
    row = [report.view] + [_fmt(getattr(report, c)) for c in cols]
    row += [str(report.num_proposals), str(report.num_scenes_with_proposals)]
    lines = [" ".join(f"{h:>10}" for h in header), " ".join(f"{c:>10}" for c in row)]
    for name, metrics in report.per_class.items():
        lines.append(" ".join(f"{c:>10}" for c in [name] + [_fmt(metrics[c]) for c in cols]))
    return "\n".join(lines)


def load_class_map(path) -> dict[str, str]:
    if path is None:
        return {}
    doc = load_json(path)
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: class map must be a JSON object")
    return {str(k): str(v) for k, v in doc.items()}


def cmd_evaluate(proposals_path, gt_path, class_map_path=None, view="CORNER", out_path=None) -> EvalReport:
    preds = load_predictions(Path(proposals_path))
    gts = load_ground_truth(Path(gt_path))
    sep = ClassSeparation(View(view), load_class_map(class_map_path))
    try:
        report = evaluate(preds, gts, sep)
    except UnmappedCategory as exc:
        raise UnmappedCategory(f"{proposals_path} / {gt_path}: {exc.args[0]}") from None
    if all(getattr(report, m) is None for m in EvalReport.METRICS):
        raise NoGroundTruth(f"{gt_path}: no ground truth for view {view}")
    if out_path is not None:
        dump_json(report.to_dict(), Path(out_path))
    print(format_report(report))
    return report


def run_ablation(corpus_dir: Path, parameter: str, values, base: PipelineConfig, workers: int = 1) -> list[dict]:
    if parameter not in ABLATION_PARAMETERS:
        raise ValueError(f"cannot ablate {parameter!r}; choose from {ABLATION_PARAMETERS}")
    gts = load_ground_truth(corpus_dir) if list(Path(corpus_dir).glob("*/gt.json")) else {}
    rows = []
    for value in values:
        cfg = replace(base, **{parameter: value})
        results = propose_corpus(corpus_dir, cfg, workers)
        errors = [(sid, err) for sid, _, err in results if err is not None]
        if errors:
            raise RuntimeError(f"{parameter}={value}: scene {errors[0][0]} failed: {errors[0][1]}")
        preds = {sid: list(ps.proposals) for sid, ps, _ in results}
        report = evaluate(preds, {sid: gts.get(sid, []) for sid in preds})
        rows.append(
            {
                parameter: value,
                "AP": report.AP,
                "AR": report.AR,
                "#Proposals": report.num_proposals,
                "#Scenes": report.num_scenes_with_proposals,
            }
        )
    return rows


def format_ablation(parameter: str, rows: list[dict]) -> str:
    label = ABLATION_LABELS[parameter]
    lines = [f"{label:>14} {'AP':>6} {'AR':>6} {'#Proposals':>11} {'#Scenes':>8}"]
    for r in rows:
        lines.append(f"{r[parameter]!s:>14} {_fmt(r['AP']):>6} {_fmt(r['AR']):>6} {r['#Proposals']:>11} {r['#Scenes']:>8}")
    return "\n".join(lines)


def cmd_ablate(corpus_dir, ablation_spec_path, out_path, workers: int = 1) -> list[dict]:
    spec = load_json(ablation_spec_path)
    try:
        parameter = spec["parameter"]
        values = list(spec["values"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{ablation_spec_path}: needs 'parameter' and 'values': {exc}") from exc
    base = spec.get("base_config", {})
    if isinstance(base, str):
        cfg = read_config(Path(ablation_spec_path).parent / base)
    else:
        cfg = config_from_dict(base)
    rows = run_ablation(Path(corpus_dir), parameter, values, cfg, workers)
    out = Path(out_path)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=[parameter, "AP", "AR", "#Proposals", "#Scenes"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    dump_json({"parameter": parameter, "base_config": config_to_dict(cfg), "rows": rows}, out / "ablation.json")
    print(format_ablation(parameter, rows))
    return rows


def cmd_synth(corpus_spec_path, out_dir) -> int:
    spec = load_json(corpus_spec_path)
    try:
        knobs = CorpusKnobs(**{k: tuple(v) if isinstance(v, list) else v for k, v in spec.get("knobs", {}).items()})
        specs = generate_corpus(int(spec.get("n", 1)), int(spec.get("seed", 0)), knobs)
    except TypeError as exc:
        raise InvalidSpec(f"{corpus_spec_path}: {exc}") from exc
    out = Path(out_dir)
    for s in specs:
        bundle, oracle = generate_scene(s)
        write_scene(out / s.scene_id, bundle, oracle.ground_truth())
    return len(specs)


def cmd_report(proposals_path, scene_images=None, out_dir=".") -> int:
    path = Path(proposals_path)
    files = [path] if path.is_file() else sorted(p for p in path.glob("*.json") if p.name != "manifest.json")
    sets = [ps for f in files for ps in proposals_from_coco(load_json(f), f)]
    sets.sort(key=lambda ps: ps.scene_id)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for ps in sets:
        seg = None
        if scene_images is not None and (Path(scene_images) / ps.scene_id / SEG_FILE).exists():
            seg = read_pgm(Path(scene_images) / ps.scene_id / SEG_FILE)
        if seg is None and (ps.width <= 0 or ps.height <= 0):
            raise FormatError(f"scene {ps.scene_id}: image size unknown")
        write_ppm(out / f"{ps.scene_id}.ppm", render_overlay(ps, ps.width, ps.height, seg))
    write_metrics_csv(out / "metrics.csv", sets)
    return len(sets)


def _parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise argparse.ArgumentTypeError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cornerprop", description="Corner-case proposal generation and evaluation")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("propose", help="run the proposal pipeline over a corpus")
    p.add_argument("corpus")
    p.add_argument("--config", default=None, help="INI config file")
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)

    p = sub.add_parser("evaluate", help="AR/AP of predictions against ground truth")
    p.add_argument("proposals", help="COCO JSON file or directory of them")
    p.add_argument("gt", help="COCO JSON file or corpus directory with */gt.json")
    p.add_argument("--class-map", default=None)
    p.add_argument("--view", choices=[v.value for v in View], default="CORNER")
    p.add_argument("--out", default=None, help="write the report as JSON")

    p = sub.add_parser("ablate", help="sweep one pipeline parameter")
    p.add_argument("corpus")
    p.add_argument("spec", help="JSON with parameter, values and optional base_config")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("spec", help='JSON like {"n": 20, "seed": 0, "knobs": {...}}')
    p.add_argument("out")

    p = sub.add_parser("report", help="render proposal overlays and a metrics CSV")
    p.add_argument("proposals")
    p.add_argument("--images", default=None, help="corpus directory providing seg maps as backdrop")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "propose":
            return cmd_propose(args.corpus, args.config, args.out, _parse_overrides(args.set), args.workers)
        if args.command == "evaluate":
            cmd_evaluate(args.proposals, args.gt, args.class_map, args.view, args.out)
        elif args.command == "ablate":
            cmd_ablate(args.corpus, args.spec, args.out, args.workers)
        elif args.command == "synth":
            n = cmd_synth(args.spec, args.out)
            print(f"wrote {n} scenes to {args.out}")
        elif args.command == "report":
            n = cmd_report(args.proposals, args.images, args.out)
            print(f"rendered {n} scenes to {args.out}")
    except (FormatError, InvalidSpec, UnmappedCategory, NoGroundTruth, FileNotFoundError, ValueError, RuntimeError) as exc:
        log.error("%s", exc.args[0] if isinstance(exc, KeyError) and exc.args else exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
