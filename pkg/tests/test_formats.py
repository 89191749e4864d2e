import math

import numpy as np
import pytest

from cornerprop.evaluation import GroundTruth
from cornerprop.formats import (
    FormatError,
    ground_truth_from_coco,
    ground_truth_to_coco,
    load_ground_truth,
    load_predictions,
    proposals_from_coco,
    proposals_to_coco,
    read_calib,
    read_cloud,
    read_config,
    read_pgm,
    read_scene,
    write_calib,
    write_cloud,
    write_config,
    write_pgm,
    write_scene,
    dump_json,
)
from cornerprop.model import Box2D, PipelineConfig, PointCloud, SegMap, make_camera
from cornerprop.proposals import Proposal, ProposalSet, Stage
from cornerprop.report import read_ppm, write_ppm
from cornerprop.synth import generate_corpus, generate_scene


def camera():
    return make_camera(1024 / 2 / math.tan(math.radians(50)), 1024, 384, (0.27, 0.0, -0.08))


def test_cloud_round_trip_is_float32(tmp_path):
    rng = np.random.default_rng(0)
    cloud = PointCloud(rng.normal(0, 20, (500, 4)))
    write_cloud(tmp_path / "c.bin", cloud)
    back = read_cloud(tmp_path / "c.bin")
    assert (tmp_path / "c.bin").stat().st_size == 500 * 16
    assert np.array_equal(back.data, cloud.data.astype(np.float32).astype(np.float64))
    # a float32-exact cloud survives unchanged
    write_cloud(tmp_path / "d.bin", back)
    assert read_cloud(tmp_path / "d.bin") == back


def test_truncated_cloud_rejected(tmp_path):
    (tmp_path / "c.bin").write_bytes(b"\0" * 17)
    with pytest.raises(FormatError):
        read_cloud(tmp_path / "c.bin")


def test_calib_round_trip(tmp_path):
    cam = camera()
    write_calib(tmp_path / "calib.json", cam)
    back = read_calib(tmp_path / "calib.json")
    assert np.array_equal(back.P, cam.P)
    assert (back.width, back.height) == (cam.width, cam.height)


def test_pgm_round_trip_including_whitespace_bytes(tmp_path):
    labels = np.array([[32, 10, 9], [13, 255, 0]], dtype=np.uint8)
    write_pgm(tmp_path / "s.pgm", SegMap(labels))
    assert np.array_equal(read_pgm(tmp_path / "s.pgm").labels, labels)


def test_pgm_with_comment(tmp_path):
    (tmp_path / "s.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x07\x08")
    assert read_pgm(tmp_path / "s.pgm").labels.tolist() == [[7, 8]]
    (tmp_path / "t.pgm").write_bytes(b"P2\n2 1\n255\n1 2")
    with pytest.raises(FormatError):
        read_pgm(tmp_path / "t.pgm")


def test_ppm_round_trip_with_leading_whitespace_pixel(tmp_path):
    rgb = np.zeros((3, 4, 3), dtype=np.uint8)
    rgb[0, 0] = (32, 10, 9)
    rgb[2, 3] = (255, 1, 2)
    write_ppm(tmp_path / "a.ppm", rgb)
    assert np.array_equal(read_ppm(tmp_path / "a.ppm"), rgb)


def test_proposal_set_round_trip():
    props = (
        Proposal(Box2D(1.5, 2.25, 30.0, 40.125), 3, 57.0, Stage.FINAL),
        Proposal(Box2D(0.0, 0.0, 1.0, 1.0), 0, 11.0, Stage.FINAL),
    )
    ps = ProposalSet("scene_0007", props, 1024, 384, ("background_removal",))
    (back,) = proposals_from_coco(proposals_to_coco(ps))
    assert back == ps


def test_empty_proposal_set_round_trip():
    ps = ProposalSet("s", (), 10, 20, ())
    assert proposals_from_coco(proposals_to_coco(ps)) == [ps]


def test_ground_truth_round_trip_keeps_area_and_category():
    gts = [GroundTruth(Box2D(1, 2, 3, 4), "cone"), GroundTruth(Box2D(5, 6, 7, 8), "debris", 40.0)]
    back = ground_truth_from_coco(ground_truth_to_coco("x", 100, 100, gts))
    assert back == {"x": gts}


def test_loaders_accept_files_and_directories(tmp_path):
    ps = ProposalSet("a", (Proposal(Box2D(0, 0, 5, 5), 0, 12.0, Stage.FINAL),), 50, 50)
    dump_json(proposals_to_coco(ps), tmp_path / "a.json")
    dump_json({"not": "coco"}, tmp_path / "manifest.json")
    preds = load_predictions(tmp_path)
    assert list(preds) == ["a"]
    assert preds["a"][0].score == 12.0 and preds["a"][0].category == "proposal"
    assert load_predictions(tmp_path / "a.json") == preds
    with pytest.raises(FileNotFoundError):
        load_predictions(tmp_path / "missing")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(FormatError):
        load_predictions(tmp_path)


def test_scene_round_trip(tmp_path):
    bundle, oracle = generate_scene(generate_corpus(1, seed=1)[0])
    gts = oracle.ground_truth()
    write_scene(tmp_path / bundle.scene_id, bundle, gts)
    back = read_scene(tmp_path / bundle.scene_id)
    assert back.scene_id == bundle.scene_id
    assert np.array_equal(back.seg.labels, bundle.seg.labels)
    assert back.detections == bundle.detections
    assert np.allclose(back.cloud.data, bundle.cloud.data, atol=1e-4)
    assert load_ground_truth(tmp_path) == {bundle.scene_id: gts}


def test_config_round_trip_and_overrides(tmp_path):
    cfg = PipelineConfig(theta_min=10.0, min_cluster_points=7, background_class_ids=frozenset({0, 10}), ransac_max_tilt=None)
    write_config(tmp_path / "c.ini", cfg)
    assert read_config(tmp_path / "c.ini") == cfg
    over = read_config(tmp_path / "c.ini", {"bg_ratio_max": "0.3", "ransac_max_tilt": "15"})
    assert over.bg_ratio_max == 0.3 and over.ransac_max_tilt == 15.0 and over.theta_min == 10.0
    assert read_config(None) == PipelineConfig()
    with pytest.raises(FormatError):
        read_config(None, {"no_such_key": "1"})
    with pytest.raises(FormatError):
        read_config(None, {"bg_ratio_max": "1.5"})
