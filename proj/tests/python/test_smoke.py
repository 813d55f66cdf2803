# Copyright 2026 The bevsim Authors
# SPDX-License-Identifier: Apache-2.0

import json
import os

import numpy as np
import pytest

import bevsim

TINY = {
    "data": {
        "n_scenes": 4,
        "n_train": 3,
        "scene": {"image_height": 16, "image_width": 32, "x_range": [2.0, 15.0],
                  "y_range": [-7.0, 7.0], "min_boxes": 2, "max_boxes": 3},
    },
    "model": {
        "grid": {"x_range": [0, 16], "y_range": [-8, 8], "nx": 8, "ny": 8},
        "depth": {"d_min": 1, "d_max": 17, "count": 4},
        "encoder_channels": [4, 4, 4], "head_hidden": 4, "c_bev": 4, "c_lidar": 4,
        "c_fused": 4, "pillar_hidden": 4,
        "gcm_uv": {"heads": 2, "points": 2, "layers": 1},
        "gcm_bev": {"heads": 2, "points": 2, "layers": 1},
    },
    "train": {"teacher_epochs": 1, "student_epochs": 1, "batch": 2},
}


def test_default_config_round_trips():
    cfg = bevsim.default_config()
    assert cfg["train"]["lr"] == 1e-3
    assert cfg["train"]["batch"] == 8
    assert bevsim.validate_config(cfg) == cfg


def test_unknown_key_is_named():
    with pytest.raises(bevsim.BevsimError, match="train.nope"):
        bevsim.validate_config({"train": {"nope": 1}})


def test_generate_scene_is_deterministic():
    a = bevsim.generate_scene(7, 3)
    b = bevsim.generate_scene(7, 3)
    assert len(a["boxes"]) >= 1
    assert a["points"].shape[1] == 4
    for x, y in zip(a["images"], b["images"]):
        assert x.shape == (4, 64, 128)
        assert np.array_equal(x, y)


def test_toy_map_hand_fixture():
    dets = [[(0, 0.9, 0.1, 0.0), (0, 0.8, -0.2, 0.0), (0, 0.7, 10.3, 0.0)]]
    gt = [[(0, 0.0, 0.0), (0, 10.0, 0.0)]]
    r = bevsim.toy_map(dets, gt, 1)
    assert abs(r["mAP"] - 5.0 / 6.0) < 1e-12
    assert bevsim.toy_map([[]], gt, 1)["mAP"] == 0.0


def test_grad_audit_passes():
    r = bevsim.grad_audit("student", probes=5, seed=2)
    assert r["pass"]
    assert {e["term"] for e in r["entries"]} == {"det", "imd", "cmd", "mmdf", "mmdp", "total"}


def test_cli_pipeline(tmp_path):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    data, teacher, student = tmp_path / "data", tmp_path / "teacher", tmp_path / "student"
    assert bevsim.run_cli("gen", "--config", cfg, "--out", data)[0] == 0
    assert bevsim.run_cli("train-teacher", "--config", cfg, "--data", data, "--out", teacher)[0] == 0
    code, out, err = bevsim.run_cli("distill", "--config", cfg, "--teacher", teacher, "--data", data,
                                    "--out", student, "--loss", "imd,mmdp")
    assert code == 0, err
    assert bevsim.run_cli("eval", "--ckpt", student, "--data", data)[0] == 0
    report = json.loads((student / "eval" / "eval_report.json").read_text())
    assert 0.0 <= report["mAP"] <= 1.0

    m = bevsim.Model(str(student))
    assert m.kind == "student"
    assert m.n_params > 0
    dets = m.detect(str(data / "scene_000003.bsd"), score_thresh=0.0, topk=5)
    assert len(dets) <= 5
    assert all(0.0 <= d["confidence"] <= 1.0 for d in dets)

    code, _, err = bevsim.run_cli("gen", "--out", tmp_path / "x", "--no-such-flag")
    assert code != 0
    assert "--no-such-flag" in err
