# Copyright 2026 The bevsim Authors
# SPDX-License-Identifier: Apache-2.0
"""Synthetic BEV detection with simulated-LiDAR distillation."""

import json as _json

from . import _bevsim
from ._bevsim import BevsimError, Model, generate_scene

__all__ = [
    "BevsimError",
    "Model",
    "default_config",
    "generate_scene",
    "grad_audit",
    "run_cli",
    "toy_map",
    "validate_config",
]


def default_config():
    """Default run configuration as a dict."""
    return _json.loads(_bevsim.default_config())


def validate_config(config):
    """Parses a config dict; returns it with every default filled in."""
    return _json.loads(_bevsim.validate_config(_json.dumps(config)))


def toy_map(detections, ground_truth, n_classes, thresholds=(0.5, 1.0, 2.0, 4.0)):
    """Toy-mAP report.

    detections: per scene, a list of (class_id, confidence, x, y).
    ground_truth: per scene, a list of (class_id, x, y).
    """
    return _json.loads(_bevsim.toy_map(detections, ground_truth, n_classes, list(thresholds)))


def grad_audit(model="all", probes=20, seed=1):
    return _json.loads(_bevsim.grad_audit(model, probes, seed))


def run_cli(*args):
    """Runs a bevsim command in-process; returns (exit_code, stdout, stderr)."""
    return _bevsim.run_cli([str(a) for a in args])
