"""Run configuration: one JSON document with a fixed key set.

Values come from the built-in defaults, then the config file (``--config``
or ``$MVACTION_CONFIG``), then command-line flags. Unknown keys are rejected
at every level.
"""
from __future__ import annotations

import copy
import json
import os
from pathlib import Path

from .errors import ConfigError

CONFIG_ENV = "MVACTION_CONFIG"

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "protocol": "cs_first",
    "num_classes": None,            # None: largest class id in the manifest
    "synth": {
        "kind": "skeleton",         # skeleton | blobs | census
        "num_classes": 6, "num_groups": 12, "repeats": 4, "frames": [40, 60], "fps": 10.0,
        "views": ["front", "side", "top", "fpv"], "modalities": ["rgb", "depth"], "image_size": 32,
        "noise": 0.01, "two_bodies": True,
        "blob_classes": 4, "blob_repeats": 2, "blob_frames": [16, 40], "blob_noise": 0.05, "blob_sigma": 4.0,
    },
    "imagery": {"points_per_edge": 2, "target_frames": 64},
    "dynamics": {
        "num_windows": 8, "threshold": None, "solver": "svr", "C": 1.0, "epsilon": 0.1,
        "smoothing": "running_mean", "max_iter": 1000, "tol": 1e-6,
    },
    "mvib": {"views": ["front", "side"], "widths": [8, 16, 32, 64], "mvib_points": [2, 3, 4], "reduction": 4},
    "stream": {
        "map_size": 32, "extractor_widths": [8, 16], "extractor_kernel": [3, 3, 3], "convlstm_layers": 1,
        "hidden": 16, "dense_hidden": 32,
    },
    "train": {
        "epochs": 20, "batch_size": 16, "lr": 0.05, "momentum": 0.9, "weight_decay": 1e-4,
        "clip_norm": 5.0, "schedule": "cosine",
    },
    "fusion": {"mode": "multiplication"},
    "gradcheck": {"tolerance": None, "step": 1e-5},
}


def _merge(base: dict, update: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}; known keys: {sorted(base)}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key!r} must be a mapping")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Resolved configuration. ``overrides`` (nested dict) wins over the file."""
    cfg = copy.deepcopy(DEFAULTS)
    path = path or os.environ.get(CONFIG_ENV) or None
    if path:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        cfg = _merge(cfg, doc, "")
    if overrides:
        cfg = _merge(cfg, overrides, "")
    return cfg


def set_path(d: dict, dotted: str, value):
    """``set_path(cfg, "train.lr", 0.1)``; used for flag overrides."""
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def write_resolved(cfg: dict, out_dir) -> Path:
    path = Path(out_dir) / "resolved_config.json"
    path.write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path
