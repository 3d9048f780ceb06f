"""Deterministic synthetic stand-in for the recorded dataset.

Class identity lives in per-class sinusoidal joint trajectories (which body
part moves, along which direction, at what frequency and amplitude). Groups
perturb body scale and placement; repeats perturb phase, length and noise.
The side camera sees the front scene under a fixed rigid rotation.

Everything derives from ``numpy.random.default_rng([seed, ...])`` streams
keyed by (class), (group) or (group, class, repeat), so any single sample is
reproducible in isolation and the output is a pure function of (config, seed).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data_model import (
    NUM_CLASSES, NUM_GROUPS, NUM_JOINTS, VIDEO_MODALITIES, VIEWS, DatasetManifest, IdRanges, ManifestEntry,
    SkeletonSequence, VideoSequence, census_sample_id, write_skeleton_file,
)
from .errors import ValidationError
from .imagery import DEFAULT_CHAINS

# standing pose facing the camera, metres, hips at the origin (Kinect v2 joint order)
TEMPLATE_POSE = np.array([
    [0.00, 0.00, 0.0], [0.00, 0.30, 0.0], [0.00, 0.62, 0.0], [0.00, 0.75, 0.0],     # spine base/mid, neck, head
    [-0.18, 0.52, 0.0], [-0.22, 0.26, 0.0], [-0.24, 0.02, 0.0], [-0.24, -0.06, 0.0],  # left arm
    [0.18, 0.52, 0.0], [0.22, 0.26, 0.0], [0.24, 0.02, 0.0], [0.24, -0.06, 0.0],     # right arm
    [-0.09, -0.02, 0.0], [-0.10, -0.45, 0.0], [-0.10, -0.86, 0.0], [-0.10, -0.92, 0.1],  # left leg
    [0.09, -0.02, 0.0], [0.10, -0.45, 0.0], [0.10, -0.86, 0.0], [0.10, -0.92, 0.1],     # right leg
    [0.00, 0.55, 0.0],                                                                # spine shoulder
    [-0.24, -0.12, 0.0], [-0.21, -0.08, 0.03], [0.24, -0.12, 0.0], [0.21, -0.08, 0.03],  # hand tips, thumbs
])

SCENE_CENTER = np.array([0.0, 0.0, 3.0])
SIDE_ANGLE_DEG = 45.0


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 6
    num_groups: int = 12
    repeats: int = 4
    frames: tuple = (40, 60)              # inclusive range of frames per sample
    fps: float = 10.0
    views: tuple = VIEWS
    modalities: tuple = ("rgb", "depth")
    image_size: int = 32
    class_frequencies: tuple | None = None  # Hz per class; drawn from [0.4, 1.2] when omitted
    noise: float = 0.01                   # joint jitter std, metres
    two_bodies: bool = True

    def __post_init__(self):
        if not 1 <= self.num_classes <= NUM_CLASSES:
            raise ValidationError(f"num_classes must be in [1, {NUM_CLASSES}]")
        if not 1 <= self.num_groups <= NUM_GROUPS:
            raise ValidationError(f"num_groups must be in [1, {NUM_GROUPS}]")
        if self.repeats < 1:
            raise ValidationError("repeats must be >= 1")
        lo, hi = self.frames
        if not 2 <= lo <= hi:
            raise ValidationError(f"frames range {self.frames} invalid; need 2 <= min <= max")
        if any(v not in VIEWS for v in self.views):
            raise ValidationError(f"views must be drawn from {VIEWS}")
        if self.class_frequencies is not None and len(self.class_frequencies) != self.num_classes:
            raise ValidationError("class_frequencies needs one entry per class")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown synth config keys {sorted(unknown)}")
        d = dict(d)
        for key in ("frames", "views", "modalities", "class_frequencies"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ClassMotion:
    frequency: float
    amplitude: np.ndarray   # (bodies, 25)
    direction: np.ndarray   # (bodies, 25, 3) unit vectors
    phase: np.ndarray       # (bodies, 25)


def _rng(seed, *key):
    return np.random.default_rng([int(seed)] + [int(k) for k in key])


def class_motion(config: SynthConfig, seed: int, class_id: int) -> ClassMotion:
    rng = _rng(seed, 1, class_id)
    freq = (config.class_frequencies[class_id - 1] if config.class_frequencies is not None
            else float(rng.uniform(0.4, 1.2)))
    nb = 2 if config.two_bodies else 1
    amp = np.full((nb, NUM_JOINTS), 0.02)
    direction = np.zeros((nb, NUM_JOINTS, 3))
    phase = np.zeros((nb, NUM_JOINTS))
    # each class drives one body part per body; which part and where to is the class signature
    part_order = rng.permutation(len(DEFAULT_CHAINS))
    for b in range(nb):
        part = DEFAULT_CHAINS[part_order[(class_id + b) % len(DEFAULT_CHAINS)]][1]
        main = rng.normal(size=3)
        main[1] = abs(main[1]) + 0.3
        main /= np.linalg.norm(main)
        base_amp = rng.uniform(0.15, 0.3)
        base_phase = rng.uniform(0, 2 * np.pi)
        for rank, j in enumerate(part):
            amp[b, j] = base_amp * (0.4 + 0.6 * (rank + 1) / len(part))
            phase[b, j] = base_phase + 0.3 * rank
        for j in range(NUM_JOINTS):
            jitter = rng.normal(scale=0.3, size=3)
            d = main + jitter if j in part else rng.normal(size=3)
            direction[b, j] = d / np.linalg.norm(d)
            if j not in part:
                phase[b, j] = rng.uniform(0, 2 * np.pi)
    return ClassMotion(freq, amp, direction, phase)


def _yaw(deg):
    t = np.deg2rad(deg)
    return np.array([[np.cos(t), 0.0, np.sin(t)], [0.0, 1.0, 0.0], [-np.sin(t), 0.0, np.cos(t)]])


def side_view(points: np.ndarray, angle_deg: float = SIDE_ANGLE_DEG) -> np.ndarray:
    """Front-camera coordinates -> side-camera coordinates (rotation about the scene's vertical axis)."""
    R = _yaw(angle_deg)
    return (points - SCENE_CENTER) @ R.T + SCENE_CENTER


def synthesize_sample(config: SynthConfig, seed: int, group: int, cls: int, rep: int,
                      motions: dict | None = None) -> np.ndarray:
    """World (front-camera) joint positions, shape ``(F, B, 25, 3)``."""
    motion = (motions or {}).get(cls) or class_motion(config, seed, cls)
    g = _rng(seed, 2, group)
    scale = g.uniform(0.9, 1.1, size=2)
    offset = np.array([g.uniform(-0.15, 0.15), 0.0, g.uniform(-0.2, 0.2)])
    s = _rng(seed, 3, group, cls, rep)
    F = int(s.integers(config.frames[0], config.frames[1] + 1))
    phase_jitter = s.normal(scale=0.2)
    speed = s.uniform(0.9, 1.1)
    t = np.arange(F) / config.fps
    nb = motion.amplitude.shape[0]
    out = np.empty((F, nb, NUM_JOINTS, 3))
    for b in range(nb):
        # the two performers face each other across the scene centre
        facing = _yaw(90.0 if b == 0 else -90.0)
        pose = (TEMPLATE_POSE * scale[b]) @ facing.T
        anchor = SCENE_CENTER + offset + np.array([-0.45 if b == 0 else 0.45, 0.0, 0.0])
        wave = np.sin(2 * np.pi * motion.frequency * speed * t[:, None] + motion.phase[b] + phase_jitter)
        disp = (motion.amplitude[b] * wave)[..., None] * motion.direction[b]
        out[:, b] = pose + anchor + disp
    out += s.normal(scale=config.noise, size=out.shape)
    return out


# ---------------------------------------------------------------------------
# rendering

def _project(points: np.ndarray, view: str, size: int, head=None):
    """Image coordinates (u, v) and camera distance for (F, N, 3) front-frame points."""
    f = size * 0.9
    c = (size - 1) / 2.0
    if view in ("front", "side"):
        p = points if view == "front" else side_view(points)
        z = p[..., 2]
        return f * p[..., 0] / z + c, -f * p[..., 1] / z + c, z
    if view == "top":
        height = 2.4
        rel = points - SCENE_CENTER
        dist = height - (rel[..., 1] + 1.0)
        return f * 0.75 * rel[..., 0] / height + c, f * 0.75 * rel[..., 2] / height + c, dist
    # first person: camera rides on the wearer's head, looking at the partner
    rel = points - head[:, None, :] - np.array([0.1, 0.0, 0.0])
    fwd = np.array([1.0, 0.0, 0.0])
    right = np.array([0.0, 0.0, -1.0])
    up = np.array([0.0, 1.0, 0.0])
    z = np.maximum(rel @ fwd, 0.2)
    return f * 0.5 * (rel @ right) / z + c, -f * 0.5 * (rel @ up) / z + c, z


def render_video(joints: np.ndarray, view: str, modality: str, size: int = 32, sigma: float = 1.0) -> np.ndarray:
    """Gaussian-blob rendering of ``(F, B, 25, 3)`` joints; returns float32 ``(F, size, size, C)``."""
    if modality not in VIDEO_MODALITIES:
        raise ValidationError(f"unknown video modality {modality!r}")
    if view not in VIEWS:
        raise ValidationError(f"unknown view {view!r}")
    F, B = joints.shape[:2]
    pts = joints.reshape(F, B * NUM_JOINTS, 3)
    head = None
    if view == "fpv":
        # the wearer's own joints sit behind the camera; render the partner only
        pts = joints[:, -1]
        head = joints[:, 0, 3] if B > 1 else np.tile(SCENE_CENTER + [-0.45, 0.75, 0.0], (F, 1))
    u, v, dist = _project(pts, view, size, head)
    grid = np.arange(size, dtype=np.float64)
    gx = np.exp(-((grid[None, None, :] - u[..., None]) ** 2) / (2 * sigma ** 2))  # (F, N, W)
    gy = np.exp(-((grid[None, None, :] - v[..., None]) ** 2) / (2 * sigma ** 2))  # (F, N, H)
    if modality == "depth":
        near, far = 1.0, 5.0
        code = np.clip(1.0 - (dist - near) / (far - near), 0.2, 1.0)
        img = np.einsum("fnh,fnw,fn->fhw", gy, gx, code)[..., None]
    else:
        n = pts.shape[1]
        body = np.repeat(np.arange(B), NUM_JOINTS)[:n] if view != "fpv" else np.ones(n, dtype=int)
        chans = []
        for ch in range(2):
            w = (body == ch).astype(np.float64)
            chans.append(np.einsum("fnh,fnw,n->fhw", gy, gx, w))
        chans.append(0.5 * (chans[0] + chans[1]))
        img = np.stack(chans, axis=-1)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# dataset assembly

def synthesize_skeletons(config: SynthConfig, seed: int, views=("front", "side")) -> list:
    """In-memory skeleton sequences for every (group, class, repeat) and view."""
    ranges = IdRanges(NUM_CLASSES, NUM_GROUPS)
    motions = {c: class_motion(config, seed, c) for c in range(1, config.num_classes + 1)}
    out = []
    for g in range(1, config.num_groups + 1):
        for c in range(1, config.num_classes + 1):
            for r in range(1, config.repeats + 1):
                world = synthesize_sample(config, seed, g, c, r, motions)
                sid = census_sample_id(g, c, r)
                for view in views:
                    pts = world if view == "front" else side_view(world)
                    F, B = pts.shape[:2]
                    out.append(SkeletonSequence(pts, np.arange(F), np.ones((F, B), bool), view, sid, c, g, ranges))
    return out


def generate_synthetic_dataset(config: SynthConfig, seed: int, out_dir) -> DatasetManifest:
    """Write skeleton files, rendered videos and ``manifest.json`` under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    motions = {c: class_motion(config, seed, c) for c in range(1, config.num_classes + 1)}
    entries = []
    for g in range(1, config.num_groups + 1):
        for c in range(1, config.num_classes + 1):
            for r in range(1, config.repeats + 1):
                world = synthesize_sample(config, seed, g, c, r, motions)
                sid = census_sample_id(g, c, r)
                F, B = world.shape[:2]
                for view in ("front", "side"):
                    if view not in config.views:
                        continue
                    pts = world if view == "front" else side_view(world)
                    seq = SkeletonSequence(pts, np.arange(F), np.ones((F, B), bool), view, sid, c, g)
                    rel = Path("skeleton") / view / f"{sid}.skel"
                    (out_dir / rel).parent.mkdir(parents=True, exist_ok=True)
                    write_skeleton_file(seq, out_dir / rel)
                    entries.append(ManifestEntry(sid, view, "skeleton", c, g, rel.as_posix(), F))
                for view in config.views:
                    for modality in config.modalities:
                        rel = Path("video") / view / modality / f"{sid}.npy"
                        (out_dir / rel).parent.mkdir(parents=True, exist_ok=True)
                        np.save(out_dir / rel, render_video(world, view, modality, config.image_size))
                        entries.append(ManifestEntry(sid, view, modality, c, g, rel.as_posix(), F))
    manifest = DatasetManifest(tuple(entries), root=str(out_dir))
    manifest.save(out_dir / "manifest.json")
    (out_dir / "synth_config.json").write_text(
        json.dumps({"seed": seed, **config.to_dict()}, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


# ---------------------------------------------------------------------------
# moving-blob videos for the video stream benchmark

BLOB_DIRECTIONS = ((1, 0), (-1, 0), (0, 1), (0, -1))  # right, left, down, up (column, row)


@dataclass(frozen=True)
class BlobConfig:
    num_classes: int = 4
    num_groups: int = 12
    repeats: int = 2
    frames: tuple = (16, 40)
    image_size: int = 32
    noise: float = 0.05
    sigma: float = 4.0


def moving_blob_video(direction, num_frames, size, rng, noise=0.05, sigma=4.0) -> np.ndarray:
    """A blob crossing the frame along ``direction``; float32 ``(F, size, size, 1)``."""
    dx, dy = direction
    travel = rng.uniform(0.5, 0.6) * size
    start = np.array([rng.uniform(0.44, 0.56), rng.uniform(0.44, 0.56)]) * size
    start -= 0.5 * travel * np.array([dx, dy])
    steps = np.linspace(0.0, 1.0, num_frames)
    cx = start[0] + travel * dx * steps
    cy = start[1] + travel * dy * steps
    grid = np.arange(size, dtype=np.float64)
    gx = np.exp(-((grid[None, :] - cx[:, None]) ** 2) / (2 * sigma ** 2))
    gy = np.exp(-((grid[None, :] - cy[:, None]) ** 2) / (2 * sigma ** 2))
    frames = gy[:, :, None] * gx[:, None, :]
    frames += rng.normal(scale=noise, size=frames.shape)
    return np.clip(frames, 0.0, 1.0)[..., None].astype(np.float32)


def generate_blob_videos(config: BlobConfig = BlobConfig(), seed: int = 0, view="front") -> list:
    if not 1 <= config.num_classes <= len(BLOB_DIRECTIONS):
        raise ValidationError(f"blob benchmark supports at most {len(BLOB_DIRECTIONS)} classes")
    out = []
    for g in range(1, config.num_groups + 1):
        for c in range(1, config.num_classes + 1):
            for r in range(1, config.repeats + 1):
                rng = _rng(seed, 4, g, c, r)
                F = int(rng.integers(config.frames[0], config.frames[1] + 1))
                frames = moving_blob_video(BLOB_DIRECTIONS[c - 1], F, config.image_size, rng,
                                           config.noise, config.sigma)
                out.append(VideoSequence(frames, view, "depth", census_sample_id(g, c, r), c, g))
    return out


def write_blob_dataset(config: BlobConfig, seed: int, out_dir) -> DatasetManifest:
    out_dir = Path(out_dir)
    entries = []
    for video in generate_blob_videos(config, seed):
        rel = Path("video") / video.view / video.modality / f"{video.sample_id}.npy"
        (out_dir / rel).parent.mkdir(parents=True, exist_ok=True)
        np.save(out_dir / rel, video.frames)
        entries.append(ManifestEntry(video.sample_id, video.view, video.modality, video.class_id,
                                     video.group_id, rel.as_posix(), video.num_frames))
    manifest = DatasetManifest(tuple(entries), root=str(out_dir))
    manifest.save(out_dir / "manifest.json")
    return manifest
