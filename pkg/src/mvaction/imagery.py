"""Skeleton sequence -> dense pseudo-image via cubic spline densification.

Each body part is a chain of joints. Intermediate points are inserted along
each chain with a spatial spline over chain position, then every (original
or inserted) joint trajectory is resampled in time with a temporal spline.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_model import NUM_JOINTS, SkeletonSequence
from .errors import DegenerateInputError, RangeError, ShapeError, ValidationError


class NaturalCubicSpline:
    """Natural cubic spline through ``(x[i], y[i])``.

    ``y`` may carry trailing dimensions; every trailing column is an
    independent curve sharing the same knot positions.
    """

    def __init__(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.ndim != 1 or x.size < 2:
            raise DegenerateInputError(f"need at least 2 knots, got {x.size}")
        if y.shape[0] != x.size:
            raise ShapeError(f"{x.size} knot positions but {y.shape[0]} knot values")
        h = np.diff(x)
        if np.any(h <= 0):
            raise DegenerateInputError("knot positions must be strictly increasing (duplicate or unordered knots)")
        self.x, self.y, self.h = x, y, h
        self.m = self._second_derivatives(h, y)

    @staticmethod
    def _second_derivatives(h, y):
        n = y.shape[0]
        m = np.zeros_like(y)
        if n == 2:
            return m
        trail = (slice(None),) + (None,) * (y.ndim - 1)
        slope = np.diff(y, axis=0) / h[trail]
        rhs = 6.0 * (slope[1:] - slope[:-1])
        # Thomas algorithm; row i couples m[i], m[i+1], m[i+2] with weights h[i], 2(h[i]+h[i+1]), h[i+1]
        k = n - 2
        diag = 2.0 * (h[:-1] + h[1:])
        cp = np.zeros(k)
        dp = np.empty_like(rhs)
        for i in range(k):
            sub = h[i] if i else 0.0
            denom = diag[i] - sub * (cp[i - 1] if i else 0.0)
            cp[i] = h[i + 1] / denom if i < k - 1 else 0.0
            dp[i] = (rhs[i] - (sub * dp[i - 1] if i else 0.0)) / denom
        sol = np.empty_like(rhs)
        sol[-1] = dp[-1]
        for i in range(k - 2, -1, -1):
            sol[i] = dp[i] - cp[i] * sol[i + 1]
        m[1:-1] = sol
        return m

    def __call__(self, q):
        q = np.asarray(q, dtype=np.float64)
        if np.any(q < self.x[0]) or np.any(q > self.x[-1]):
            raise RangeError(f"query outside knot range [{self.x[0]}, {self.x[-1]}]")
        i = np.clip(np.searchsorted(self.x, q, side="right") - 1, 0, self.x.size - 2)
        trail = (...,) + (None,) * (self.y.ndim - 1)
        x0, x1, h = self.x[i][trail], self.x[i + 1][trail], self.h[i][trail]
        qq = q[trail]
        a, b = x1 - qq, qq - x0
        m0, m1 = self.m[i], self.m[i + 1]
        y0, y1 = self.y[i], self.y[i + 1]
        return (m0 * a ** 3 + m1 * b ** 3) / (6.0 * h) + (y0 / h - m0 * h / 6.0) * a + (y1 / h - m1 * h / 6.0) * b


def spline_interpolate(knots, queries):
    """Evaluate the natural cubic spline through ``knots`` = [(position, value), ...]."""
    knots = list(knots)
    xs = [k[0] for k in knots]
    ys = [k[1] for k in knots]
    return NaturalCubicSpline(xs, ys)(queries)


# Kinect v2 joint order
SPINE_BASE, SPINE_MID, NECK, HEAD = 0, 1, 2, 3
SHOULDER_L, ELBOW_L, WRIST_L, HAND_L = 4, 5, 6, 7
SHOULDER_R, ELBOW_R, WRIST_R, HAND_R = 8, 9, 10, 11
HIP_L, KNEE_L, ANKLE_L, FOOT_L = 12, 13, 14, 15
HIP_R, KNEE_R, ANKLE_R, FOOT_R = 16, 17, 18, 19
SPINE_SHOULDER, HANDTIP_L, THUMB_L, HANDTIP_R, THUMB_R = 20, 21, 22, 23, 24

DEFAULT_CHAINS = (
    ("trunk", (SPINE_BASE, SPINE_MID, SPINE_SHOULDER, NECK, HEAD)),
    ("left_arm", (SHOULDER_L, ELBOW_L, WRIST_L, HAND_L, HANDTIP_L, THUMB_L)),
    ("right_arm", (SHOULDER_R, ELBOW_R, WRIST_R, HAND_R, HANDTIP_R, THUMB_R)),
    ("left_leg", (HIP_L, KNEE_L, ANKLE_L, FOOT_L)),
    ("right_leg", (HIP_R, KNEE_R, ANKLE_R, FOOT_R)),
)


@dataclass(frozen=True)
class BodyPartLayout:
    chains: tuple = DEFAULT_CHAINS
    points_per_edge: int = 2
    target_frames: int = 64

    def __post_init__(self):
        covered = set()
        for name, chain in self.chains:
            if len(chain) < 2:
                raise ValidationError(f"chain {name!r} needs at least 2 joints")
            if any(not 0 <= j < NUM_JOINTS for j in chain):
                raise ValidationError(f"chain {name!r} references a joint outside [0, {NUM_JOINTS})")
            covered.update(chain)
        if covered != set(range(NUM_JOINTS)):
            raise ValidationError(f"chains leave joints {sorted(set(range(NUM_JOINTS)) - covered)} uncovered")
        if self.points_per_edge < 0:
            raise ValidationError("points_per_edge must be >= 0")
        if self.target_frames < 2:
            raise ValidationError("target_frames must be >= 2")

    @property
    def num_edges(self) -> int:
        return sum(len(c) - 1 for _, c in self.chains)

    @property
    def joints_per_body(self) -> int:
        return sum(len(c) for _, c in self.chains) + self.points_per_edge * self.num_edges

    def chain_queries(self, k: int) -> np.ndarray:
        p = self.points_per_edge
        steps = np.arange(p + 1) / (p + 1)
        return np.concatenate([i + steps for i in range(k - 1)] + [np.array([k - 1.0])])

    def original_columns(self) -> dict:
        """Column of each original joint within one body block (first occurrence)."""
        cols, offset = {}, 0
        for _, chain in self.chains:
            for i, j in enumerate(chain):
                cols.setdefault(j, offset + i * (self.points_per_edge + 1))
            offset += len(chain) + self.points_per_edge * (len(chain) - 1)
        return cols


@dataclass(frozen=True, eq=False)
class PseudoImage:
    """``data`` is ``(frames, expanded joints, 3)`` with values in [0, 1]."""

    data: np.ndarray
    sample_id: str = ""
    view: str = ""
    class_id: int = 1
    group_id: int = 1
    num_bodies: int = 1
    coord_min: np.ndarray = field(default_factory=lambda: np.zeros(3))
    coord_max: np.ndarray = field(default_factory=lambda: np.ones(3))

    def denormalize(self) -> np.ndarray:
        span = self.coord_max - self.coord_min
        span = np.where(span > 0, span, 0.0)
        out = self.data * span + self.coord_min
        flat = self.coord_max - self.coord_min <= 0
        out[..., flat] = self.coord_min[flat]
        return out


def expand_body(joints: np.ndarray, layout: BodyPartLayout) -> np.ndarray:
    """``(F, 25, 3)`` -> ``(F, joints_per_body, 3)`` with spline-inserted chain points."""
    parts = []
    for _, chain in layout.chains:
        k = len(chain)
        vals = np.moveaxis(joints[:, list(chain), :], 1, 0)  # (k, F, 3)
        spline = NaturalCubicSpline(np.arange(k, dtype=np.float64), vals)
        parts.append(spline(layout.chain_queries(k)))
    return np.moveaxis(np.concatenate(parts, axis=0), 0, 1)


def normalize_axes(arr: np.ndarray):
    lo = arr.min(axis=(0, 1))
    hi = arr.max(axis=(0, 1))
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = (arr - lo) / safe
    out[..., span <= 0] = 0.5
    return np.clip(out, 0.0, 1.0), lo, hi


def map_sequence_to_image(seq: SkeletonSequence, layout: BodyPartLayout | None = None) -> PseudoImage:
    layout = layout or BodyPartLayout()
    if seq.num_frames < 2:
        raise DegenerateInputError(f"{seq.sample_id}: imagery mapping needs at least 2 frames")
    bodies = [expand_body(seq.joints[:, b], layout) for b in range(seq.num_bodies)]
    dense = np.concatenate(bodies, axis=1)  # (F, J', 3)
    times = np.arange(seq.num_frames, dtype=np.float64)
    queries = np.linspace(0.0, seq.num_frames - 1.0, layout.target_frames)
    resampled = NaturalCubicSpline(times, dense)(queries)
    data, lo, hi = normalize_axes(resampled)
    return PseudoImage(data, seq.sample_id, seq.view, seq.class_id, seq.group_id, seq.num_bodies, lo, hi)


# ---------------------------------------------------------------------------
# flat binary blocks: 3 x little-endian int32 dims, then row-major float32

def write_blocks(path, arrays):
    with open(path, "wb") as fh:
        for arr in arrays:
            arr = np.asarray(arr)
            if arr.ndim != 3:
                raise ShapeError(f"binary blocks hold 3-D arrays, got {arr.shape}")
            fh.write(struct.pack("<3i", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_blocks(path) -> list:
    blob = Path(path).read_bytes()
    pos, out = 0, []
    while pos < len(blob):
        if len(blob) - pos < 12:
            raise ValidationError(f"{path}: truncated block header at byte {pos}")
        dims = struct.unpack_from("<3i", blob, pos)
        pos += 12
        n = int(np.prod(dims))
        if len(blob) - pos < 4 * n:
            raise ValidationError(f"{path}: truncated block payload at byte {pos}")
        out.append(np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(dims).astype(np.float64))
        pos += 4 * n
    return out


def save_pseudo_image(img: PseudoImage, path):
    write_blocks(path, [img.data])


def load_pseudo_image(path) -> np.ndarray:
    blocks = read_blocks(path)
    if len(blocks) != 1:
        raise ValidationError(f"{path}: expected one block, found {len(blocks)}")
    return blocks[0]
