"""Dataset-facing types, on-disk formats and evaluation-protocol splitters.

Skeleton text format::

    FTHID-SKEL 1 <F> <B>
    <frame> <body> <joint> <x> <y> <z>      # one line per joint, F*B*25 lines

``frame`` is the frame's timestamp index; ``body`` and ``joint`` are 0-based.
A frame may list fewer than ``B`` bodies, in which case the missing bodies are
zero-padded on load and the frame is flagged.
"""
from __future__ import annotations

import hashlib
import json
import os
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DataError, PairingError, ParseError, StructuralError, ValidationError

NUM_JOINTS = 25
MAX_BODIES = 2
NUM_CLASSES = 30
NUM_GROUPS = 89

SKELETON_VIEWS = ("front", "side")
TPV_VIEWS = ("front", "side", "top")
VIEWS = ("front", "side", "top", "fpv")
VIDEO_MODALITIES = ("rgb", "depth")
MODALITIES = ("rgb", "depth", "skeleton")
PROTOCOLS = ("cs_first", "cs_second", "cross_view", "tf_combined")

SKELETON_MAGIC = "FTHID-SKEL"
SKELETON_VERSION = "1"


class SplitWarning(UserWarning):
    """A protocol produced an empty train or test side."""


@dataclass(frozen=True)
class IdRanges:
    classes: int = NUM_CLASSES
    groups: int = NUM_GROUPS

    def check(self, class_id: int, group_id: int, where: str = ""):
        prefix = f"{where}: " if where else ""
        if not 1 <= class_id <= self.classes:
            raise ValidationError(f"{prefix}class_id {class_id} outside [1, {self.classes}]")
        if not 1 <= group_id <= self.groups:
            raise ValidationError(f"{prefix}group_id {group_id} outside [1, {self.groups}]")


CENSUS = IdRanges()


class Joint3D(NamedTuple):
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class SkeletonFrame:
    bodies: tuple  # each a (25, 3) array
    timestamp_index: int

    def joints(self, body: int) -> list:
        return [Joint3D(*map(float, row)) for row in self.bodies[body]]


@dataclass(frozen=True, eq=False)
class SkeletonSequence:
    """Frames of 25 camera-space joints per tracked body.

    ``joints`` has shape ``(F, B, 25, 3)``. ``present[f, b]`` is False where body
    ``b`` was missing from frame ``f`` and has been zero-padded.
    """

    joints: np.ndarray
    timestamps: np.ndarray
    present: np.ndarray
    view: str = "front"
    sample_id: str = ""
    class_id: int = 1
    group_id: int = 1
    id_ranges: IdRanges = field(default=CENSUS, repr=False)

    def __post_init__(self):
        j = np.asarray(self.joints, dtype=np.float64)
        object.__setattr__(self, "joints", j)
        object.__setattr__(self, "timestamps", np.asarray(self.timestamps, dtype=np.int64))
        object.__setattr__(self, "present", np.asarray(self.present, dtype=bool))
        if j.ndim != 4 or j.shape[2:] != (NUM_JOINTS, 3):
            raise StructuralError(f"joints must be (F, B, 25, 3), got {j.shape}")
        if not 1 <= j.shape[1] <= MAX_BODIES:
            raise StructuralError(f"body count {j.shape[1]} outside [1, {MAX_BODIES}]")
        if j.shape[0] < 1:
            raise StructuralError("sequence has no frames")
        if not np.all(np.isfinite(j)):
            raise ValidationError(f"{self.sample_id}: non-finite joint coordinates")
        if self.timestamps.shape != (j.shape[0],) or np.any(self.timestamps < 0):
            raise StructuralError("timestamps must be one non-negative index per frame")
        if np.any(np.diff(self.timestamps) <= 0):
            raise StructuralError("frame timestamps must be strictly increasing")
        if self.present.shape != j.shape[:2]:
            raise StructuralError(f"present mask {self.present.shape} does not match {j.shape[:2]}")
        if self.view not in SKELETON_VIEWS:
            raise ValidationError(f"skeleton view must be one of {SKELETON_VIEWS}, got {self.view!r}")
        self.id_ranges.check(self.class_id, self.group_id, self.sample_id)

    @property
    def num_frames(self) -> int:
        return self.joints.shape[0]

    @property
    def num_bodies(self) -> int:
        return self.joints.shape[1]

    @property
    def padded(self) -> np.ndarray:
        """Per-frame flag: True where at least one body was zero-padded."""
        return ~self.present.all(axis=1)

    @property
    def frames(self) -> list:
        return [SkeletonFrame(tuple(self.joints[f]), int(self.timestamps[f])) for f in range(self.num_frames)]

    def equals(self, other: "SkeletonSequence") -> bool:
        return (
            np.array_equal(self.joints, other.joints)
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.present, other.present)
            and (self.view, self.sample_id, self.class_id, self.group_id)
            == (other.view, other.sample_id, other.class_id, other.group_id)
        )


@dataclass(frozen=True, eq=False)
class VideoSequence:
    """``frames`` is ``(F, H, W, C)`` with values in [0, 1]."""

    frames: np.ndarray
    view: str
    modality: str
    sample_id: str = ""
    class_id: int = 1
    group_id: int = 1

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim == 3:
            f = f[..., None]
        object.__setattr__(self, "frames", f)
        if f.ndim != 4 or f.shape[0] < 1:
            raise StructuralError(f"video frames must be (F>=1, H, W, C), got {f.shape}")
        if f.shape[-1] not in (1, 3):
            raise StructuralError(f"video frames need 1 or 3 channels, got {f.shape[-1]}")
        if self.view not in VIEWS:
            raise ValidationError(f"unknown view {self.view!r}")
        if self.modality not in VIDEO_MODALITIES:
            raise ValidationError(f"unknown video modality {self.modality!r}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


# ---------------------------------------------------------------------------
# skeleton text format

def write_skeleton_file(seq: SkeletonSequence, path):
    lines = [f"{SKELETON_MAGIC} {SKELETON_VERSION} {seq.num_frames} {seq.num_bodies}"]
    for f in range(seq.num_frames):
        ts = int(seq.timestamps[f])
        for b in range(seq.num_bodies):
            if not seq.present[f, b]:
                continue
            for j, (x, y, z) in enumerate(seq.joints[f, b]):
                lines.append(f"{ts} {b} {j} {float(x)!r} {float(y)!r} {float(z)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_skeleton_file(path, *, view="front", sample_id=None, class_id=1, group_id=1,
                        id_ranges: IdRanges = CENSUS) -> SkeletonSequence:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    head = lines[0].split()
    if len(head) != 4 or head[0] != SKELETON_MAGIC:
        raise ParseError(f"expected header '{SKELETON_MAGIC} 1 <F> <B>'", line=1)
    if head[1] != SKELETON_VERSION:
        raise ParseError(f"unsupported format version {head[1]!r}", line=1)
    try:
        n_frames, n_bodies = int(head[2]), int(head[3])
    except ValueError:
        raise ParseError("frame and body counts must be integers", line=1) from None
    if n_frames < 1 or not 1 <= n_bodies <= MAX_BODIES:
        raise StructuralError(f"header declares F={n_frames}, B={n_bodies}; need F>=1 and 1<=B<={MAX_BODIES}")

    frames: dict = {}  # timestamp -> {body: {joint: xyz}}
    order = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split()
        if len(parts) != 6:
            raise ParseError(f"expected 6 fields 'frame body joint x y z', got {len(parts)}", line=lineno)
        try:
            ts, body, joint = int(parts[0]), int(parts[1]), int(parts[2])
            xyz = (float(parts[3]), float(parts[4]), float(parts[5]))
        except ValueError:
            raise ParseError(f"malformed numeric field in {raw!r}", line=lineno) from None
        if not all(np.isfinite(xyz)):
            raise ParseError("non-finite coordinate", line=lineno)
        if ts not in frames:
            if order and ts <= order[-1]:
                raise ParseError(f"frame index {ts} not strictly increasing", line=lineno)
            frames[ts] = {}
            order.append(ts)
        elif ts != order[-1]:
            raise ParseError(f"lines of frame {ts} are not contiguous", line=lineno)
        if not 0 <= body < n_bodies:
            raise StructuralError(f"line {lineno}: body index {body} outside [0, {n_bodies})")
        if not 0 <= joint < NUM_JOINTS:
            raise StructuralError(f"line {lineno}: joint index {joint} outside [0, {NUM_JOINTS})")
        slot = frames[ts].setdefault(body, {})
        if joint in slot:
            raise StructuralError(f"line {lineno}: duplicate joint {joint} for body {body} in frame {ts}")
        slot[joint] = xyz

    if len(order) != n_frames:
        raise StructuralError(f"header declares {n_frames} frames, file contains {len(order)}")
    joints = np.zeros((n_frames, n_bodies, NUM_JOINTS, 3))
    present = np.zeros((n_frames, n_bodies), dtype=bool)
    for f, ts in enumerate(order):
        for body, slot in frames[ts].items():
            if len(slot) != NUM_JOINTS:
                raise StructuralError(
                    f"frame {f + 1} (index {ts}), body {body}: {len(slot)} joints, expected {NUM_JOINTS}")
            joints[f, body] = [slot[j] for j in range(NUM_JOINTS)]
            present[f, body] = True
    return SkeletonSequence(
        joints, np.array(order), present, view=view,
        sample_id=path.stem if sample_id is None else sample_id,
        class_id=class_id, group_id=group_id, id_ranges=id_ranges,
    )


# ---------------------------------------------------------------------------
# manifests

@dataclass(frozen=True, order=True)
class ManifestEntry:
    sample_id: str
    view: str
    modality: str
    class_id: int
    group_id: int
    path: str
    frame_count: int

    @property
    def uid(self) -> str:
        return f"{self.sample_id}/{self.view}/{self.modality}"

    def to_json(self) -> dict:
        return {
            "sample_id": self.sample_id, "class_id": self.class_id, "group_id": self.group_id,
            "view": self.view, "modality": self.modality, "path": self.path,
            "frame_count": self.frame_count,
        }


def parse_uid(uid: str) -> tuple:
    sample_id, view, modality = uid.rsplit("/", 2)
    return sample_id, view, modality


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple
    root: str = ""

    def __post_init__(self):
        entries = tuple(sorted(self.entries))
        object.__setattr__(self, "entries", entries)
        seen = set()
        for e in entries:
            if e.view not in VIEWS:
                raise ValidationError(f"{e.sample_id}: unknown view {e.view!r}")
            if e.modality not in MODALITIES:
                raise ValidationError(f"{e.sample_id}: unknown modality {e.modality!r}")
            if e.uid in seen:
                raise ValidationError(f"duplicate sample_id {e.sample_id!r} for ({e.view}, {e.modality})")
            seen.add(e.uid)

    def __len__(self):
        return len(self.entries)

    def select(self, view=None, modality=None) -> list:
        return [e for e in self.entries
                if (view is None or e.view == view) and (modality is None or e.modality == modality)]

    def resolve(self, entry: ManifestEntry) -> Path:
        return Path(self.root) / entry.path

    def save(self, path):
        Path(path).write_text(json.dumps([e.to_json() for e in self.entries], indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, check_paths=True) -> "DatasetManifest":
        path = Path(path)
        records = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(records, list):
            raise ValidationError(f"{path}: manifest must be a JSON array")
        fields = ("sample_id", "class_id", "group_id", "view", "modality", "path", "frame_count")
        entries = []
        for i, rec in enumerate(records):
            if set(rec) != set(fields):
                raise ValidationError(f"{path}: entry {i} has fields {sorted(rec)}, expected {sorted(fields)}")
            entries.append(ManifestEntry(
                sample_id=str(rec["sample_id"]), view=rec["view"], modality=rec["modality"],
                class_id=int(rec["class_id"]), group_id=int(rec["group_id"]),
                path=rec["path"], frame_count=int(rec["frame_count"])))
        manifest = cls(tuple(entries), root=str(path.parent))
        if check_paths:
            for e in manifest.entries:
                if not manifest.resolve(e).exists():
                    raise FileNotFoundError(f"manifest entry {e.uid}: missing file {manifest.resolve(e)}")
        return manifest


def load_skeleton(manifest: DatasetManifest, entry: ManifestEntry, id_ranges=CENSUS) -> SkeletonSequence:
    return parse_skeleton_file(manifest.resolve(entry), view=entry.view, sample_id=entry.sample_id,
                               class_id=entry.class_id, group_id=entry.group_id, id_ranges=id_ranges)


def load_video(manifest: DatasetManifest, entry: ManifestEntry) -> VideoSequence:
    frames = np.load(manifest.resolve(entry))
    return VideoSequence(frames, entry.view, entry.modality, entry.sample_id, entry.class_id, entry.group_id)


# ---------------------------------------------------------------------------
# protocol splits

@dataclass(frozen=True)
class ProtocolSplit:
    """Disjoint sets of entry uids (``sample_id/view/modality``)."""

    protocol: str
    train_ids: frozenset
    test_ids: frozenset

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValidationError(f"unknown protocol {self.protocol!r}")
        object.__setattr__(self, "train_ids", frozenset(self.train_ids))
        object.__setattr__(self, "test_ids", frozenset(self.test_ids))
        overlap = self.train_ids & self.test_ids
        if overlap:
            raise ValidationError(f"train and test overlap on {sorted(overlap)[:3]}")

    def sample_ids(self, side: str) -> set:
        ids = self.train_ids if side == "train" else self.test_ids
        return {parse_uid(u)[0] for u in ids}

    def count(self, side: str, view=None, modality=None) -> int:
        ids = self.train_ids if side == "train" else self.test_ids
        n = 0
        for u in ids:
            _, v, m = parse_uid(u)
            if (view is None or v == view) and (modality is None or m == modality):
                n += 1
        return n

    def to_json(self) -> dict:
        return {"protocol": self.protocol, "train_ids": sorted(self.train_ids), "test_ids": sorted(self.test_ids)}

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ProtocolSplit":
        rec = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(rec["protocol"], frozenset(rec["train_ids"]), frozenset(rec["test_ids"]))


def _check_groups(manifest, id_ranges):
    for e in manifest.entries:
        if not 1 <= e.group_id <= id_ranges.groups:
            raise ValidationError(f"{e.uid}: group_id {e.group_id} outside [1, {id_ranges.groups}]")


def _finish_split(protocol, train, test):
    for side, ids in (("train", train), ("test", test)):
        if not ids:
            warnings.warn(f"{protocol}: {side} set is empty", SplitWarning, stacklevel=3)
    return ProtocolSplit(protocol, frozenset(train), frozenset(test))


def split_cs_first(manifest: DatasetManifest, id_ranges=CENSUS) -> ProtocolSplit:
    """Cross-subject, groups whose id is a multiple of 4 are held out."""
    _check_groups(manifest, id_ranges)
    test = {e.uid for e in manifest.entries if e.group_id % 4 == 0}
    train = {e.uid for e in manifest.entries} - test
    return _finish_split("cs_first", train, test)


def split_cs_second(manifest: DatasetManifest, id_ranges=CENSUS) -> ProtocolSplit:
    """Cross-subject (and cross-background): groups 1..45 train, 46.. test."""
    _check_groups(manifest, id_ranges)
    train = {e.uid for e in manifest.entries if e.group_id <= 45}
    test = {e.uid for e in manifest.entries} - train
    return _finish_split("cs_second", train, test)


def split_cross_view(manifest: DatasetManifest) -> ProtocolSplit:
    fpv = [e.uid for e in manifest.entries if e.view == "fpv"]
    if fpv:
        raise ValidationError(f"cross_view accepts third-person entries only; found fpv entries e.g. {fpv[0]}")
    train = {e.uid for e in manifest.entries if e.view in ("side", "top")}
    test = {e.uid for e in manifest.entries if e.view == "front"}
    return _finish_split("cross_view", train, test)


@dataclass(frozen=True)
class PairAssignment:
    sample_id: str
    split: str  # "train" | "test"


def load_pairing(path=None) -> list:
    """Read a pairing file; ``None`` loads the default assignment bundled with the package."""
    if path is None:
        text = resources.files("mvaction.data").joinpath("tf_pairing_default.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    rec = json.loads(text)
    out = [PairAssignment(s, "train") for s in rec["train"]] + [PairAssignment(s, "test") for s in rec["test"]]
    dup = {s for s in rec["train"]} & {s for s in rec["test"]}
    if dup:
        raise PairingError(f"sample ids assigned to both sides: {sorted(dup)[:3]}")
    return out


def save_pairing(pairs, path, note=""):
    rec = {"note": note,
           "train": sorted(p.sample_id for p in pairs if p.split == "train"),
           "test": sorted(p.sample_id for p in pairs if p.split == "test")}
    Path(path).write_text(json.dumps(rec, indent=0) + "\n", encoding="utf-8")


def split_tf_combined(manifest: DatasetManifest, pairing) -> ProtocolSplit:
    """Paired third/first-person protocol; the declared assignment applies to all four views."""
    by_sample: dict = {}
    for e in manifest.entries:
        by_sample.setdefault(e.sample_id, []).append(e)
    train, test = set(), set()
    for pair in pairing:
        if pair.split not in ("train", "test"):
            raise PairingError(f"{pair.sample_id}: split must be 'train' or 'test', got {pair.split!r}")
        entries = by_sample.get(pair.sample_id, [])
        views = {e.view for e in entries}
        missing = [v for v in VIEWS if v not in views]
        if missing:
            raise PairingError(f"paired sample {pair.sample_id!r} has no entry for view(s) {missing}")
        (train if pair.split == "train" else test).update(e.uid for e in entries)
    return _finish_split("tf_combined", train, test)


def split_manifest(manifest: DatasetManifest, protocol: str, pairing=None, id_ranges=CENSUS) -> ProtocolSplit:
    if protocol == "cs_first":
        return split_cs_first(manifest, id_ranges)
    if protocol == "cs_second":
        return split_cs_second(manifest, id_ranges)
    if protocol == "cross_view":
        return split_cross_view(manifest)
    if protocol == "tf_combined":
        return split_tf_combined(manifest, load_pairing() if pairing is None else pairing)
    raise ValidationError(f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")


# ---------------------------------------------------------------------------
# dataset census mirror

CENSUS_TPV_PER_VIEW = 9882
CENSUS_FPV = 8718
CENSUS_PAIRS = 8414
CENSUS_PAIR_TEST = 2886


def census_sample_id(group: int, cls: int, rep: int) -> str:
    return f"G{group:03d}A{cls:02d}R{rep}"


def _hash_key(s: str) -> bytes:
    return hashlib.sha256(s.encode()).digest()


def _census_ids():
    every = [census_sample_id(g, c, r) for g in range(1, NUM_GROUPS + 1)
             for c in range(1, NUM_CLASSES + 1) for r in range(1, 5)]
    # deterministic thinning of the 89*30*4 grid down to the recorded totals
    ranked = sorted(every, key=_hash_key)
    tpv = sorted(ranked[len(every) - CENSUS_TPV_PER_VIEW:])
    tpv_ranked = sorted(tpv, key=lambda s: _hash_key("fpv:" + s))
    fpv = sorted(tpv_ranked[:CENSUS_FPV])
    paired = sorted(tpv_ranked[:CENSUS_PAIRS])
    return tpv, fpv, paired


def census_manifest(modality="rgb", include_fpv=True) -> DatasetManifest:
    """In-memory manifest with the recorded per-view sample counts (paths are virtual)."""
    tpv, fpv, _ = _census_ids()
    entries = []
    for sid in tpv:
        g, c = int(sid[1:4]), int(sid[5:7])
        for view in TPV_VIEWS:
            entries.append(ManifestEntry(sid, view, modality, c, g, f"census/{view}/{sid}", 0))
    if include_fpv:
        for sid in fpv:
            g, c = int(sid[1:4]), int(sid[5:7])
            entries.append(ManifestEntry(sid, "fpv", modality, c, g, f"census/fpv/{sid}", 0))
    return DatasetManifest(tuple(entries))


def default_pairing_assignment() -> list:
    """Paired samples ordered by id (group-major); the last 2,886 are held out."""
    _, _, paired = _census_ids()
    cut = len(paired) - CENSUS_PAIR_TEST
    return [PairAssignment(s, "train" if i < cut else "test") for i, s in enumerate(paired)]


PAIRING_NOTE = ("Default train/test assignment of the 8,414 paired samples, chosen by this toolkit: "
                "pairs sorted by sample id (group-major) and the last 2,886 held out for testing.")


def write_default_pairing(path=None):
    path = path or os.path.join(os.path.dirname(__file__), "data", "tf_pairing_default.json")
    save_pairing(default_pairing_assignment(), path, note=PAIRING_NOTE)
    return path


def require_views(sample_id: str, available: dict, views) -> list:
    missing = [v for v in views if v not in available]
    if missing:
        raise DataError(f"sample {sample_id!r} is missing view(s) {missing}")
    return [available[v] for v in views]
