"""Desk-scale synthetic benchmarks for both networks and the fusion ablation."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data_model import DatasetManifest, ManifestEntry, ProtocolSplit, split_cs_first
from .fusion import ScoreTable, accuracy, fuse_scores
from .imagery import BodyPartLayout, map_sequence_to_image
from .mvib import MultiStreamConfig, build_multistream, train_multiview
from .si3d import StreamConfig, train_stream, video_to_maps
from .synth import BlobConfig, SynthConfig, generate_blob_videos, synthesize_skeletons
from .training import TrainConfig

ABLATION_MODES = ("mvib", "concat", "score_fusion")


def _manifest_for(samples, modality) -> DatasetManifest:
    entries = {}
    for s in samples:
        entries[(s.sample_id, s.view)] = ManifestEntry(s.sample_id, s.view, modality, s.class_id, s.group_id,
                                                       "", s.num_frames)
    return DatasetManifest(tuple(entries.values()), root="")


@dataclass(frozen=True)
class SkeletonBenchmark:
    synth: SynthConfig = field(default_factory=SynthConfig)
    layout: BodyPartLayout = field(default_factory=lambda: BodyPartLayout(points_per_edge=1, target_frames=32))
    widths: tuple = (8, 16, 32, 64)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=60, batch_size=16, lr=0.02))
    views: tuple = ("front", "side")


def skeleton_benchmark_data(seed: int, bench: SkeletonBenchmark = SkeletonBenchmark()):
    """Pseudo-image items ``sid -> ([img per view], class)`` and the cross-subject split."""
    seqs = synthesize_skeletons(bench.synth, seed, bench.views)
    images = {}
    labels = {}
    for seq in seqs:
        images.setdefault(seq.sample_id, {})[seq.view] = map_sequence_to_image(seq, bench.layout).data
        labels[seq.sample_id] = seq.class_id
    items = {sid: ([per[v] for v in bench.views], labels[sid]) for sid, per in images.items()}
    split = split_cs_first(_manifest_for(seqs, "skeleton"))
    return items, split


def nearest_centroid_accuracy(items: dict, split) -> float:
    """Oracle: nearest class centroid on the flattened inputs of all views."""
    if isinstance(split, ProtocolSplit):
        train, test = split.sample_ids("train"), split.sample_ids("test")
    else:
        train, test = split

    def flat(sid):
        arrays, _ = items[sid]
        return np.concatenate([np.ravel(a) for a in arrays])

    tr = sorted(s for s in train if s in items)
    te = sorted(s for s in test if s in items)
    X = np.array([flat(s) for s in tr])
    y = np.array([items[s][1] for s in tr])
    classes = np.unique(y)
    cent = np.array([X[y == c].mean(axis=0) for c in classes])
    Xt = np.array([flat(s) for s in te])
    yt = np.array([items[s][1] for s in te])
    d = ((Xt[:, None, :] - cent[None]) ** 2).sum(axis=-1)
    return float(np.mean(classes[np.argmin(d, axis=1)] == yt))


def _net_config(bench: SkeletonBenchmark, num_views: int, points) -> MultiStreamConfig:
    expanded = bench.layout.joints_per_body * (2 if bench.synth.two_bodies else 1)
    return MultiStreamConfig(num_views=num_views, num_classes=bench.synth.num_classes,
                             input_shape=(bench.layout.target_frames, expanded, 3),
                             widths=bench.widths, mvib_points=points)


def run_skeleton_model(mode: str, seed: int, bench: SkeletonBenchmark = SkeletonBenchmark(), data=None):
    """Train one ablation variant; returns ``(test ScoreTable, histories)``.

    ``mvib`` interacts the views after stages 2-4, ``concat`` only joins the
    pooled per-view features, ``score_fusion`` trains one network per view and
    multiplies their class probabilities.
    """
    if mode not in ABLATION_MODES:
        raise ValueError(f"unknown ablation mode {mode!r}; choose from {ABLATION_MODES}")
    items, split = data or skeleton_benchmark_data(seed, bench)
    m = len(bench.views)
    if mode in ("mvib", "concat"):
        points = (2, 3, 4) if mode == "mvib" else ()
        net = build_multistream(_net_config(bench, m, points), seed)
        history, scores = train_multiview(net, items, split, bench.train, seed)
        return scores, [history]
    tables, histories = [], []
    for i, view in enumerate(bench.views):
        single = {sid: ([arrays[i]], label) for sid, (arrays, label) in items.items()}
        net = build_multistream(_net_config(bench, 1, ()), seed)
        history, scores = train_multiview(net, single, split, bench.train, seed)
        tables.append(ScoreTable(scores.sample_ids, scores.labels, scores.probs, {"view": view}))
        histories.append(history)
    return fuse_scores(tables, "multiplication"), histories


def run_ablation(seeds=(0, 1, 2), bench: SkeletonBenchmark = SkeletonBenchmark(), modes=ABLATION_MODES) -> dict:
    """``{mode: [accuracy per seed]}``."""
    out = {m: [] for m in modes}
    for seed in seeds:
        data = skeleton_benchmark_data(seed, bench)
        for mode in modes:
            scores, _ = run_skeleton_model(mode, seed, bench, data)
            out[mode].append(accuracy(scores))
    return out


@dataclass(frozen=True)
class BlobBenchmark:
    blobs: BlobConfig = field(default_factory=BlobConfig)
    stream: StreamConfig = field(default_factory=lambda: StreamConfig(num_classes=4, in_channels=1))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=50, batch_size=8, lr=0.05))
    dynamics: dict = field(default_factory=dict)


def blob_benchmark_data(seed: int, bench: BlobBenchmark = BlobBenchmark()):
    stream = replace(bench.stream, num_classes=bench.blobs.num_classes)
    videos = generate_blob_videos(bench.blobs, seed)
    maps = {v.sample_id: (video_to_maps(v, stream, bench.dynamics), v.class_id) for v in videos}
    split = split_cs_first(_manifest_for(videos, "depth"))
    return maps, split


def run_blob_stream(seed: int, bench: BlobBenchmark = BlobBenchmark(), data=None):
    """Train the dynamic-map stream on moving blobs; returns ``(network, history, scores)``."""
    maps, split = data or blob_benchmark_data(seed, bench)
    stream = replace(bench.stream, num_classes=bench.blobs.num_classes)
    return train_stream(None, split, stream, bench.train, seed, maps=maps)
