"""Command-line entry point: ``mvaction <subcommand> ...``.

Exit codes: 0 success, 2 usage, 3 validation/config/data errors, 4 I/O
errors, 5 numeric failures (including a failed gradient check).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import warnings
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import load_config, set_path, write_resolved
from .data_model import (
    DatasetManifest, ProtocolSplit, census_manifest, load_pairing, load_skeleton, load_video, split_manifest,
)
from .errors import ConfigError, ContractViolation, DataError, NumericError, ValidationError

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4, 5


# ---------------------------------------------------------------------------
# helpers

def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_outputs_manifest(out_dir: Path, files, command: str) -> Path:
    """``outputs.json``: relative path -> sha256 for every file the run produced."""
    out_dir = Path(out_dir)
    rel = sorted({Path(f).resolve().relative_to(out_dir.resolve()).as_posix() for f in files})
    doc = {"command": command, "version": __version__,
           "outputs": {r: _sha256(out_dir / r) for r in rel}}
    path = out_dir / "outputs.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _finish(args, cfg, out_dir: Path, files):
    files = list(files) + [write_resolved(cfg, out_dir)]
    write_outputs_manifest(out_dir, files, args.command)


def _num_classes(cfg, labels) -> int:
    return int(cfg["num_classes"] or max(labels))


def _load_split(path) -> ProtocolSplit:
    return ProtocolSplit.load(path)


def _write_index(path, rows, header):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_index(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _dynamics_opts(cfg) -> dict:
    d = dict(cfg["dynamics"])
    return {k: d[k] for k in ("num_windows", "threshold", "solver", "C", "epsilon", "smoothing", "max_iter", "tol")}


def _train_config(cfg):
    from .training import TrainConfig
    return TrainConfig(**cfg["train"])


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_synth(args, cfg):
    from .synth import BlobConfig, SynthConfig, generate_synthetic_dataset, write_blob_dataset
    out = _out_dir(args.out)
    s = cfg["synth"]
    kind = s["kind"]
    if kind == "skeleton":
        keys = ("num_classes", "num_groups", "repeats", "frames", "fps", "views", "modalities", "image_size",
                "noise", "two_bodies")
        manifest = generate_synthetic_dataset(SynthConfig.from_dict({k: s[k] for k in keys}), cfg["seed"], out)
    elif kind == "blobs":
        bc = BlobConfig(num_classes=s["blob_classes"], num_groups=s["num_groups"], repeats=s["blob_repeats"],
                        frames=tuple(s["blob_frames"]), image_size=s["image_size"], noise=s["blob_noise"],
                        sigma=s["blob_sigma"])
        manifest = write_blob_dataset(bc, cfg["seed"], out)
    elif kind == "census":
        manifest = census_manifest()
        manifest.save(out / "manifest.json")
    else:
        raise ConfigError(f"unknown synth kind {kind!r}; choose skeleton, blobs or census")
    files = [out / "manifest.json"] + [out / e.path for e in manifest.entries if kind != "census"]
    if (out / "synth_config.json").exists():
        files.append(out / "synth_config.json")
    _finish(args, cfg, out, files)
    print(f"{kind}: {len(manifest)} manifest entries -> {out / 'manifest.json'}")


def cmd_split(args, cfg):
    manifest = DatasetManifest.load(args.manifest, check_paths=False)
    if args.views:
        manifest = DatasetManifest(tuple(e for e in manifest.entries if e.view in args.views), manifest.root)
    pairing = load_pairing(args.pairing) if args.pairing else None
    split = split_manifest(manifest, cfg["protocol"], pairing)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    split.save(out)
    by_uid = {e.uid: e for e in manifest.entries}
    test_groups = sorted({by_uid[u].group_id for u in split.test_ids})
    _finish(args, cfg, out.parent, [out])
    print(f"{split.protocol}: train {len(split.train_ids)} / test {len(split.test_ids)} entries; "
          f"{len(test_groups)} test groups")


def cmd_map_imagery(args, cfg):
    from .imagery import BodyPartLayout, map_sequence_to_image, save_pseudo_image
    manifest = DatasetManifest.load(args.manifest)
    layout = BodyPartLayout(points_per_edge=cfg["imagery"]["points_per_edge"],
                            target_frames=cfg["imagery"]["target_frames"])
    out = _out_dir(args.out)
    rows, files = [], []
    for e in manifest.select(view=args.view, modality="skeleton"):
        img = map_sequence_to_image(load_skeleton(manifest, e), layout)
        rel = Path(e.view) / f"{e.sample_id}.bin"
        (out / rel).parent.mkdir(parents=True, exist_ok=True)
        save_pseudo_image(img, out / rel)
        files.append(out / rel)
        rows.append([e.sample_id, e.view, e.class_id, e.group_id, rel.as_posix()] + list(img.data.shape[:2]))
    if not rows:
        raise DataError(f"manifest has no skeleton entries{' for view ' + args.view if args.view else ''}")
    _write_index(out / "imagery_index.csv", rows,
                 ["sample_id", "view", "class_id", "group_id", "path", "frames", "joints"])
    _finish(args, cfg, out, files + [out / "imagery_index.csv"])
    print(f"mapped {len(rows)} skeleton sequences -> {out}")


def cmd_dynamics(args, cfg):
    from .imagery import write_blocks
    from .rank_pooling import encode_video_dynamics, stack_maps
    manifest = DatasetManifest.load(args.manifest)
    out = _out_dir(args.out)
    opts = _dynamics_opts(cfg)
    rows, files, unconverged = [], [], 0
    entries = [e for e in manifest.select(view=args.view, modality=args.modality) if e.modality != "skeleton"]
    for e in entries:
        maps = encode_video_dynamics(load_video(manifest, e), seed=cfg["seed"], **opts)
        unconverged += sum(not m.converged for m in maps)
        rel = Path(e.view) / e.modality / f"{e.sample_id}.bin"
        (out / rel).parent.mkdir(parents=True, exist_ok=True)
        write_blocks(out / rel, list(stack_maps(maps)))
        files.append(out / rel)
        rows.append([e.sample_id, e.view, e.modality, e.class_id, e.group_id, rel.as_posix(), len(maps)])
    if not rows:
        raise DataError("manifest has no matching video entries")
    _write_index(out / "dynamics_index.csv", rows,
                 ["sample_id", "view", "modality", "class_id", "group_id", "path", "num_maps"])
    _finish(args, cfg, out, files + [out / "dynamics_index.csv"])
    note = f" ({unconverged} windows hit max_iter)" if unconverged else ""
    print(f"encoded {len(rows)} videos x {opts['num_windows']} dynamic maps -> {out}{note}")


def _load_imagery(index_dir, views):
    from .imagery import load_pseudo_image
    index_dir = Path(index_dir)
    per, labels = {}, {}
    for row in _read_index(index_dir / "imagery_index.csv"):
        per.setdefault(row["sample_id"], {})[row["view"]] = load_pseudo_image(index_dir / row["path"])
        labels[row["sample_id"]] = int(row["class_id"])
    items = {}
    for sid, got in per.items():
        items[sid] = ([got.get(v) for v in views], labels[sid])
    return items, labels


def cmd_train_mvib(args, cfg):
    from .mvib import MultiStreamConfig, build_multistream, train_multiview
    views = list(cfg["mvib"]["views"])
    items, labels = _load_imagery(args.imagery, views)
    split = _load_split(args.split)
    wanted = split.sample_ids("train") | split.sample_ids("test")
    items = {sid: v for sid, v in items.items() if sid in wanted}
    missing = sorted(wanted - set(items))
    if missing:
        raise DataError(f"sample {missing[0]!r} has no pseudo-image ({len(missing)} split samples missing)")
    first = next(iter(items.values()))[0]
    sample = next(a for a in first if a is not None)
    mc = MultiStreamConfig(num_views=len(views), num_classes=_num_classes(cfg, labels.values()),
                           input_shape=tuple(sample.shape), widths=tuple(cfg["mvib"]["widths"]),
                           mvib_points=tuple(cfg["mvib"]["mvib_points"]), reduction=cfg["mvib"]["reduction"])
    net = build_multistream(mc, cfg["seed"])
    history, scores = train_multiview(net, items, split, _train_config(cfg), cfg["seed"])
    out = _out_dir(args.out)
    net.save(out / "model.mvck")
    model_doc = {"kind": "multistream", "views": views, **{k: list(v) if isinstance(v, tuple) else v
                                                           for k, v in mc.__dict__.items()}}
    (out / "model.json").write_text(json.dumps(model_doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    history.save_csv(out / "history.csv")
    files = [out / "model.mvck", out / "model.json", out / "history.csv"]
    if scores is not None:
        scores.save_csv(out / "scores.csv")
        files.append(out / "scores.csv")
    _finish(args, cfg, out, files)
    acc = history.accuracy[-1]
    print(f"trained {net.num_parameters()} parameters for {len(history.epochs)} epochs; "
          f"final loss {history.loss[-1]:.4f}" + (f", test accuracy {acc:.4f}" if acc is not None else ""))


def _load_dynamics(index_dir, view, modality):
    from .imagery import read_blocks
    index_dir = Path(index_dir)
    maps = {}
    for row in _read_index(index_dir / "dynamics_index.csv"):
        if row["view"] == view and row["modality"] == modality:
            maps[row["sample_id"]] = (np.stack(read_blocks(index_dir / row["path"])), int(row["class_id"]))
    return maps


def cmd_train_stream(args, cfg):
    from .si3d import StreamConfig, resize_maps, train_stream
    split = _load_split(args.split)
    s = cfg["stream"]
    if args.dynamics:
        maps = _load_dynamics(args.dynamics, args.view, args.modality)
        videos = None
        labels = [lab for _, lab in maps.values()]
        channels = next(iter(maps.values()))[0].shape[-1] if maps else 1
    else:
        if not args.manifest:
            raise ConfigError("train-stream needs --dynamics or --manifest")
        manifest = DatasetManifest.load(args.manifest)
        videos = [load_video(manifest, e) for e in manifest.select(view=args.view, modality=args.modality)]
        maps = None
        labels = [v.class_id for v in videos]
        channels = videos[0].frames.shape[-1] if videos else 1
    if not labels:
        raise DataError(f"no {args.modality} data for view {args.view}")
    sc = StreamConfig(num_classes=_num_classes(cfg, labels), in_channels=int(channels), map_size=s["map_size"],
                      num_maps=cfg["dynamics"]["num_windows"], extractor_widths=tuple(s["extractor_widths"]),
                      extractor_kernel=tuple(s["extractor_kernel"]), convlstm_layers=s["convlstm_layers"],
                      hidden=s["hidden"], dense_hidden=s["dense_hidden"])
    if maps is not None:
        maps = {sid: (resize_maps(m, sc.map_size), lab) for sid, (m, lab) in maps.items()}
    net, history, scores = train_stream(videos, split, sc, _train_config(cfg), cfg["seed"],
                                        dynamics=_dynamics_opts(cfg), view=args.view, modality=args.modality,
                                        maps=maps)
    out = _out_dir(args.out)
    net.save(out / "model.mvck")
    model_doc = {"kind": "si3d_convlstm", "view": args.view, "modality": args.modality,
                 **{k: list(v) if isinstance(v, tuple) else v for k, v in sc.__dict__.items()}}
    (out / "model.json").write_text(json.dumps(model_doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    history.save_csv(out / "history.csv")
    files = [out / "model.mvck", out / "model.json", out / "history.csv"]
    if scores is not None:
        scores.save_csv(out / "scores.csv")
        files.append(out / "scores.csv")
    _finish(args, cfg, out, files)
    acc = history.accuracy[-1]
    print(f"trained stream ({args.view}/{args.modality}) for {len(history.epochs)} epochs; "
          f"final loss {history.loss[-1]:.4f}" + (f", test accuracy {acc:.4f}" if acc is not None else ""))


def _evaluate(table, out: Path, prefix: str, num_classes=None):
    from .fusion import accuracy, confusion_matrix, render_heat_table, save_confusion_csv, top_reports
    acc = accuracy(table)
    cm = confusion_matrix(table, num_classes)
    save_confusion_csv(cm, out / f"{prefix}confusion.csv")
    (out / f"{prefix}confusion.txt").write_text(render_heat_table(cm), encoding="utf-8")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        accurate, confused = top_reports(cm, 5)
    rows = [["accurate", rank, c, "", f"{v:.6f}"] for rank, (c, v) in enumerate(accurate, 1)]
    rows += [["confused", rank, a, b, f"{v:.6f}"] for rank, (a, b, v) in enumerate(confused, 1)]
    _write_index(out / f"{prefix}top5.csv", rows, ["kind", "rank", "true_class", "predicted_class", "value"])
    files = [out / f"{prefix}confusion.csv", out / f"{prefix}confusion.txt", out / f"{prefix}top5.csv"]
    return acc, cm, files


def cmd_eval(args, cfg):
    from .fusion import ScoreTable
    table = ScoreTable.load_csv(args.scores)
    out = _out_dir(args.out)
    acc, cm, files = _evaluate(table, out, "", cfg["num_classes"])
    metrics = {"accuracy": acc, "samples": len(table), "classes": int(cm.matrix.shape[0]),
               "empty_classes": [int(c) + 1 for c in np.flatnonzero(cm.empty_rows)]}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    _finish(args, cfg, out, files + [out / "metrics.json"])
    print(f"accuracy {acc:.4f} over {len(table)} samples")


def cmd_fuse(args, cfg):
    from .fusion import ScoreTable, accuracy, fuse_scores
    tables = [ScoreTable.load_csv(p) for p in args.scores]
    fused = fuse_scores(tables, cfg["fusion"]["mode"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fused.save_csv(out)
    _finish(args, cfg, out.parent, [out])
    print(f"{cfg['fusion']['mode']} fusion of {len(tables)} tables: accuracy {accuracy(fused):.4f}")


def cmd_gradcheck(args, cfg):
    from .gradcheck_suites import run_suite
    results = run_suite(args.target, cfg["seed"], cfg["gradcheck"]["tolerance"], cfg["gradcheck"]["step"])
    failed = 0
    rows = []
    for name, report in results:
        print(f"{name:<24} {report.summary()}")
        failed += not report.passed
        rows.append([name, "pass" if report.passed else "fail", f"{report.max_rel_error:.6e}",
                     f"{report.tolerance:.0e}"])
    if args.out:
        out = _out_dir(args.out)
        _write_index(out / "gradcheck.csv", rows, ["check", "status", "max_rel_error", "tolerance"])
        _finish(args, cfg, out, [out / "gradcheck.csv"])
    print(f"{len(results) - failed}/{len(results)} gradient checks passed")
    if failed:
        raise NumericError(f"{failed} gradient check(s) failed")


def cmd_report(args, cfg):
    from .fusion import ScoreTable
    from .plotting import plot_accuracy_bars, plot_confusion, plot_history
    from .training import TrainHistory
    out = _out_dir(args.out)
    files, summary = [], []
    for path in args.scores:
        name = Path(path).parent.name if Path(path).stem == "scores" else Path(path).stem
        table = ScoreTable.load_csv(path)
        acc, cm, f = _evaluate(table, out, f"{name}_", cfg["num_classes"])
        plot_confusion(cm, out / f"{name}_confusion.png", title=f"{name} (accuracy {acc:.3f})")
        files += f + [out / f"{name}_confusion.png"]
        summary.append([name, len(table), f"{acc:.6f}"])
    for path in args.history or []:
        name = Path(path).parent.name if Path(path).stem == "history" else Path(path).stem
        plot_history(TrainHistory.load_csv(path), out / f"{name}_history.png", title=name)
        files.append(out / f"{name}_history.png")
    _write_index(out / "summary.csv", summary, ["source", "samples", "accuracy"])
    plot_accuracy_bars([(r[0], float(r[2])) for r in summary], out / "accuracy.png")
    _finish(args, cfg, out, files + [out / "summary.csv", out / "accuracy.png"])
    for row in summary:
        print(f"{row[0]:<24} n={row[1]:<6} accuracy {row[2]}")


# ---------------------------------------------------------------------------
# argument parsing

def _common(p):
    p.add_argument("--config", help="JSON run config (default: $MVACTION_CONFIG)")
    p.add_argument("--seed", type=int, help="overrides config 'seed'")
    p.add_argument("--threads", type=int, help="BLAS threads; 1 (default) is the bit-exact reference mode")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvaction", description="Multi-view action recognition pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a synthetic dataset and its manifest")
    _common(p)
    p.add_argument("--kind", choices=("skeleton", "blobs", "census"), help="overrides synth.kind")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth, flag_map={"kind": "synth.kind"})

    p = sub.add_parser("split", help="build a protocol split from a manifest")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--protocol", choices=("cs_first", "cs_second", "cross_view", "tf_combined"))
    p.add_argument("--pairing", help="pairing file for tf_combined (default: bundled assignment)")
    p.add_argument("--views", nargs="+", choices=("front", "side", "top", "fpv"),
                   help="keep only these views' entries before splitting")
    p.add_argument("--out", required=True, help="split JSON path")
    p.set_defaults(func=cmd_split, flag_map={"protocol": "protocol"})

    p = sub.add_parser("map-imagery", help="skeleton sequences -> pseudo-images")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--view")
    p.add_argument("--points-per-edge", type=int)
    p.add_argument("--target-frames", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_map_imagery, flag_map={"points_per_edge": "imagery.points_per_edge",
                                                   "target_frames": "imagery.target_frames"})

    p = sub.add_parser("dynamics", help="videos -> rank-pooled dynamic maps")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--view")
    p.add_argument("--modality", choices=("rgb", "depth"))
    p.add_argument("--num-windows", type=int)
    p.add_argument("--solver", choices=("svr", "ranksvm_subgrad"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dynamics, flag_map={"num_windows": "dynamics.num_windows",
                                                "solver": "dynamics.solver"})

    train_flags = {"epochs": "train.epochs", "lr": "train.lr", "batch_size": "train.batch_size"}

    p = sub.add_parser("train-mvib", help="train the multi-view skeleton network")
    _common(p)
    p.add_argument("--imagery", required=True, help="map-imagery output directory")
    p.add_argument("--split", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--no-mvib", action="store_true", help="concatenation-only ablation")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_mvib, flag_map=train_flags)

    p = sub.add_parser("train-stream", help="train one dynamic-map stream")
    _common(p)
    p.add_argument("--dynamics", help="dynamics output directory")
    p.add_argument("--manifest", help="compute maps on the fly from this manifest")
    p.add_argument("--split", required=True)
    p.add_argument("--view", required=True)
    p.add_argument("--modality", required=True, choices=("rgb", "depth"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_stream, flag_map=train_flags)

    p = sub.add_parser("eval", help="accuracy, confusion matrix and top-5 reports of a score table")
    _common(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval, flag_map={})

    p = sub.add_parser("fuse", help="late fusion of score tables")
    _common(p)
    p.add_argument("--scores", nargs="+", required=True)
    p.add_argument("--mode", choices=("addition", "multiplication", "maximum"))
    p.add_argument("--out", required=True, help="fused score-table CSV")
    p.set_defaults(func=cmd_fuse, flag_map={"mode": "fusion.mode"})

    p = sub.add_parser("gradcheck", help="finite-difference verification of the autograd engine")
    _common(p)
    p.add_argument("--target", default="all", choices=("ops", "mvib", "convlstm", "si3d", "all"))
    p.add_argument("--tolerance", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck, flag_map={"tolerance": "gradcheck.tolerance"})

    p = sub.add_parser("report", help="evaluation tables plus PNG figures")
    _common(p)
    p.add_argument("--scores", nargs="+", required=True)
    p.add_argument("--history", nargs="*")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report, flag_map={})
    return parser


def resolve_config(args) -> dict:
    overrides = {}
    for flag, dotted in args.flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            set_path(overrides, dotted, value)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if getattr(args, "no_mvib", False):
        set_path(overrides, "mvib.mvib_points", [])
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        with threadpool_limits(limits=int(cfg["threads"])):
            args.func(args, cfg)
    except (ValidationError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
