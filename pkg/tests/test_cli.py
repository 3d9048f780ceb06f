import hashlib
import json

import pytest

from mvaction.cli import EXIT_IO, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, main
from mvaction.config import CONFIG_ENV, DEFAULTS, load_config
from mvaction.errors import ConfigError

TINY_CONFIG = {
    "synth": {"num_classes": 2, "num_groups": 4, "repeats": 1, "frames": [8, 10], "views": ["front", "side"],
              "modalities": ["depth"], "image_size": 16},
    "imagery": {"points_per_edge": 0, "target_frames": 16},
    "dynamics": {"num_windows": 4},
    "mvib": {"widths": [4, 4, 8, 8], "mvib_points": [2, 4]},
    "stream": {"map_size": 8, "extractor_widths": [2], "hidden": 2, "dense_hidden": 4},
    "train": {"epochs": 1, "batch_size": 2},
}


def _tree(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.json"
    cfg.write_text(json.dumps(TINY_CONFIG))
    c = ["--config", str(cfg)]
    steps = {
        "gen": ["gen-synth", *c, "--out", str(root / "data")],
        "split": ["split", *c, "--manifest", str(root / "data" / "manifest.json"), "--out", str(root / "split.json")],
        "imagery": ["map-imagery", *c, "--manifest", str(root / "data" / "manifest.json"), "--out",
                    str(root / "img")],
        "mvib": ["train-mvib", *c, "--imagery", str(root / "img"), "--split", str(root / "split.json"), "--out",
                 str(root / "mvib")],
        "concat": ["train-mvib", *c, "--imagery", str(root / "img"), "--split", str(root / "split.json"),
                   "--no-mvib", "--out", str(root / "concat")],
        "dynamics": ["dynamics", *c, "--manifest", str(root / "data" / "manifest.json"), "--modality", "depth",
                     "--out", str(root / "dyn")],
        "stream": ["train-stream", *c, "--dynamics", str(root / "dyn"), "--split", str(root / "split.json"),
                   "--view", "front", "--modality", "depth", "--out", str(root / "stream")],
        "eval": ["eval", *c, "--scores", str(root / "mvib" / "scores.csv"), "--out", str(root / "eval")],
        "fuse": ["fuse", *c, "--scores", str(root / "mvib" / "scores.csv"), str(root / "concat" / "scores.csv"),
                 "--out", str(root / "fused" / "scores.csv")],
        "report": ["report", *c, "--scores", str(root / "mvib" / "scores.csv"), str(root / "fused" / "scores.csv"),
                   "--history", str(root / "mvib" / "history.csv"), "--out", str(root / "report")],
    }
    codes = {name: main(argv) for name, argv in steps.items()}
    return root, steps, codes


def test_pipeline_exit_codes(pipeline):
    _, _, codes = pipeline
    assert all(code == EXIT_OK for code in codes.values()), codes


def test_artifacts_and_hash_manifest(pipeline):
    root, _, _ = pipeline
    for sub in ("data", "img", "mvib", "concat", "dyn", "stream", "eval", "report"):
        doc = json.loads((root / sub / "outputs.json").read_text())
        assert "resolved_config.json" in doc["outputs"]
        for rel, digest in doc["outputs"].items():
            assert hashlib.sha256((root / sub / rel).read_bytes()).hexdigest() == digest
    assert (root / "mvib" / "history.csv").read_text().startswith("epoch,loss,accuracy\n")
    assert (root / "report" / "accuracy.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert (root / "eval" / "metrics.json").exists()
    resolved = json.loads((root / "mvib" / "resolved_config.json").read_text())
    assert resolved["mvib"]["widths"] == [4, 4, 8, 8]
    assert json.loads((root / "concat" / "resolved_config.json").read_text())["mvib"]["mvib_points"] == []


@pytest.mark.parametrize("step", ["gen", "imagery", "mvib", "dynamics", "stream", "report"])
def test_rerun_byte_identical(pipeline, step):
    root, steps, _ = pipeline
    out = root / steps[step][steps[step].index("--out") + 1]
    before = _tree(out)
    assert main(steps[step]) == EXIT_OK
    assert _tree(out) == before


def test_split_census_22_test_groups(tmp_path):
    assert main(["gen-synth", "--kind", "census", "--out", str(tmp_path / "c")]) == EXIT_OK
    assert main(["split", "--manifest", str(tmp_path / "c" / "manifest.json"), "--protocol", "cs_first",
                 "--out", str(tmp_path / "s.json")]) == EXIT_OK
    doc = json.loads((tmp_path / "s.json").read_text())
    groups = {int(u[1:4]) for u in doc["test_ids"]}
    assert groups == set(range(4, 89, 4)) and len(groups) == 22


def test_split_cross_view_census(tmp_path):
    main(["gen-synth", "--kind", "census", "--out", str(tmp_path / "c")])
    assert main(["split", "--manifest", str(tmp_path / "c" / "manifest.json"), "--protocol", "cross_view",
                 "--views", "front", "side", "top", "--out", str(tmp_path / "s.json")]) == EXIT_OK
    doc = json.loads((tmp_path / "s.json").read_text())
    assert (len(doc["train_ids"]), len(doc["test_ids"])) == (19764, 9882)


def test_gradcheck_mvib(tmp_path, capsys):
    assert main(["gradcheck", "--target", "mvib", "--out", str(tmp_path / "g")]) == EXIT_OK
    assert "PASS" in capsys.readouterr().out
    lines = (tmp_path / "g" / "gradcheck.csv").read_text().splitlines()
    assert lines[0] == "check,status,max_rel_error,tolerance"
    assert lines[1].startswith("mvib_block,pass,") and lines[1].endswith(",1e-04")


def test_gradcheck_failure_is_numeric_exit(tmp_path):
    # an impossible tolerance makes the finite-difference comparison fail
    assert main(["gradcheck", "--target", "mvib", "--tolerance", "1e-30"]) == EXIT_NUMERIC


def test_exit_codes_for_errors(tmp_path, capsys):
    assert main(["eval", "--scores", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "e")]) == EXIT_IO
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"trian": {}}))
    assert main(["gen-synth", "--config", str(bad), "--out", str(tmp_path / "x")]) == EXIT_VALIDATION
    assert "unknown config key" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["split", "--protocol", "random"])
    assert exc.value.code == EXIT_USAGE


def test_config_precedence(tmp_path, monkeypatch):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"train": {"lr": 0.2}, "seed": 4}))
    monkeypatch.setenv(CONFIG_ENV, str(path))
    cfg = load_config(overrides={"seed": 9})
    assert cfg["train"]["lr"] == 0.2 and cfg["seed"] == 9
    assert cfg["train"]["epochs"] == DEFAULTS["train"]["epochs"]
    with pytest.raises(ConfigError, match="train.'lr2'"):
        load_config(path, {"train": {"lr2": 1}})
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(path)
