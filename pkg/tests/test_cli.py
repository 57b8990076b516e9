import json
from pathlib import Path

import pytest

from csidigits.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "spec.json"
    spec.write_text(json.dumps({"repetitions": 4}))
    assert run("synth", "--spec", spec, "--out", root / "syn", "--quiet") == EXIT_OK
    assert run("segment", root / "syn" / "csi.csv", "--truth", root / "syn" / "truth.csv",
               "--test-fraction", 0.25, "--out", root / "seg", "--quiet") == EXIT_OK
    return root


def pipeline(root: Path, seg: Path, seed: int) -> dict[str, bytes]:
    out = root / f"run{seed}_{len(list(root.iterdir()))}"
    steps = [
        ("train-ae", seg / "train", "--epochs", 2),
        ("train", seg / "train", "--epochs", 2, "--ae", out / "ae.ckpt"),
        ("eval", out / "tsnet.ckpt", seg / "test", "--ae", out / "ae.ckpt", "--topn", 11, "--per-class"),
    ]
    for cmd, *rest in steps:
        assert run(cmd, *rest, "--seed", seed, "--out", out, "--quiet") == EXIT_OK
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_synth_outputs(synth_dir):
    names = sorted(p.name for p in (synth_dir / "syn").iterdir())
    assert names == ["csi.csv", "spec.json", "truth.csv"]
    header = (synth_dir / "syn" / "truth.csv").read_text().splitlines()[0]
    assert header == "window,label,class,t_start_us"


def test_segment_split(synth_dir):
    train = (synth_dir / "seg" / "train" / "manifest.csv").read_text().splitlines()
    test = (synth_dir / "seg" / "test" / "manifest.csv").read_text().splitlines()
    assert len(train) - 1 == 33 and len(test) - 1 == 11


def test_pipeline_is_byte_reproducible(synth_dir):
    a = pipeline(synth_dir, synth_dir / "seg", seed=5)
    b = pipeline(synth_dir, synth_dir / "seg", seed=5)
    assert set(a) == {"ae.ckpt", "ae_history.csv", "tsnet.ckpt", "history.csv", "topn.csv"}
    assert a == b
    lines = a["topn.csv"].decode().splitlines()
    assert lines[0] == "class," + ",".join(f"P{n}" for n in range(1, 12))
    assert lines[1].startswith("all,") and lines[1].endswith(",1.0")


def test_different_seed_changes_checkpoint(synth_dir):
    a = pipeline(synth_dir, synth_dir / "seg", seed=1)
    b = pipeline(synth_dir, synth_dir / "seg", seed=2)
    assert a["tsnet.ckpt"] != b["tsnet.ckpt"]


def test_analyze_tables(synth_dir, tmp_path):
    assert run("analyze", synth_dir / "seg" / "train", "--dtw", "--out", tmp_path, "--quiet") == EXIT_OK
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["class_similarity.csv", "spatial_corr.csv", "spatial_profile.csv",
                     "temporal_corr.csv", "temporal_profile.csv"]
    rows = (tmp_path / "temporal_corr.csv").read_text().splitlines()
    assert len(rows) == 57


def test_convert_selects_subcarriers(synth_dir, tmp_path):
    assert run("convert", synth_dir / "syn" / "csi.csv", "--out", tmp_path, "--quiet") == EXIT_OK
    header = (tmp_path / "csi.csv").read_text().splitlines()[0].split(",")
    assert len(header) == 2 + 56
    assert json.loads((tmp_path / "layout.json").read_text())["retained_count"] == 56


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--no-such-flag"])
    assert exc.value.code == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_unknown_config_key_rejected(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train": {"epochz": 3}}))
    assert run("synth", "--config", cfg, "--out", tmp_path / "o", "--quiet") == EXIT_USAGE
    cfg.write_text(json.dumps({"trainer": {}}))
    assert run("synth", "--config", cfg, "--out", tmp_path / "o", "--quiet") == EXIT_USAGE


def test_config_values_applied(synth_dir, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train": {"epochs": 1}, "tsnet": {"lstm_hidden": 8}}))
    assert run("train", synth_dir / "seg" / "train", "--config", cfg, "--out", tmp_path / "o", "--quiet") == EXIT_OK
    assert len((tmp_path / "o" / "history.csv").read_text().splitlines()) == 2


def test_global_flags_before_subcommand(tmp_path):
    assert run("--seed", 7, "--out", tmp_path / "a", "--quiet", "synth", "--spec", _spec(tmp_path)) == EXIT_OK
    assert json.loads((tmp_path / "a" / "spec.json").read_text())["seed"] == 7


def _spec(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"repetitions": 1}))
    return p


def test_missing_input_is_data_error(tmp_path):
    assert run("segment", tmp_path / "nope.csv", "--out", tmp_path, "--quiet") == EXIT_DATA


def test_shape_mismatch_is_data_error(synth_dir, tmp_path):
    out = tmp_path / "ts"
    assert run("train", synth_dir / "seg" / "train", "--epochs", 1, "--out", out, "--quiet") == EXIT_OK
    spec = tmp_path / "narrow.json"
    spec.write_text(json.dumps({"repetitions": 1, "subcarriers": 20}))
    run("synth", "--spec", spec, "--out", tmp_path / "syn", "--quiet")
    run("segment", tmp_path / "syn" / "csi.csv", "--truth", tmp_path / "syn" / "truth.csv",
        "--out", tmp_path / "seg", "--quiet")
    code = run("eval", out / "tsnet.ckpt", tmp_path / "seg" / "samples", "--out", tmp_path / "ev", "--quiet")
    assert code == EXIT_DATA


def test_divergence_is_numeric_failure(synth_dir, tmp_path):
    code = run("train-ae", synth_dir / "seg" / "train", "--epochs", 2, "--lr", 1e30, "--out", tmp_path, "--quiet")
    assert code == EXIT_NUMERIC


def test_writes_only_inside_out(synth_dir, tmp_path):
    before = sorted(p.name for p in synth_dir.iterdir())
    run("train", synth_dir / "seg" / "train", "--epochs", 1, "--out", tmp_path / "only", "--quiet")
    assert sorted(p.name for p in synth_dir.iterdir()) == before
    assert sorted(p.name for p in (tmp_path / "only").iterdir()) == ["history.csv", "tsnet.ckpt"]
