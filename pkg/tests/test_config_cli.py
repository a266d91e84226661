import json

import numpy as np
import pytest
import yaml

from primassembly.cli import EXIT_NOT_FOUND, EXIT_OK, EXIT_PARSE, EXIT_USAGE, EXIT_VALIDATION, main, split_overrides
from primassembly.config import RunConfig, dump_config, parse_override, resolve_config
from primassembly.data import read_dataset, write_assembly_json, write_points_file
from primassembly.exceptions import ConfigError
from primassembly.geometry import Assembly, Primitive, canonicalize, is_canonical

TINY_MODEL = [
    "--model.layers", "1", "--model.hidden_size", "32", "--model.attention_heads", "2",
    "--model.condition_tokens", "8", "--model.condition_points", "64", "--model.max_sequence", "8",
]


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    lines = (captured.out if code == EXIT_OK else captured.err).strip().splitlines()
    return code, json.loads(lines[-1])


# -- config -------------------------------------------------------------------------------
def test_defaults():
    cfg = resolve_config()
    assert isinstance(cfg, RunConfig)
    assert cfg.model.hidden_size == 192 and cfg.train.learning_rate == 1e-3


def test_precedence(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"train": {"learning_rate": 0.01, "batch_size": 4}, "model": {"layers": 2}}))
    cfg = resolve_config(path, [("train.learning_rate", "3e-4")])
    assert cfg.train.learning_rate == pytest.approx(3e-4)
    assert cfg.train.batch_size == 4 and cfg.model.layers == 2
    assert cfg.model.hidden_size == 192


def test_json_config_and_tuple_fields(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"data": {"generator": {"count_range": [2, 3]}}}))
    assert resolve_config(path).data.generator.count_range == (2, 3)


def test_unknown_and_invalid_keys(tmp_path):
    with pytest.raises(ConfigError, match="train.lr"):
        resolve_config(overrides=[("train.lr", "1")])
    with pytest.raises(ConfigError):
        resolve_config(overrides=[("model.layers", "0")])
    with pytest.raises(ConfigError):
        resolve_config(overrides=[("model", "3")])
    bad = tmp_path / "bad.yaml"
    bad.write_text("train: [1, 2")
    with pytest.raises(ConfigError):
        resolve_config(bad)


def test_parse_override():
    assert parse_override("a.b.c", "true") == {"a": {"b": {"c": True}}}
    assert parse_override("x", "abc") == {"x": "abc"}
    with pytest.raises(ConfigError):
        parse_override("a..b", "1")


def test_dump_roundtrip(tmp_path):
    cfg = resolve_config(overrides=[("seed", "7"), ("sampling.mode", "top-k")])
    dump_config(cfg, tmp_path / "c.yaml")
    again = resolve_config(tmp_path / "c.yaml")
    assert again.to_dict() == cfg.to_dict()


def test_split_overrides():
    rest, ov = split_overrides(["train", "--train.epochs", "3", "--model.layers=2", "--data", "x"])
    assert rest == ["train", "--data", "x"]
    assert ov == [("train.epochs", "3"), ("model.layers", "2")]


# -- commands -------------------------------------------------------------------------------
def test_full_pipeline(tmp_path, capsys):
    data_dir = tmp_path / "data"
    code, out = _run(capsys, "gen-data", "--out", data_dir, "--seed", 3, "--data.count", 3,
                     "--data.n_points", 256, "--data.generator.count_range", "[1, 2]")
    assert code == EXIT_OK and out["records"] == 3
    records = read_dataset(data_dir / "dataset.jsonl")
    assert len(records) == 3
    assert yaml.safe_load((data_dir / "config.yaml").read_text())["data"]["generator"]["seed"] == 3

    train_dir = tmp_path / "train"
    code, out = _run(capsys, "train", "--out", train_dir, "--data", data_dir / "dataset.jsonl",
                     *TINY_MODEL, "--train.max_steps", 2, "--train.batch_size", 2)
    assert code == EXIT_OK and out["steps"] == 2
    assert (train_dir / "model.pt").exists()
    assert len((train_dir / "train_log.csv").read_text().strip().splitlines()) == 3

    points = []
    for r in records:
        f = tmp_path / f"{r.id}.npy"
        write_points_file(f, r.points.points)
        points.append(f)
    pred_dir = tmp_path / "pred"
    code, out = _run(capsys, "infer", "--out", pred_dir, "--checkpoint", train_dir / "model.pt",
                     "--sampling.max_len", 3, "--sampling.eos_threshold", 0.999, *points)
    assert code == EXIT_OK and len(out["assemblies"]) == 3
    pred = json.loads((pred_dir / f"{records[0].id}.json").read_text())
    assert "eos_probabilities" in pred["diagnostics"]

    eval_dir = tmp_path / "eval"
    code, out = _run(capsys, "eval", "--out", eval_dir, "--eval.n_points", 500, pred_dir, data_dir / "dataset.jsonl")
    assert code == EXIT_OK, out
    assert out["count"] == 3 and 0.0 <= out["voxel_iou"] <= 1.0
    assert (eval_dir / "report.csv").exists()
    assert len(json.loads((eval_dir / "report.json").read_text())["samples"]) == 3


def test_canon_and_export(tmp_path, capsys):
    p = Primitive(0, (0.2, 0.5, 0.3), (0.4, 2.5, -1.0), (0.1, 0.0, 0.0))
    src = tmp_path / "in" / "a.json"
    write_assembly_json(src, Assembly((p,)), record_id="a")
    code, _ = _run(capsys, "canon", "--out", tmp_path / "c1", src)
    assert code == EXIT_OK
    canon_file = tmp_path / "c1" / "a.json"
    prims = json.loads(canon_file.read_text())["primitives"]
    assert is_canonical(Primitive.from_dict(prims[0]))
    # canonical input comes back byte-identical
    code, _ = _run(capsys, "canon", "--out", tmp_path / "c2", canon_file)
    assert code == EXIT_OK
    assert (tmp_path / "c2" / "a.json").read_bytes() == canon_file.read_bytes()

    cube = tmp_path / "cube.json"
    write_assembly_json(cube, Assembly((Primitive(0, (0.5, 0.5, 0.5), (0, 0, 0), (0, 0, 0)),)), record_id="cube")
    code, out = _run(capsys, "export-mesh", "--out", tmp_path / "m", cube)
    assert code == EXIT_OK
    lines = (tmp_path / "m" / "cube.obj").read_text().splitlines()
    assert lines[0] == "g prim_0_cuboid"
    verts = [l for l in lines if l.startswith("v ")]
    faces = [l for l in lines if l.startswith("f ")]
    assert len(verts) == 8 and len(faces) == 12
    assert np.allclose(np.abs([list(map(float, v.split()[1:])) for v in verts]), 0.5)


def test_env_out_dir(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("PRIMASSEMBLY_OUT", str(tmp_path / "envout"))
    code, _ = _run(capsys, "gen-data", "--data.count", 1, "--data.n_points", 64)
    assert code == EXIT_OK
    assert (tmp_path / "envout" / "dataset.jsonl").exists()
    assert (tmp_path / "envout" / "config.yaml").exists()


def test_exit_codes(tmp_path, capsys):
    code, err = _run(capsys, "canon", "--out", tmp_path, tmp_path / "missing.json")
    assert code == EXIT_NOT_FOUND and err["error"] == "file_not_found"
    code, err = _run(capsys, "gen-data", "--out", tmp_path, "--train.nope", 1)
    assert code == EXIT_VALIDATION and err["exit_code"] == EXIT_VALIDATION
    code, err = _run(capsys, "frobnicate")
    assert code == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code, err = _run(capsys, "canon", "--out", tmp_path, bad)
    assert code == EXIT_PARSE
    code, err = _run(capsys, "train", "--out", tmp_path)
    assert code == EXIT_USAGE
