import json

import pytest

from sg2scene.cli import main
from sg2scene.scene_model import graph_from_dict, save_scene, validate_graph
from sg2scene.shape.tsdf import save_tsdf
from sg2scene.synthetic import micro_dataset

from conftest import TINY


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Annotated scenes, a TSDF library, a tiny config and a trained checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    scenes, lib = micro_dataset(2, resolution=8)
    raw = root / "raw"
    raw.mkdir()
    for k, s in enumerate(scenes):
        save_scene(s, raw / f"scene{k}.json")
    for name, grid in lib.items():
        save_tsdf(grid, root / "shapes" / name)
    (root / "config.json").write_text(json.dumps(TINY.replace(steps=2).to_dict()))
    assert main(["annotate", "--scenes", str(raw), "--out", str(root / "data")]) == 0
    assert main([
        "train", "--data", str(root / "data"), "--shapes", str(root / "shapes"),
        "--out", str(root / "ckpt"), "--config", str(root / "config.json"),
    ]) == 0
    graph = {
        "room_type": "bedroom",
        "nodes": [{"id": 0, "class": "bed"}, {"id": 1, "class": "nightstand"}, {"id": 2, "class": "lamp"}],
        "edges": [
            {"src": 1, "dst": 0, "predicate": "shorter than"},
            {"src": 1, "dst": 0, "predicate": "left of"},
            {"src": 2, "dst": 1, "predicate": "standing on"},
        ],
    }
    (root / "graph.json").write_text(json.dumps(graph))
    return root


def read_all(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def test_train_writes_checkpoint_and_manifest(workspace):
    ckpt = workspace / "ckpt"
    for name in ("weights.pt", "optimizer.pt", "rng.pt", "config.json", "provider.json", "metrics.csv", "manifest.json"):
        assert (ckpt / name).exists(), name
    manifest = json.loads((ckpt / "manifest.json").read_text())
    assert manifest["command"] == "train" and manifest["seeds"] == [0] and len(manifest["config_hash"]) == 16
    assert len(list((workspace / "data").glob("scene*.json"))) == 2


def test_generate_is_byte_identical_for_same_seed(workspace, tmp_path):
    args = ["generate", "--checkpoint", str(workspace / "ckpt"), "--graph", str(workspace / "graph.json"), "--seed", "7"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    a = read_all(tmp_path / "a")
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert read_all(tmp_path / "a") == a
    # another output directory differs only in the manifest's recorded --out
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    b = read_all(tmp_path / "b")
    assert {k: v for k, v in a.items() if k != "manifest.json"} == {k: v for k, v in b.items() if k != "manifest.json"}
    assert {"scene.json", "scene.obj", "topdown.png", "topdown.palette.json", "manifest.json"} <= set(a)
    assert "shapes/node0.raw" in a and "shapes/node0.json" in a
    assert main(args[:-1] + ["8", "--out", str(tmp_path / "c")]) == 0
    assert read_all(tmp_path / "c")["scene.json"] != a["scene.json"]


def test_manipulate_changes_relation(workspace, tmp_path):
    edit = [{"op": "change_relation", "subject": "nightstand", "object": "bed", "from": "shorter than", "predicate": "taller than"}]
    (tmp_path / "edit.json").write_text(json.dumps(edit))
    args = [
        "manipulate", "--checkpoint", str(workspace / "ckpt"), "--graph", str(workspace / "graph.json"),
        "--edit", str(tmp_path / "edit.json"), "--seed", "3", "--no-shapes",
    ]
    assert main(args + ["--out", str(tmp_path / "m1")]) == 0
    first = read_all(tmp_path / "m1")
    assert main(args + ["--out", str(tmp_path / "m1")]) == 0
    assert read_all(tmp_path / "m1") == first
    result = json.loads((tmp_path / "m1" / "scene.json").read_text())
    triples = {(e["src"], e["predicate"], e["dst"]) for e in result["edges"]}
    assert (1, "taller than", 0) in triples and (1, "shorter than", 0) not in triples
    assert validate_graph(graph_from_dict(result)) == []


def test_evaluate_and_render(workspace, tmp_path):
    report = tmp_path / "eval" / "report.json"
    assert main([
        "evaluate", "--checkpoint", str(workspace / "ckpt"), "--scenes", str(workspace / "data"),
        "--out", str(report), "--runs", "2",
    ]) == 0
    r = json.loads(report.read_text())
    assert {"per_predicate", "easy", "hard", "consistency", "diversity", "fid", "kid", "config_hash", "seeds"} <= set(r)
    assert r["seeds"] == [0, 1] and r["fid"] is not None
    scene_file = next((workspace / "data").glob("scene*.json"))
    assert main(["render", "--scene", str(scene_file), "--out", str(tmp_path / "r" / "top.png")]) == 0
    assert (tmp_path / "r" / "top.png").exists()


def test_pretrain_vqvae(workspace, tmp_path):
    assert main([
        "pretrain-vqvae", "--shapes", str(workspace / "shapes"), "--out", str(tmp_path / "vq"),
        "--config", str(workspace / "config.json"), "--seed", "4",
    ]) == 0
    assert (tmp_path / "vq" / "vqvae.pt").exists()
    assert json.loads((tmp_path / "vq" / "manifest.json").read_text())["seeds"] == [4]


def test_missing_input_is_usage_error_naming_flag(workspace, tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--checkpoint", str(workspace / "ckpt"), "--graph", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")])
    assert exc.value.code == 2
    assert "--graph" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--bogus"])
    assert exc.value.code == 2


def test_runtime_failure_exits_one(workspace, tmp_path, capsys):
    bad = [{"op": "explode"}]
    (tmp_path / "edit.json").write_text(json.dumps(bad))
    code = main([
        "manipulate", "--checkpoint", str(workspace / "ckpt"), "--graph", str(workspace / "graph.json"),
        "--edit", str(tmp_path / "edit.json"), "--out", str(tmp_path / "o"),
    ])
    assert code == 1 and "explode" in capsys.readouterr().err
