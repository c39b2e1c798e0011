"""Command-line entry point: ``sg2scene <command> ...``.

Usage errors (bad flags, missing input files) exit with status 2; runtime
failures exit with status 1. Every command that writes artifacts also writes
a ``manifest.json`` recording the arguments, seed and config hash.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .annotator import RelationThresholds, annotate_directory
from .assembly import place_objects, render_topdown_semantic, sdf_to_mesh, write_obj, write_png
from .config import TrainConfig
from .editing import apply_edits, load_edit_script
from .evaluation import (
    RandomProjectionFeatures,
    constraint_accuracy,
    consistency_score,
    diversity_score,
    frechet_distance,
    kernel_mmd,
    shape_points,
)
from .model import GeneratedScene
from .scene_model import (
    Scene,
    default_vocabulary,
    dump_json,
    graph_from_dict,
    load_scene,
    scene_to_dict,
)
from .shape.tsdf import load_tsdf_directory, save_tsdf
from .trainer import TrainingSet, load_generator, pretrain_vqvae, train

log = logging.getLogger("sg2scene")


class UsageError(Exception):
    """Raised for problems that should exit with status 2."""


def _existing(args, flag: str, kind: str = "file") -> Path:
    value = getattr(args, flag.lstrip("-").replace("-", "_"))
    path = Path(value)
    ok = path.is_file() if kind == "file" else path.is_dir()
    if not ok:
        raise UsageError(f"{flag}: {kind} not found: {value}")
    return path


def _config(args) -> TrainConfig:
    cfg = TrainConfig.load(_existing(args, "--config")) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _manifest(out_dir: Path, command: str, args, config_hash: str | None, seeds: list[int]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "arguments": {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k != "func"},
        "config_hash": config_hash,
        "seeds": seeds,
    }
    (out_dir / "manifest.json").write_text(dump_json(record))


def _load_graph(path: Path):
    d = json.loads(path.read_text())
    return graph_from_dict(d), d


def _load_scenes(directory: Path) -> list[Scene]:
    return [load_scene(p) for p in sorted(directory.glob("*.json")) if p.name != "manifest.json"]


def write_generation(result: GeneratedScene, out: Path, room_type: str = "bedroom") -> None:
    """Scene JSON, per-node TSDFs, assembled OBJ and the top-down render."""
    vocab = default_vocabulary()
    out.mkdir(parents=True, exist_ok=True)
    scene = Scene(result.graph, result.boxes, room_type)
    (out / "scene.json").write_text(dump_json(scene_to_dict(scene, vocab)))
    for nid, grid in sorted(result.shapes.items()):
        save_tsdf(grid, out / "shapes" / f"node{nid}")
    objects = place_objects(
        result.boxes, result.graph.class_ids, result.shapes, [n.id for n in result.graph.nodes]
    )
    write_obj(objects, out / "scene.obj", vocab)
    write_png(render_topdown_semantic(objects, vocab), out / "topdown.png", vocab)


# -- commands ---------------------------------------------------------------


def cmd_annotate(args) -> int:
    scenes = _existing(args, "--scenes", "dir")
    th = RelationThresholds.load(_existing(args, "--thresholds")) if args.thresholds else RelationThresholds()
    manifest = annotate_directory(scenes, args.out, th)
    print(f"annotated {len(manifest['scenes'])} scenes into {args.out}")
    return 0


def cmd_pretrain_vqvae(args) -> int:
    shapes = _existing(args, "--shapes", "dir")
    cfg = _config(args)
    grids = list(load_tsdf_directory(shapes).values())
    if not grids:
        raise UsageError(f"--shapes: no TSDF grids in {shapes}")
    model = pretrain_vqvae(cfg, grids, target_mse=args.target_mse)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), out / "vqvae.pt")
    cfg.save(out / "config.json")
    _manifest(out, "pretrain-vqvae", args, cfg.digest(), [cfg.seed])
    return 0


def cmd_train(args) -> int:
    data_dir = _existing(args, "--data", "dir")
    cfg = _config(args)
    library = load_tsdf_directory(_existing(args, "--shapes", "dir")) if args.shapes else {}
    data = TrainingSet(_load_scenes(data_dir), library)
    vqvae = None
    if args.vqvae:
        from .shape.vqvae import VQVAE

        vqvae = VQVAE(cfg.vqvae_config())
        vqvae.load_state_dict(torch.load(_existing(args, "--vqvae"), weights_only=True))
    every = max(cfg.steps // 20, 1)
    result = train(
        cfg, data, vqvae, args.out, resume=args.resume,
        on_step=lambda s, v: log.info("step %d %s", s, v) if s % every == 0 else None,
    )
    _manifest(Path(args.out), "train", args, cfg.digest(), [cfg.seed])
    if result.history:
        print(f"trained {len(result.history)} steps; final loss {result.history[-1]['total']:.4f}")
    return 0


def _generate_to(model, graph, seed: int, out: Path, shapes: bool, room_type: str) -> GeneratedScene:
    result = model.generate(graph, seed=seed, shapes=shapes)
    write_generation(result, out, room_type)
    return result


def cmd_generate(args) -> int:
    graph_path = _existing(args, "--graph")
    ckpt = _existing(args, "--checkpoint", "dir")
    graph, raw = _load_graph(graph_path)
    model = load_generator(ckpt)
    out = Path(args.out)
    _generate_to(model, graph, args.seed, out, not args.no_shapes, raw.get("room_type", "bedroom"))
    _manifest(out, "generate", args, model.config.digest(), [args.seed])
    return 0


def cmd_manipulate(args) -> int:
    graph_path = _existing(args, "--graph")
    edit_path = _existing(args, "--edit")
    ckpt = _existing(args, "--checkpoint", "dir")
    graph, raw = _load_graph(graph_path)
    edited = apply_edits(graph, load_edit_script(edit_path))
    model = load_generator(ckpt)
    out = Path(args.out)
    _generate_to(model, edited, args.seed, out, not args.no_shapes, raw.get("room_type", "bedroom"))
    _manifest(out, "manipulate", args, model.config.digest(), [args.seed])
    return 0


def _scene_points(result: GeneratedScene, seed: int) -> dict[int, np.ndarray]:
    pts = {}
    for nid, grid in result.shapes.items():
        mesh = sdf_to_mesh(grid)
        if not mesh.is_empty:
            pts[nid] = shape_points(mesh, seed=seed)
    return pts


def cmd_evaluate(args) -> int:
    scenes = _load_scenes(_existing(args, "--scenes", "dir"))
    model = load_generator(_existing(args, "--checkpoint", "dir"))
    if not scenes:
        raise UsageError("--scenes: no scene files found")
    vocab = default_vocabulary()
    seeds = [args.seed + k for k in range(args.runs)]
    layouts, graphs, gen_images, ref_images = [], [], [], []
    consistency, diversity = [], []
    for scene in scenes:
        runs = []
        for seed in seeds:
            res = model.generate(scene.graph, seed=seed, shapes=not args.no_shapes)
            layouts.append(res.boxes)
            graphs.append(scene.graph)
            ids = [n.id for n in scene.graph.nodes]
            gen_images.append(render_topdown_semantic(place_objects(res.boxes, scene.graph.class_ids, res.shapes, ids)))
            if res.shapes:
                pts = _scene_points(res, seed)
                runs.append(pts)
                c = consistency_score(pts, scene.graph, vocab)
                if c is not None:
                    consistency.append(c)
        ref_images.append(render_topdown_semantic(place_objects(scene.boxes, scene.graph.class_ids)))
        if len(runs) > 1:
            class_of = {n.id: n.class_id for n in scene.graph.nodes}
            diversity.append(diversity_score(runs, class_of, vocab)["total"])
    acc = constraint_accuracy(layouts, graphs, vocab=vocab)
    extractor = RandomProjectionFeatures()
    fa, fb = extractor(np.stack(gen_images)), extractor(np.stack(ref_images))
    enough = len(fa) >= 2 and len(fb) >= 2
    report = {
        "per_predicate": acc["per_predicate"],
        "mean": acc["mean"],
        "easy": acc["easy"],
        "hard": acc["hard"],
        "consistency": float(np.mean(consistency)) if consistency else None,
        "diversity": float(np.mean(diversity)) if diversity else None,
        "fid": frechet_distance(fa, fb) if enough else None,
        "kid": kernel_mmd(fa, fb) if enough else None,
        "feature_extractor": extractor.name,
        "config_hash": model.config.digest(),
        "seeds": seeds,
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dump_json(report))
    _manifest(out.parent, "evaluate", args, model.config.digest(), seeds)
    print(json.dumps({k: report[k] for k in ("mean", "easy", "hard", "fid", "kid")}))
    return 0


def cmd_render(args) -> int:
    scene = load_scene(_existing(args, "--scene"))
    shapes = {}
    if args.shapes:
        by_name = load_tsdf_directory(_existing(args, "--shapes", "dir"))
        for n in scene.graph.nodes:
            grid = by_name.get(f"node{n.id}")
            if grid is not None:
                shapes[n.id] = grid
    objects = place_objects(scene.boxes, scene.graph.class_ids, shapes, [n.id for n in scene.graph.nodes])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_png(render_topdown_semantic(objects), out)
    _manifest(out.parent, "render", args, None, [])
    return 0


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sg2scene", description="Scene-graph to 3D scene generation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_default=None):
        sp.add_argument("--config", help="JSON config overriding defaults")
        sp.add_argument("--seed", type=int, default=seed_default)

    a = sub.add_parser("annotate", help="derive scene graphs from box layouts")
    a.add_argument("--scenes", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--thresholds")
    a.set_defaults(func=cmd_annotate)

    v = sub.add_parser("pretrain-vqvae", help="fit the shape compressor")
    v.add_argument("--shapes", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--target-mse", type=float, default=None)
    common(v)
    v.set_defaults(func=cmd_pretrain_vqvae)

    t = sub.add_parser("train", help="joint layout and shape training")
    t.add_argument("--data", required=True, help="directory of annotated scene JSON files")
    t.add_argument("--shapes", help="directory of TSDF grids named by shape id")
    t.add_argument("--vqvae", help="pre-trained vqvae.pt")
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--resume", action="store_true")
    common(t)
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", help="generate a scene from a graph")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--graph", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--no-shapes", action="store_true")
    g.set_defaults(func=cmd_generate)

    m = sub.add_parser("manipulate", help="apply an edit script, then regenerate")
    m.add_argument("--checkpoint", required=True)
    m.add_argument("--graph", required=True)
    m.add_argument("--edit", required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.add_argument("--no-shapes", action="store_true")
    m.set_defaults(func=cmd_manipulate)

    e = sub.add_parser("evaluate", help="constraint, shape and image metrics")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--scenes", required=True)
    e.add_argument("--out", required=True, help="report JSON path")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--runs", type=int, default=10)
    e.add_argument("--no-shapes", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("render", help="top-down semantic render of a scene file")
    r.add_argument("--scene", required=True)
    r.add_argument("--shapes", help="directory of node<id> TSDF grids")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except Exception as exc:  # runtime failure
        print(f"sg2scene {args.command}: error: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
