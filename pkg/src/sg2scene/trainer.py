"""Joint training loop: class-aware shape sub-sampling, weighted loss,
checkpointing with full RNG state so interrupted runs resume exactly."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .batch import collate
from .config import TrainConfig
from .context import provider_identity
from .model import SceneGenerator
from .scene_model import Scene, Vocabulary, default_vocabulary
from .shape.tsdf import TsdfGrid
from .shape.vqvae import VQVAE, ConfigError, codes_in_use, reconstruction_mse, train_vqvae

log = logging.getLogger(__name__)

METRIC_FIELDS = ("step", "total", "kl", "layout", "shape")


class TrainingError(RuntimeError):
    pass


# -- data -------------------------------------------------------------------


@dataclass
class TrainingSet:
    """Scenes plus a library of TSDF grids keyed by shape id.

    A node carries a shape when its class is shape-bearing and either
    ``scene.shapes[i]`` holds a grid or its ``shape`` attribute names a grid
    in ``library``.
    """

    scenes: list[Scene]
    library: dict[str, TsdfGrid] = field(default_factory=dict)

    def __post_init__(self):
        if not self.scenes:
            raise ConfigError("training set is empty")

    def node_grid(self, scene: Scene, i: int, vocab: Vocabulary) -> TsdfGrid | None:
        if not vocab.is_shape_class(scene.graph.nodes[i].class_id):
            return None
        if scene.shapes is not None and isinstance(scene.shapes[i], TsdfGrid):
            return scene.shapes[i]
        return self.library.get(str(scene.attributes[i].get("shape", "")))

    def shape_candidates(self, vocab: Vocabulary) -> list[list[tuple[int, int]]]:
        """Per scene, (node id, class id) of every node that has a grid."""
        out = []
        for scene in self.scenes:
            out.append([
                (n.id, n.class_id)
                for i, n in enumerate(scene.graph.nodes)
                if self.node_grid(scene, i, vocab) is not None
            ])
        return out

    def all_grids(self, vocab: Vocabulary) -> list[TsdfGrid]:
        seen, grids = set(), []
        for scene in self.scenes:
            for i in range(scene.graph.num_nodes):
                g = self.node_grid(scene, i, vocab)
                if g is not None and id(g) not in seen:
                    seen.add(id(g))
                    grids.append(g)
        return grids


def class_aware_picks(
    nodes: Sequence[tuple[int, int]], goal: int, rng: np.random.Generator
) -> tuple[list[int], list[int]]:
    """Split one scene's (node id, class id) pairs into ``min(goal, len(nodes))``
    picked node ids and the unpicked rest.

    The quota is spread over classes by repeatedly choosing a class at random
    among those with unused nodes; nodes are then drawn without replacement
    inside each class.
    """
    by_class: dict[int, list[int]] = {}
    for node_id, cls in nodes:
        by_class.setdefault(cls, []).append(node_id)
    classes = sorted(by_class)
    remaining = {c: len(by_class[c]) for c in classes}
    quota = dict.fromkeys(classes, 0)
    for _ in range(min(goal, len(nodes))):
        open_classes = [c for c in classes if remaining[c] > 0]
        c = open_classes[int(rng.integers(len(open_classes)))]
        quota[c] += 1
        remaining[c] -= 1
    picked, rest = [], []
    for c in classes:
        ids = by_class[c]
        chosen = set(rng.choice(len(ids), size=quota[c], replace=False).tolist()) if quota[c] else set()
        for j, node_id in enumerate(ids):
            (picked if j in chosen else rest).append(node_id)
    return picked, rest


def uniform_sample_batch(
    candidates: Sequence[Sequence[tuple[int, int]]],
    shapes_per_step: int,
    rng: np.random.Generator,
    scenes_per_step: int | None = None,
) -> list[tuple[int, int]]:
    """Pick exactly ``min(shapes_per_step, available)`` (scene, node id) pairs.

    Each scene contributes its class-aware picks for a goal of
    ``ceil(shapes_per_step / scenes_per_step)`` nodes. The union is pruned
    uniformly at random to ``shapes_per_step``; if the goals leave it short, it is topped up uniformly from the
    nodes not yet chosen.
    """
    b_s = scenes_per_step or max(len(candidates), 1)
    goal = math.ceil(shapes_per_step / b_s)
    chosen: list[tuple[int, int]] = []
    leftover: list[tuple[int, int]] = []
    for k, nodes in enumerate(candidates):
        picked, rest = class_aware_picks(nodes, goal, rng)
        chosen += [(k, n) for n in picked]
        leftover += [(k, n) for n in rest]
    if len(chosen) > shapes_per_step:
        keep = np.sort(rng.choice(len(chosen), size=shapes_per_step, replace=False))
        chosen = [chosen[i] for i in keep]
    elif len(chosen) < shapes_per_step and leftover:
        extra = min(shapes_per_step - len(chosen), len(leftover))
        top_up = np.sort(rng.choice(len(leftover), size=extra, replace=False))
        chosen += [leftover[i] for i in top_up]
    return chosen


# -- VQ-VAE pre-training ----------------------------------------------------


def pretrain_vqvae(config: TrainConfig, grids: Sequence[TsdfGrid], target_mse: float | None = None) -> VQVAE:
    if not grids:
        raise ConfigError("no TSDF grids to pre-train on")
    torch.manual_seed(config.seed)
    model = VQVAE(config.vqvae_config())
    stack = torch.from_numpy(np.stack([g.values for g in grids])).float()
    train_vqvae(model, stack, config.vq_steps, config.vq_lr, seed=config.seed, target_mse=target_mse)
    log.info(
        "vqvae: mse %.2e, %d codes in use", reconstruction_mse(model, stack), codes_in_use(model, stack)
    )
    return model


# -- checkpoints ------------------------------------------------------------


def save_checkpoint(
    directory: str | Path,
    model: SceneGenerator,
    optimizer: torch.optim.Optimizer | None,
    step: int,
    torch_gen: torch.Generator,
    np_rng: np.random.Generator,
    history: list[dict[str, float]],
) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), d / "weights.pt")
    if optimizer is not None:
        torch.save(optimizer.state_dict(), d / "optimizer.pt")
    torch.save({"step": step, "torch": torch_gen.get_state(), "numpy": np_rng.bit_generator.state}, d / "rng.pt")
    model.config.save(d / "config.json")
    (d / "provider.json").write_text(json.dumps(provider_identity(model.provider), sort_keys=True) + "\n")
    with open(d / "metrics.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        w.writeheader()
        for row in history:
            w.writerow({k: row[k] for k in METRIC_FIELDS})
    return d


def read_metrics(directory: str | Path) -> list[dict[str, float]]:
    with open(Path(directory) / "metrics.csv", newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def load_generator(directory: str | Path, vocab: Vocabulary | None = None) -> SceneGenerator:
    d = Path(directory)
    if not (d / "weights.pt").exists():
        raise FileNotFoundError(f"no checkpoint weights in {d}")
    config = TrainConfig.load(d / "config.json")
    model = SceneGenerator(config, vocab)
    stored = json.loads((d / "provider.json").read_text())
    if stored != json.loads(json.dumps(provider_identity(model.provider))):
        raise ConfigError(f"checkpoint was trained with text provider {stored}")
    model.load_state_dict(torch.load(d / "weights.pt", weights_only=True))
    model.eval()
    return model


# -- training loop ----------------------------------------------------------


@dataclass
class TrainResult:
    model: SceneGenerator
    history: list[dict[str, float]]


def _stack_latents(model: SceneGenerator, data: TrainingSet, vocab: Vocabulary):
    """Encode every grid once; returns (scene, node id) -> latent row."""
    table = {}
    for k, scene in enumerate(data.scenes):
        for i, n in enumerate(scene.graph.nodes):
            g = data.node_grid(scene, i, vocab)
            if g is not None:
                table[(k, n.id)] = g
    if not table:
        return {}
    keys = list(table)
    grids = torch.from_numpy(np.stack([table[k].values for k in keys])).float()
    latents = model.encode_shapes(grids)
    return {k: latents[j] for j, k in enumerate(keys)}


def train(
    config: TrainConfig,
    data: TrainingSet,
    vqvae: VQVAE | None = None,
    checkpoint_dir: str | Path | None = None,
    resume: bool = False,
    vocab: Vocabulary | None = None,
    on_step: Callable[[int, dict[str, float]], None] | None = None,
    max_steps: int | None = None,
) -> TrainResult:
    """Optimize the joint objective for ``config.steps`` steps.

    ``max_steps`` stops the run early (after saving a checkpoint), which is
    how interrupted-and-resumed runs are exercised.
    """
    vocab = vocab or default_vocabulary()
    torch.manual_seed(config.seed)
    model = SceneGenerator(config, vocab)
    torch_gen = torch.Generator().manual_seed(config.seed + 1)
    np_rng = np.random.default_rng(config.seed)
    history: list[dict[str, float]] = []
    start = 0

    if config.shape_branch and not resume:
        if vqvae is None:
            vqvae = pretrain_vqvae(config, data.all_grids(vocab))
        model.vqvae.load_state_dict(vqvae.state_dict())
        grids = data.all_grids(vocab)
        if grids:
            model.fit_latent_scale(torch.from_numpy(np.stack([g.values for g in grids])).float())

    opt = torch.optim.AdamW(model.trainable_parameters(), lr=config.lr, weight_decay=config.weight_decay)

    if resume:
        if checkpoint_dir is None:
            raise ConfigError("resume needs a checkpoint directory")
        d = Path(checkpoint_dir)
        model.load_state_dict(torch.load(d / "weights.pt", weights_only=True))
        opt.load_state_dict(torch.load(d / "optimizer.pt", weights_only=True))
        state = torch.load(d / "rng.pt", weights_only=False)
        torch_gen.set_state(state["torch"])
        np_rng.bit_generator.state = state["numpy"]
        start = int(state["step"])
        history = read_metrics(d)[:start]

    latents = _stack_latents(model, data, vocab) if config.shape_branch else {}
    candidates = data.shape_candidates(vocab) if config.shape_branch else []
    n_scenes = len(data.scenes)
    b_s = min(config.scenes_per_step, n_scenes)
    stop = config.steps if max_steps is None else min(config.steps, max_steps)

    model.train()
    step = start
    for step in range(start, stop):
        picks = np.sort(np_rng.choice(n_scenes, size=b_s, replace=False))
        scenes = [data.scenes[int(i)] for i in picks]
        batch = collate(scenes, vocab, num_bins=config.num_angle_bins)
        rows = x0 = None
        if config.shape_branch:
            chosen = uniform_sample_batch(
                [candidates[int(i)] for i in picks], config.shapes_per_step, np_rng, b_s
            )
            if chosen:
                key_to_row = {key: r for r, key in enumerate(batch.node_keys)}
                rows = torch.tensor([key_to_row[(k, nid)] for k, nid in chosen], dtype=torch.long)
                x0 = torch.stack([latents[(int(picks[k]), nid)] for k, nid in chosen])

        terms = model.losses(batch, torch_gen, rows, x0)
        values = terms.as_floats()
        if not all(math.isfinite(v) for v in values.values()):
            raise TrainingError(f"non-finite loss at step {step}: {values}")
        opt.zero_grad(set_to_none=True)
        terms.total.backward()
        if config.grad_clip:
            torch.nn.utils.clip_grad_norm_(model.trainable_parameters(), config.grad_clip)
        opt.step()

        record = {"step": step, **values}
        history.append(record)
        if on_step is not None:
            on_step(step, values)
        done = step + 1
        if checkpoint_dir is not None and config.checkpoint_every and done % config.checkpoint_every == 0:
            save_checkpoint(checkpoint_dir, model, opt, done, torch_gen, np_rng, history)

    if checkpoint_dir is not None:
        save_checkpoint(checkpoint_dir, model, opt, max(stop, start), torch_gen, np_rng, history)
    model.eval()
    return TrainResult(model, history)
