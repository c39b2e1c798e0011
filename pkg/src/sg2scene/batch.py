"""Collation of scene graphs into flat tensor batches (disjoint union)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from .scene_model import (
    NUM_ANGLE_BINS,
    BoundingBox,
    Scene,
    SceneGraph,
    Vocabulary,
    canonicalize_yaw,
    default_vocabulary,
)


@dataclass
class GraphBatch:
    classes: torch.Tensor  # [N] long
    edges: torch.Tensor  # [E, 2] long, row positions into the node axis
    predicates: torch.Tensor  # [E] long
    scene_index: torch.Tensor  # [N] long
    shape_mask: torch.Tensor  # [N] bool
    node_keys: list[tuple[int, int]]  # (scene position, node id) per row
    sizes: torch.Tensor | None = None  # [N, 3]
    translations: torch.Tensor | None = None  # [N, 3]
    yaws: torch.Tensor | None = None  # [N]
    angle_bins: torch.Tensor | None = None  # [N] long

    @property
    def num_nodes(self) -> int:
        return int(self.classes.shape[0])

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def num_scenes(self) -> int:
        return int(self.scene_index.max()) + 1 if self.num_nodes else 0

    @property
    def has_boxes(self) -> bool:
        return self.sizes is not None

    def edge_triples(self) -> list[tuple[int, int, int]]:
        """(subject class, predicate, object class) per edge."""
        c = self.classes.tolist()
        return [(c[s], p, c[o]) for (s, o), p in zip(self.edges.tolist(), self.predicates.tolist())]

    def box_tensor(self) -> torch.Tensor:
        """[N, 7] rows of (size, translation, yaw)."""
        return torch.cat([self.sizes, self.translations, self.yaws[:, None]], dim=1)


def boxes_to_tensors(
    boxes: Sequence[BoundingBox], dtype=torch.float32, num_bins: int = NUM_ANGLE_BINS
):
    sizes = torch.tensor([b.size for b in boxes], dtype=dtype).reshape(-1, 3)
    trans = torch.tensor([b.translation for b in boxes], dtype=dtype).reshape(-1, 3)
    yaws = torch.tensor([b.yaw for b in boxes], dtype=dtype)
    bins = torch.tensor([canonicalize_yaw(b.yaw, num_bins)[1] for b in boxes], dtype=torch.long)
    return sizes, trans, yaws, bins


def collate(
    items: Sequence[Scene | SceneGraph],
    vocab: Vocabulary | None = None,
    with_boxes: bool = True,
    dtype=torch.float32,
    num_bins: int = NUM_ANGLE_BINS,
) -> GraphBatch:
    """Stack scenes (or bare graphs) into one batch.

    Boxes are attached only when every item is a :class:`Scene` and
    ``with_boxes`` is set.
    """
    vocab = vocab or default_vocabulary()
    classes, edges, preds, scene_index, mask, keys, boxes = [], [], [], [], [], [], []
    offset = 0
    has_boxes = with_boxes and all(isinstance(it, Scene) for it in items)
    for k, item in enumerate(items):
        graph = item.graph if isinstance(item, Scene) else item
        for n in graph.nodes:
            classes.append(n.class_id)
            scene_index.append(k)
            mask.append(vocab.is_shape_class(n.class_id))
            keys.append((k, n.id))
        for (s, d), e in zip(graph.edge_index_array(), graph.edges):
            edges.append((s + offset, d + offset))
            preds.append(e.predicate_id)
        if has_boxes:
            boxes.extend(item.boxes)
        offset += graph.num_nodes
    batch = GraphBatch(
        classes=torch.tensor(classes, dtype=torch.long),
        edges=torch.tensor(edges, dtype=torch.long).reshape(-1, 2),
        predicates=torch.tensor(preds, dtype=torch.long),
        scene_index=torch.tensor(scene_index, dtype=torch.long),
        shape_mask=torch.tensor(mask, dtype=torch.bool),
        node_keys=keys,
    )
    if has_boxes:
        batch.sizes, batch.translations, batch.yaws, batch.angle_bins = boxes_to_tensors(
            boxes, dtype, num_bins
        )
    return batch
