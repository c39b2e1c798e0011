"""Seeded synthetic scenes and toy shapes for tests, demos and the
acceptance suite."""

from __future__ import annotations

import numpy as np

from .annotator import annotate
from .scene_model import (
    BoundingBox,
    ObjectNode,
    Scene,
    SceneGraph,
    Vocabulary,
    bin_center,
    default_vocabulary,
)
from .shape.tsdf import TsdfGrid, box_sdf, cylinder_sdf, sphere_sdf, torus_sdf, tsdf_from_sdf, union_sdf

MATERIALS = ("wood", "metal", "fabric", "leather")


def _legs(half: float, top: float, radius: float = 0.04, spread: float = 0.35):
    return [
        cylinder_sdf(radius, half, (sx * spread, sy * spread, top))
        for sx in (-1, 1)
        for sy in (-1, 1)
    ]


# two variants per class; the grid occupies the unit cube before box fitting
_SHAPE_SDFS = {
    "bed": (
        lambda: union_sdf(box_sdf((0.45, 0.45, 0.12), (0, 0, -0.2)), box_sdf((0.45, 0.06, 0.3), (0, 0.4, 0.0))),
        lambda: box_sdf((0.45, 0.45, 0.2), (0, 0, -0.1)),
    ),
    "nightstand": (
        lambda: box_sdf((0.4, 0.4, 0.4)),
        lambda: union_sdf(box_sdf((0.4, 0.4, 0.08), (0, 0, 0.3)), *_legs(0.3, -0.1)),
    ),
    "wardrobe": (
        lambda: box_sdf((0.42, 0.3, 0.45)),
        lambda: union_sdf(box_sdf((0.2, 0.3, 0.45), (-0.22, 0, 0)), box_sdf((0.2, 0.3, 0.45), (0.22, 0, 0))),
    ),
    "chair": (
        lambda: union_sdf(box_sdf((0.35, 0.35, 0.06), (0, 0, -0.05)), box_sdf((0.35, 0.05, 0.3), (0, 0.3, 0.25)), *_legs(0.2, -0.3, 0.04, 0.3)),
        lambda: union_sdf(cylinder_sdf(0.35, 0.08, (0, 0, 0.0)), cylinder_sdf(0.08, 0.35, (0, 0, -0.1))),
    ),
    "table": (
        lambda: union_sdf(box_sdf((0.45, 0.45, 0.05), (0, 0, 0.35)), *_legs(0.35, -0.05)),
        lambda: union_sdf(cylinder_sdf(0.45, 0.05, (0, 0, 0.35)), cylinder_sdf(0.08, 0.4, (0, 0, -0.05))),
    ),
    "lamp": (
        lambda: union_sdf(cylinder_sdf(0.05, 0.35, (0, 0, -0.1)), sphere_sdf(0.25, (0, 0, 0.2))),
        lambda: union_sdf(cylinder_sdf(0.2, 0.05, (0, 0, -0.4)), torus_sdf(0.25, 0.08, (0, 0, 0.25))),
    ),
}
_SHAPE_SDFS["desk"] = _SHAPE_SDFS["table"]
_SHAPE_SDFS["stool"] = _SHAPE_SDFS["chair"]
_SHAPE_SDFS["pendant_lamp"] = _SHAPE_SDFS["lamp"]
_SHAPE_SDFS["cabinet"] = _SHAPE_SDFS["nightstand"]
_SHAPE_SDFS["tv_stand"] = _SHAPE_SDFS["nightstand"]
_SHAPE_SDFS["shelf"] = _SHAPE_SDFS["wardrobe"]
_SHAPE_SDFS["bookshelf"] = _SHAPE_SDFS["wardrobe"]
_SHAPE_SDFS["sofa"] = _SHAPE_SDFS["bed"]


def toy_shape(class_name: str, variant: int = 0, resolution: int = 16) -> TsdfGrid:
    """A hand-built TSDF for ``class_name``; ``variant`` picks one of two designs."""
    makers = _SHAPE_SDFS[class_name]
    k = variant % len(makers)
    return tsdf_from_sdf(makers[k](), resolution, object_id=f"{class_name}_{k}")


def toy_library(resolution: int = 16, classes=None) -> dict[str, TsdfGrid]:
    classes = classes or ("bed", "nightstand", "wardrobe", "chair", "table", "lamp")
    lib = {}
    for name in classes:
        for k in range(len(_SHAPE_SDFS[name])):
            g = toy_shape(name, k, resolution)
            lib[g.object_id] = g
    return lib


def random_scene(
    rng: np.random.Generator,
    num_objects: int | None = None,
    vocab: Vocabulary | None = None,
    room_size: float = 6.0,
) -> Scene:
    """Unannotated scene with random classes, boxes (any yaw) and style attributes."""
    vocab = vocab or default_vocabulary()
    n = int(num_objects or rng.integers(3, 10))
    classes = rng.integers(1, vocab.num_classes, size=n)
    boxes, attrs = [], []
    for c in classes:
        size = tuple(float(v) for v in rng.uniform(0.2, 2.0, size=3))
        xy = rng.uniform(-room_size / 2, room_size / 2, size=2)
        z = size[2] / 2 + (float(rng.uniform(0, 1.5)) if rng.random() < 0.3 else 0.0)
        boxes.append(BoundingBox(size, (float(xy[0]), float(xy[1]), z), float(rng.uniform(-np.pi, np.pi))))
        name = vocab.class_name(int(c))
        attrs.append({
            "material": MATERIALS[int(rng.integers(len(MATERIALS)))],
            "shape": f"{name}_{int(rng.integers(2))}",
            "super_category": vocab.super_category(int(c)),
        })
    graph = SceneGraph.from_classes([int(c) for c in classes])
    return Scene(graph, boxes, "bedroom", attrs)


def random_scenes(count: int, seed: int = 0, vocab: Vocabulary | None = None) -> list[Scene]:
    rng = np.random.default_rng(seed)
    return [random_scene(rng, vocab=vocab) for _ in range(count)]


# bedroom template: class, size (x, y, z), anchor (x, y), shape variant
_BEDROOM = (
    ("bed", (2.0, 1.6, 0.9), (0.0, 1.2), 0),
    ("nightstand", (0.5, 0.45, 0.55), (-1.4, 1.6), 0),
    ("nightstand", (0.5, 0.45, 0.55), (1.4, 1.6), 0),
    ("wardrobe", (1.8, 0.6, 2.2), (-2.0, -1.8), 0),
    ("table", (1.2, 0.7, 0.75), (1.8, -1.4), 1),
    ("chair", (0.5, 0.5, 0.9), (1.8, -0.6), 0),
    ("lamp", (0.3, 0.3, 1.5), (-2.4, 0.6), 0),
)


def micro_dataset(
    num_scenes: int = 5,
    seed: int = 0,
    vocab: Vocabulary | None = None,
    num_bins: int = 24,
    with_floor: bool = True,
    resolution: int = 16,
) -> tuple[list[Scene], dict[str, TsdfGrid]]:
    """Small annotated bedroom set with a matching toy shape library.

    Every scene perturbs one template: objects shift by up to 0.4 m,
    sizes vary by up to 15%, and headings are drawn from the centres of the
    four axis-facing rotation bins, so each ground-truth yaw is exactly
    representable by the decoder's rotation classes.
    """
    vocab = vocab or default_vocabulary()
    rng = np.random.default_rng(seed)
    cardinal_bins = [0, num_bins // 4, num_bins // 2, 3 * num_bins // 4]
    library = toy_library(resolution)
    scenes = []
    for _ in range(num_scenes):
        classes, boxes, attrs = [], [], []
        if with_floor:
            classes.append(vocab.class_id("floor"))
            boxes.append(BoundingBox((6.0, 6.0, 0.05), (0.0, 0.0, -0.025), bin_center(0, num_bins), num_bins))
            attrs.append({"material": "wood", "shape": None, "super_category": "structure"})
        chair_variant = int(rng.integers(2))
        for name, size, anchor, variant in _BEDROOM:
            if name == "chair":
                variant = chair_variant
            s = tuple(float(v) for v in np.asarray(size) * rng.uniform(0.85, 1.15, size=3))
            xy = np.asarray(anchor) + rng.uniform(-0.4, 0.4, size=2)
            yaw = bin_center(cardinal_bins[int(rng.integers(4))], num_bins)
            classes.append(vocab.class_id(name))
            boxes.append(BoundingBox(s, (float(xy[0]), float(xy[1]), s[2] / 2), yaw, num_bins))
            attrs.append({
                "material": "wood" if name in ("bed", "nightstand", "wardrobe") else MATERIALS[int(rng.integers(4))],
                "shape": f"{name}_{variant}",
                "super_category": vocab.super_category(vocab.class_id(name)),
            })
        raw = Scene(SceneGraph.from_classes(classes), boxes, "bedroom", attrs)
        scenes.append(raw.with_graph(annotate(raw, vocab=vocab)))
    return scenes, library
