"""Rule-based scene-graph annotation of box layouts.

Every pairwise rule is exposed as a predicate test (``relation_holds``) so the
evaluator checks generated layouts with exactly the same geometry.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass
from itertools import combinations
from pathlib import Path
from typing import Any

from shapely.geometry import Polygon

from .scene_model import (
    STYLE_KEYS,
    BoundingBox,
    RelationEdge,
    Scene,
    SceneError,
    SceneGraph,
    Vocabulary,
    default_vocabulary,
    dump_json,
    load_scene,
    save_scene,
    validate_graph,
)

# tolerance for "touching" in the above / standing-on tests
CONTACT_EPS = 1e-6


class StyleAttributeError(SceneError):
    """A node lacks the style attributes the style pass needs."""


@dataclass(frozen=True)
class RelationThresholds:
    closeby_max_gap: float = 0.45
    above_min_overlap: float = 0.3
    standing_on_max_gap: float = 0.05
    volume_ratio_min: float = 1.25
    height_diff_min: float = 0.15
    lateral_margin: float = 0.05

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"threshold {k} must be finite and nonnegative, got {v}")
        if self.volume_ratio_min <= 1:
            raise ValueError("volume_ratio_min must exceed 1")
        if self.above_min_overlap > 1:
            raise ValueError("above_min_overlap is a fraction in [0, 1]")

    @classmethod
    def load(cls, path: str | Path) -> "RelationThresholds":
        with open(path) as f:
            return cls(**json.load(f))


def _footprint(box: BoundingBox) -> Polygon:
    return Polygon(box.footprint_corners())


def footprint_overlap(a: BoundingBox, b: BoundingBox) -> float:
    """Footprint intersection area over the smaller footprint area."""
    pa, pb = _footprint(a), _footprint(b)
    return pa.intersection(pb).area / min(pa.area, pb.area)


def box_gap(a: BoundingBox, b: BoundingBox) -> float:
    """Euclidean distance between two yawed boxes (0 when they intersect)."""
    dxy = _footprint(a).distance(_footprint(b))
    dz = max(0.0, a.bottom - b.top, b.bottom - a.top)
    return math.hypot(dxy, dz)


def _check_box(box: BoundingBox) -> None:
    if min(box.size) <= 0:
        raise SceneError(f"degenerate box {box}")


def is_above(a: BoundingBox, b: BoundingBox, th: RelationThresholds) -> bool:
    return (
        a.bottom >= b.top - CONTACT_EPS
        and footprint_overlap(a, b) >= th.above_min_overlap
    )


# predicate name -> test(a, b, thresholds); each reads "a <predicate> b"
GEOMETRIC_RULES = {
    "left of": lambda a, b, th: a.translation[0] < b.translation[0] - th.lateral_margin,
    "right of": lambda a, b, th: a.translation[0] > b.translation[0] + th.lateral_margin,
    "in front of": lambda a, b, th: a.translation[1] < b.translation[1] - th.lateral_margin,
    "behind": lambda a, b, th: a.translation[1] > b.translation[1] + th.lateral_margin,
    "bigger than": lambda a, b, th: a.volume >= th.volume_ratio_min * b.volume,
    "smaller than": lambda a, b, th: b.volume >= th.volume_ratio_min * a.volume,
    "taller than": lambda a, b, th: a.top - b.top >= th.height_diff_min,
    "shorter than": lambda a, b, th: b.top - a.top >= th.height_diff_min,
    "close by": lambda a, b, th: box_gap(a, b) <= th.closeby_max_gap,
    "above": is_above,
    "standing on": lambda a, b, th: is_above(a, b, th)
    and a.bottom - b.top <= th.standing_on_max_gap,
}

STYLE_RULES = {
    "same material as": "material",
    "same shape as": "shape",
    "same super-category as": "super_category",
}

# mutually exclusive predicate pairs tested per unordered pair, subject = lower index
_SPATIAL_PAIRS = (
    ("left of", "right of"),
    ("in front of", "behind"),
    ("bigger than", "smaller than"),
    ("taller than", "shorter than"),
)


def relation_holds(
    predicate: str, a: BoundingBox, b: BoundingBox, th: RelationThresholds | None = None
) -> bool:
    th = th or RelationThresholds()
    return bool(GEOMETRIC_RULES[predicate](a, b, th))


def derive_spatial(
    scene: Scene, thresholds: RelationThresholds | None = None, vocab: Vocabulary | None = None
) -> list[RelationEdge]:
    th = thresholds or RelationThresholds()
    vocab = vocab or default_vocabulary()
    for b in scene.boxes:
        _check_box(b)
    nodes, boxes = scene.graph.nodes, scene.boxes
    out = []
    for i, j in combinations(range(len(nodes)), 2):
        for first, second in _SPATIAL_PAIRS:
            for name in (first, second):
                if relation_holds(name, boxes[i], boxes[j], th):
                    out.append(RelationEdge(nodes[i].id, nodes[j].id, vocab.predicate_id(name)))
                    break
    return out


def derive_support(
    scene: Scene, thresholds: RelationThresholds | None = None, vocab: Vocabulary | None = None
) -> list[RelationEdge]:
    th = thresholds or RelationThresholds()
    vocab = vocab or default_vocabulary()
    for b in scene.boxes:
        _check_box(b)
    nodes, boxes = scene.graph.nodes, scene.boxes
    close = vocab.predicate_id("close by")
    out = []
    for i, j in combinations(range(len(nodes)), 2):
        if relation_holds("close by", boxes[i], boxes[j], th):
            out.append(RelationEdge(nodes[i].id, nodes[j].id, close))
        for s, d in ((i, j), (j, i)):
            if relation_holds("above", boxes[s], boxes[d], th):
                out.append(RelationEdge(nodes[s].id, nodes[d].id, vocab.predicate_id("above")))
                if relation_holds("standing on", boxes[s], boxes[d], th):
                    out.append(
                        RelationEdge(nodes[s].id, nodes[d].id, vocab.predicate_id("standing on"))
                    )
    return out


def derive_style(scene: Scene, vocab: Vocabulary | None = None) -> list[RelationEdge]:
    vocab = vocab or default_vocabulary()
    nodes = scene.graph.nodes
    for n, attrs in zip(nodes, scene.attributes):
        missing = [k for k in STYLE_KEYS if k not in attrs]
        if missing:
            raise StyleAttributeError(f"node {n.id} lacks style attributes {missing}")
    out = []
    for i, j in combinations(range(len(nodes)), 2):
        ai, aj = scene.attributes[i], scene.attributes[j]
        for name, key in STYLE_RULES.items():
            if ai[key] is not None and ai[key] == aj[key]:
                out.append(RelationEdge(nodes[i].id, nodes[j].id, vocab.predicate_id(name)))
    return out


def annotate(
    scene: Scene,
    thresholds: RelationThresholds | None = None,
    vocab: Vocabulary | None = None,
    style: bool = True,
) -> SceneGraph:
    """Union of the spatial, support and style passes over ``scene``'s nodes."""
    vocab = vocab or default_vocabulary()
    edges = derive_spatial(scene, thresholds, vocab) + derive_support(scene, thresholds, vocab)
    if style:
        edges += derive_style(scene, vocab)
    graph = SceneGraph(scene.graph.nodes, tuple(dict.fromkeys(edges)))
    problems = validate_graph(graph, vocab)
    assert not problems, problems
    return graph


def relation_histogram(graphs, vocab: Vocabulary | None = None) -> dict[str, int]:
    vocab = vocab or default_vocabulary()
    counts = Counter(vocab.predicate_name(e.predicate_id) for g in graphs for e in g.edges)
    return {name: counts.get(name, 0) for name in vocab.predicate_names}


def annotate_directory(
    scenes_dir: str | Path,
    out_dir: str | Path,
    thresholds: RelationThresholds | None = None,
    vocab: Vocabulary | None = None,
) -> dict[str, Any]:
    """Annotate every ``*.json`` scene in ``scenes_dir`` and write a manifest."""
    vocab = vocab or default_vocabulary()
    th = thresholds or RelationThresholds()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    graphs, rooms, files = [], Counter(), []
    for path in sorted(Path(scenes_dir).glob("*.json")):
        scene = load_scene(path, vocab)
        has_style = all(all(k in a for k in STYLE_KEYS) for a in scene.attributes)
        graph = annotate(scene, th, vocab, style=has_style)
        save_scene(scene.with_graph(graph), out / path.name, vocab)
        graphs.append(graph)
        rooms[scene.room_type] += 1
        files.append(path.name)
    manifest = {
        "scenes": files,
        "room_counts": dict(sorted(rooms.items())),
        "relation_counts": relation_histogram(graphs, vocab),
        "object_counts": dict(
            sorted(Counter(vocab.class_name(c) for g in graphs for c in g.class_ids).items())
        ),
        "thresholds": asdict(th),
    }
    (out / "manifest.json").write_text(dump_json(manifest))
    return manifest

