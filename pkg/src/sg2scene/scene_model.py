"""Scene and scene-graph data model plus graph editing operations.

Coordinate frame (shared by the annotator, evaluator and renderer): right
handed, +z up, yaw measured about +z, "front" points along -y of the room.
A box translation is the box centroid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

NUM_ANGLE_BINS = 24
ROOM_TYPES = ("bedroom", "living", "dining")
STYLE_KEYS = ("material", "shape", "super_category")


class SceneError(ValueError):
    """Base class for data-model errors."""


class VocabularyError(SceneError):
    pass


class GraphReferenceError(SceneError):
    pass


class NumericError(SceneError):
    pass


class AlignmentError(SceneError):
    pass


class Vocabulary:
    """Node classes and edge predicates, loaded from a JSON asset."""

    def __init__(self, data: dict[str, Any]):
        self.version = data.get("version", 1)
        self._classes = [dict(c) for c in data["node_classes"]]
        self._predicates = [dict(p) for p in data["predicates"]]
        self.class_names = tuple(c["name"] for c in self._classes)
        self.predicate_names = tuple(p["name"] for p in self._predicates)
        self._class_index = {n: i for i, n in enumerate(self.class_names)}
        self._pred_index: dict[str, int] = {}
        for i, p in enumerate(self._predicates):
            self._pred_index[p["name"]] = i
            for alias in p.get("aliases", ()):
                self._pred_index[alias] = i

    @classmethod
    def load(cls, path: str | Path | None = None) -> "Vocabulary":
        if path is None:
            return default_vocabulary()
        with open(path) as f:
            return cls(json.load(f))

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def num_predicates(self) -> int:
        return len(self.predicate_names)

    def class_id(self, name: str | int) -> int:
        if isinstance(name, int):
            self.check_class(name)
            return name
        try:
            return self._class_index[name]
        except KeyError:
            raise VocabularyError(f"unknown node class {name!r}") from None

    def predicate_id(self, name: str | int) -> int:
        if isinstance(name, int):
            self.check_predicate(name)
            return name
        try:
            return self._pred_index[name]
        except KeyError:
            raise VocabularyError(f"unknown predicate {name!r}") from None

    def check_class(self, class_id: int) -> None:
        if not 0 <= class_id < self.num_classes:
            raise VocabularyError(f"class id {class_id} outside vocabulary of {self.num_classes}")

    def check_predicate(self, predicate_id: int) -> None:
        if not 0 <= predicate_id < self.num_predicates:
            raise VocabularyError(
                f"predicate id {predicate_id} outside vocabulary of {self.num_predicates}"
            )

    def class_name(self, class_id: int) -> str:
        self.check_class(class_id)
        return self.class_names[class_id]

    def predicate_name(self, predicate_id: int) -> str:
        self.check_predicate(predicate_id)
        return self.predicate_names[predicate_id]

    def phrase(self, class_id: int) -> str:
        """Human-readable class text used for prompts."""
        return self.class_name(class_id).replace("_", " ")

    def is_shape_class(self, class_id: int) -> bool:
        return bool(self._classes[class_id].get("shape", True))

    def super_category(self, class_id: int) -> str:
        return self._classes[class_id].get("super_category", self.class_names[class_id])

    def predicate_group(self, predicate_id: int) -> str:
        return self._predicates[predicate_id]["group"]


@lru_cache(maxsize=1)
def default_vocabulary() -> Vocabulary:
    text = resources.files("sg2scene").joinpath("assets/vocab.json").read_text()
    return Vocabulary(json.loads(text))


@dataclass(frozen=True)
class ObjectNode:
    """A graph node. The learnable class embedding is looked up by ``class_id``
    in the context module's embedding table."""

    id: int
    class_id: int


@dataclass(frozen=True)
class RelationEdge:
    """Directed relation read as "src <predicate> dst"."""

    src: int
    dst: int
    predicate_id: int

    def triple(self) -> tuple[int, int, int]:
        return (self.src, self.dst, self.predicate_id)


@dataclass(frozen=True)
class SceneGraph:
    nodes: tuple[ObjectNode, ...] = ()
    edges: tuple[RelationEdge, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))

    @classmethod
    def from_classes(
        cls, class_ids: Sequence[int], triples: Iterable[tuple[int, int, int]] = ()
    ) -> "SceneGraph":
        nodes = tuple(ObjectNode(i, c) for i, c in enumerate(class_ids))
        edges = tuple(RelationEdge(s, d, p) for s, d, p in triples)
        return cls(nodes, edges)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def class_ids(self) -> list[int]:
        return [n.class_id for n in self.nodes]

    def node_index(self, node_id: int) -> int:
        for k, n in enumerate(self.nodes):
            if n.id == node_id:
                return k
        raise GraphReferenceError(f"node {node_id} does not exist")

    def find_edge(self, src: int, dst: int) -> int | None:
        for k, e in enumerate(self.edges):
            if e.src == src and e.dst == dst:
                return k
        return None

    def edge_index_array(self) -> list[tuple[int, int]]:
        """Edges as (row, row) positions into ``nodes``."""
        pos = {n.id: k for k, n in enumerate(self.nodes)}
        return [(pos[e.src], pos[e.dst]) for e in self.edges]


def _wrap_angle(alpha: float) -> float:
    two_pi = 2.0 * math.pi
    a = math.fmod(alpha, two_pi)
    if a < 0:
        a += two_pi
    # fmod of a tiny negative number can round up to exactly 2*pi
    if a >= two_pi:
        a = 0.0
    return a


def canonicalize_yaw(alpha: float, num_bins: int = NUM_ANGLE_BINS) -> tuple[float, int]:
    """Wrap ``alpha`` into [0, 2*pi) and return it with its rotation bin."""
    if not math.isfinite(alpha):
        raise NumericError(f"yaw must be finite, got {alpha}")
    a = _wrap_angle(float(alpha))
    label = int(math.floor(a * num_bins / (2.0 * math.pi)))
    return a, min(label, num_bins - 1)


def bin_center(label: int, num_bins: int = NUM_ANGLE_BINS) -> float:
    if not 0 <= label < num_bins:
        raise ValueError(f"bin {label} outside [0, {num_bins})")
    return (label + 0.5) * 2.0 * math.pi / num_bins


@dataclass(frozen=True)
class BoundingBox:
    size: tuple[float, float, float]
    translation: tuple[float, float, float]
    yaw: float = 0.0
    num_bins: int = NUM_ANGLE_BINS
    bin_label: int = field(init=False)

    def __post_init__(self):
        size = tuple(float(v) for v in self.size)
        trans = tuple(float(v) for v in self.translation)
        if len(size) != 3 or len(trans) != 3:
            raise SceneError("size and translation must be 3-vectors")
        if not all(math.isfinite(v) for v in size + trans):
            raise NumericError("box parameters must be finite")
        if not all(v > 0 for v in size):
            raise SceneError(f"box sizes must be strictly positive, got {size}")
        yaw, label = canonicalize_yaw(self.yaw, self.num_bins)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "translation", trans)
        object.__setattr__(self, "yaw", yaw)
        object.__setattr__(self, "bin_label", label)

    @property
    def volume(self) -> float:
        return self.size[0] * self.size[1] * self.size[2]

    @property
    def bottom(self) -> float:
        return self.translation[2] - 0.5 * self.size[2]

    @property
    def top(self) -> float:
        return self.translation[2] + 0.5 * self.size[2]

    def footprint_corners(self) -> list[tuple[float, float]]:
        """Counter-clockwise xy corners of the yawed footprint."""
        hx, hy = 0.5 * self.size[0], 0.5 * self.size[1]
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        cx, cy = self.translation[0], self.translation[1]
        out = []
        for dx, dy in ((-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)):
            out.append((cx + c * dx - s * dy, cy + s * dx + c * dy))
        return out

    def to_dict(self) -> dict[str, Any]:
        return {"size": list(self.size), "translation": list(self.translation), "yaw": self.yaw}

    @classmethod
    def from_dict(cls, d: dict[str, Any], num_bins: int = NUM_ANGLE_BINS) -> "BoundingBox":
        return cls(tuple(d["size"]), tuple(d["translation"]), float(d.get("yaw", 0.0)), num_bins)


@dataclass(frozen=True)
class Scene:
    graph: SceneGraph
    boxes: tuple[BoundingBox, ...]
    room_type: str = "bedroom"
    attributes: tuple[dict, ...] = ()
    shapes: tuple[Any, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        attrs = tuple(dict(a) for a in self.attributes) or tuple({} for _ in self.graph.nodes)
        object.__setattr__(self, "attributes", attrs)
        if len(self.boxes) != self.graph.num_nodes:
            raise AlignmentError(
                f"{len(self.boxes)} boxes for {self.graph.num_nodes} nodes"
            )
        if len(self.attributes) != self.graph.num_nodes:
            raise AlignmentError("attributes must be index-aligned with nodes")
        if self.shapes is not None:
            object.__setattr__(self, "shapes", tuple(self.shapes))
            if len(self.shapes) != self.graph.num_nodes:
                raise AlignmentError("shapes must be index-aligned with nodes")
        if self.room_type not in ROOM_TYPES:
            raise SceneError(f"room_type must be one of {ROOM_TYPES}, got {self.room_type!r}")

    def with_graph(self, graph: SceneGraph) -> "Scene":
        return replace(self, graph=graph)


# -- graph operations -------------------------------------------------------


def validate_graph(graph: SceneGraph, vocab: Vocabulary | None = None) -> list[str]:
    """Return a list of invariant violations; empty when the graph is well formed."""
    vocab = vocab or default_vocabulary()
    problems: list[str] = []
    ids = set()
    for n in graph.nodes:
        if n.id in ids:
            problems.append(f"duplicate node id: {n.id}")
        ids.add(n.id)
        if not 0 <= n.class_id < vocab.num_classes:
            problems.append(f"class id out of vocabulary: node {n.id} has {n.class_id}")
    seen = set()
    for e in graph.edges:
        if e.src == e.dst:
            problems.append(f"src ≠ dst: self-loop on node {e.src}")
        for end in (e.src, e.dst):
            if end not in ids:
                problems.append(f"missing endpoint: edge {e.triple()} references node {end}")
        if not 0 <= e.predicate_id < vocab.num_predicates:
            problems.append(f"predicate out of vocabulary: edge {e.triple()}")
        if e.triple() in seen:
            problems.append(f"duplicate edge: {e.triple()}")
        seen.add(e.triple())
    return problems


def add_node(
    graph: SceneGraph,
    class_id: int | str,
    edges: Iterable[tuple[int, int | str, str]] = (),
    vocab: Vocabulary | None = None,
) -> SceneGraph:
    """Return a new graph with one node of ``class_id`` appended.

    ``edges`` holds ``(other_node, predicate, direction)`` where direction is
    "out" (new node is the subject) or "in" (new node is the object).
    """
    vocab = vocab or default_vocabulary()
    cid = vocab.class_id(class_id)
    new_id = max((n.id for n in graph.nodes), default=-1) + 1
    existing = {n.id for n in graph.nodes}
    added = []
    for other, predicate, direction in edges:
        if other not in existing:
            raise GraphReferenceError(f"edge references missing node {other}")
        pid = vocab.predicate_id(predicate)
        if direction == "out":
            added.append(RelationEdge(new_id, other, pid))
        elif direction == "in":
            added.append(RelationEdge(other, new_id, pid))
        else:
            raise ValueError(f"direction must be 'in' or 'out', got {direction!r}")
    nodes = graph.nodes + (ObjectNode(new_id, cid),)
    return SceneGraph(nodes, graph.edges + tuple(dict.fromkeys(added)))


def change_relation(
    graph: SceneGraph,
    src: int,
    dst: int,
    new_predicate: int | str,
    vocab: Vocabulary | None = None,
) -> SceneGraph:
    vocab = vocab or default_vocabulary()
    pid = vocab.predicate_id(new_predicate)
    k = graph.find_edge(src, dst)
    if k is None:
        raise GraphReferenceError(f"no edge {src} -> {dst}")
    edges = list(graph.edges)
    edges[k] = RelationEdge(src, dst, pid)
    # drop a now-duplicated triple, keeping the edited position
    out, seen = [], set()
    for i, e in enumerate(edges):
        if e.triple() in seen and i != k:
            continue
        seen.add(e.triple())
        out.append(e)
    return SceneGraph(graph.nodes, tuple(out))


# -- serialization -----------------------------------------------------------


def scene_to_dict(scene: Scene, vocab: Vocabulary | None = None) -> dict[str, Any]:
    vocab = vocab or default_vocabulary()
    return {
        "room_type": scene.room_type,
        "nodes": [
            {"id": n.id, "class": vocab.class_name(n.class_id), "attributes": dict(a)}
            for n, a in zip(scene.graph.nodes, scene.attributes)
        ],
        "edges": [
            {"src": e.src, "dst": e.dst, "predicate": vocab.predicate_name(e.predicate_id)}
            for e in scene.graph.edges
        ],
        "boxes": [b.to_dict() for b in scene.boxes],
    }


def graph_from_dict(d: dict[str, Any], vocab: Vocabulary | None = None) -> SceneGraph:
    vocab = vocab or default_vocabulary()
    nodes = tuple(ObjectNode(int(n["id"]), vocab.class_id(n["class"])) for n in d["nodes"])
    edges = tuple(
        RelationEdge(int(e["src"]), int(e["dst"]), vocab.predicate_id(e["predicate"]))
        for e in d.get("edges", [])
    )
    return SceneGraph(nodes, edges)


def scene_from_dict(d: dict[str, Any], vocab: Vocabulary | None = None) -> Scene:
    vocab = vocab or default_vocabulary()
    graph = graph_from_dict(d, vocab)
    boxes = tuple(BoundingBox.from_dict(b) for b in d["boxes"])
    attrs = tuple(n.get("attributes", {}) for n in d["nodes"])
    return Scene(graph, boxes, d.get("room_type", "bedroom"), attrs)


def dump_json(obj: Any) -> str:
    """Canonical JSON text: sorted keys, fixed separators, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=1, ensure_ascii=False) + "\n"


def save_scene(scene: Scene, path: str | Path, vocab: Vocabulary | None = None) -> None:
    Path(path).write_text(dump_json(scene_to_dict(scene, vocab)))


def load_scene(path: str | Path, vocab: Vocabulary | None = None) -> Scene:
    with open(path) as f:
        return scene_from_dict(json.load(f), vocab)
