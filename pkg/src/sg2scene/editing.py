"""Replayable graph edit scripts.

A script is a JSON list of commands applied in order::

    [{"op": "add_node", "class": "lamp",
      "edges": [{"node": 2, "predicate": "left of", "direction": "out"}]},
     {"op": "change_relation", "src": 3, "dst": 1, "predicate": "taller than"},
     {"op": "change_relation", "subject": "nightstand", "object": "bed",
      "from": "shorter than", "predicate": "taller than"}]

``change_relation`` addresses an edge either by node ids or by the classes
of its endpoints (first matching edge, optionally filtered by its current
predicate).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Sequence

from .scene_model import (
    GraphReferenceError,
    SceneGraph,
    Vocabulary,
    add_node,
    change_relation,
    default_vocabulary,
    validate_graph,
)


class EditError(ValueError):
    pass


def _find_edge_by_class(graph: SceneGraph, cmd: dict, vocab: Vocabulary) -> tuple[int, int]:
    subj, obj = vocab.class_id(cmd["subject"]), vocab.class_id(cmd["object"])
    current = vocab.predicate_id(cmd["from"]) if "from" in cmd else None
    cls = {n.id: n.class_id for n in graph.nodes}
    for e in graph.edges:
        if cls[e.src] == subj and cls[e.dst] == obj and current in (None, e.predicate_id):
            return e.src, e.dst
    raise GraphReferenceError(
        f"no edge {cmd['subject']} -> {cmd['object']}" + (f" with {cmd['from']!r}" if current is not None else "")
    )


def apply_edit(graph: SceneGraph, cmd: dict[str, Any], vocab: Vocabulary | None = None) -> SceneGraph:
    vocab = vocab or default_vocabulary()
    op = cmd.get("op")
    if op == "add_node":
        edges = [(int(e["node"]), e["predicate"], e.get("direction", "out")) for e in cmd.get("edges", [])]
        return add_node(graph, cmd["class"], edges, vocab)
    if op == "change_relation":
        if "src" in cmd:
            src, dst = int(cmd["src"]), int(cmd["dst"])
        else:
            src, dst = _find_edge_by_class(graph, cmd, vocab)
        return change_relation(graph, src, dst, cmd["predicate"], vocab)
    raise EditError(f"unknown edit op {op!r}")


def apply_edits(graph: SceneGraph, script: Sequence[dict], vocab: Vocabulary | None = None) -> SceneGraph:
    vocab = vocab or default_vocabulary()
    for k, cmd in enumerate(script):
        try:
            graph = apply_edit(graph, cmd, vocab)
        except (KeyError, TypeError) as exc:
            raise EditError(f"edit {k}: malformed command {cmd!r}") from exc
    problems = validate_graph(graph, vocab)
    if problems:
        raise EditError("; ".join(problems))
    return graph


def load_edit_script(path: str | Path) -> list[dict]:
    script = json.loads(Path(path).read_text())
    if not isinstance(script, list):
        raise EditError("an edit script is a JSON list of commands")
    return script
