import math

import pytest
from hypothesis import given, strategies as st

from sg2scene.scene_model import (
    BoundingBox,
    GraphReferenceError,
    NumericError,
    ObjectNode,
    RelationEdge,
    Scene,
    SceneGraph,
    VocabularyError,
    AlignmentError,
    add_node,
    bin_center,
    canonicalize_yaw,
    change_relation,
    default_vocabulary,
    graph_from_dict,
    load_scene,
    save_scene,
    scene_from_dict,
    scene_to_dict,
    validate_graph,
)

V = default_vocabulary()


def three_node_graph():
    return SceneGraph.from_classes(
        [V.class_id("bed"), V.class_id("nightstand"), V.class_id("table")],
        [(1, 0, V.predicate_id("shorter than")), (0, 2, V.predicate_id("left of"))],
    )


def test_vocabulary_lookups():
    assert V.num_classes == 15 and V.num_predicates == 15
    assert V.predicate_id("left") == V.predicate_id("left of")
    assert V.predicate_id("larger") == V.predicate_id("bigger than")
    assert not V.is_shape_class(V.class_id("floor"))
    with pytest.raises(VocabularyError):
        V.class_id("spaceship")
    with pytest.raises(VocabularyError):
        V.predicate_id("orbiting")


def test_add_node_base_case():
    g = add_node(SceneGraph(), "bed")
    assert g.num_nodes == 1 and len(g.edges) == 0


def test_add_node_counts_edges():
    g = SceneGraph.from_classes([V.class_id("table"), V.class_id("bed")], [(0, 1, 0)])
    g2 = add_node(g, "chair", [(0, "left", "out")])
    assert g2.num_nodes == 3 and len(g2.edges) == len(g.edges) + 1
    assert g2.edges[-1] == RelationEdge(2, 0, V.predicate_id("left of"))
    assert g.num_nodes == 2  # input untouched


def test_add_node_missing_endpoint():
    g = SceneGraph.from_classes([1, 2])
    with pytest.raises(GraphReferenceError):
        add_node(g, "chair", [(7, "left of", "out")])
    with pytest.raises(VocabularyError):
        add_node(g, "not-a-class")


def test_change_relation_bed_nightstand_example():
    g = three_node_graph()
    g2 = change_relation(g, 1, 0, "taller than")
    assert g2.num_nodes == g.num_nodes
    assert g2.edges[g2.find_edge(1, 0)].predicate_id == V.predicate_id("taller than")
    assert validate_graph(g2) == []


def test_change_relation_identity_and_errors():
    g = three_node_graph()
    assert change_relation(g, 1, 0, "shorter than") == g
    with pytest.raises(GraphReferenceError):
        change_relation(g, 2, 1, "above")
    with pytest.raises(VocabularyError):
        change_relation(g, 1, 0, "orbiting")


def test_validate_graph_messages():
    assert validate_graph(three_node_graph()) == []
    loop = SceneGraph((ObjectNode(0, 1),), (RelationEdge(0, 0, 0),))
    assert [m for m in validate_graph(loop) if "src ≠ dst" in m] and len(validate_graph(loop)) == 1
    dup = SceneGraph((ObjectNode(0, 1), ObjectNode(1, 2)), (RelationEdge(0, 1, 3), RelationEdge(0, 1, 3)))
    problems = validate_graph(dup)
    assert len(problems) == 1 and "duplicate edge" in problems[0]
    dangling = SceneGraph((ObjectNode(0, 1),), (RelationEdge(0, 4, 0),))
    assert any("missing endpoint" in m for m in validate_graph(dangling))


def test_canonicalize_yaw_examples():
    assert canonicalize_yaw(0.0) == (0.0, 0)
    a, label = canonicalize_yaw(-math.pi / 2)
    # oracle: add 2*pi, then floor-divide by 15 degree bins
    assert a == pytest.approx(3 * math.pi / 2, abs=1e-12) and label == 18
    assert canonicalize_yaw(2 * math.pi) == (0.0, 0)
    with pytest.raises(NumericError):
        canonicalize_yaw(float("nan"))


@given(st.floats(min_value=-1e4, max_value=1e4, allow_nan=False))
def test_canonicalize_yaw_idempotent(alpha):
    a, label = canonicalize_yaw(alpha)
    assert 0.0 <= a < 2 * math.pi and 0 <= label < 24
    assert canonicalize_yaw(a) == (a, label)


@given(st.integers(min_value=0, max_value=23))
def test_bin_center_round_trip(label):
    assert canonicalize_yaw(bin_center(label))[1] == label


def test_bin_center_value():
    assert math.degrees(bin_center(18)) == pytest.approx(277.5)


def test_bounding_box_invariants():
    b = BoundingBox((1, 2, 3), (0, 0, 1.5), -math.pi / 2)
    assert b.bin_label == 18 and b.volume == 6 and b.bottom == 0 and b.top == 3
    with pytest.raises(Exception):
        BoundingBox((1, 0, 1), (0, 0, 0))
    with pytest.raises(NumericError):
        BoundingBox((1, 1, 1), (0, float("inf"), 0))


def test_scene_alignment():
    g = three_node_graph()
    with pytest.raises(AlignmentError):
        Scene(g, [BoundingBox((1, 1, 1), (0, 0, 0.5))])


def test_json_round_trip(tmp_path):
    g = three_node_graph()
    boxes = [BoundingBox((1, 1, 1), (k, 0, 0.5), 0.3 * k) for k in range(3)]
    attrs = [{"material": "wood", "shape": f"s{k}", "super_category": "x"} for k in range(3)]
    scene = Scene(g, boxes, "bedroom", attrs)
    d = scene_to_dict(scene)
    assert set(d) == {"room_type", "nodes", "edges", "boxes"}
    assert scene_from_dict(d) == scene
    save_scene(scene, tmp_path / "s.json")
    assert load_scene(tmp_path / "s.json") == scene
    assert graph_from_dict({"nodes": d["nodes"]}).num_nodes == 3


@given(
    st.lists(st.integers(min_value=0, max_value=14), min_size=1, max_size=6),
    st.data(),
)
def test_edit_operations_are_pure_and_valid(classes, data):
    g = SceneGraph.from_classes(classes)
    n = len(classes)
    other = data.draw(st.integers(min_value=0, max_value=n - 1))
    pred = data.draw(st.integers(min_value=0, max_value=14))
    g2 = add_node(g, data.draw(st.integers(min_value=0, max_value=14)), [(other, pred, "in")])
    assert g.num_nodes == n and validate_graph(g2) == []
    g3 = change_relation(g2, other, n, (pred + 1) % 15)
    assert validate_graph(g3) == [] and g2.edges[0].predicate_id == pred
