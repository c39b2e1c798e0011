import numpy as np
import pytest
import torch

from sg2scene.batch import collate
from sg2scene.context import (
    BoxEncoder,
    ContextualGraph,
    HashTextEmbedding,
    ModeError,
    PromptTable,
    TextEmbeddingProvider,
    cosine,
    edge_prompt,
)
from sg2scene.scene_model import BoundingBox, NumericError, Scene, SceneGraph, VocabularyError, default_vocabulary

V = default_vocabulary()


@pytest.fixture(scope="module")
def table():
    return PromptTable(HashTextEmbedding())


def test_provider_contract(table):
    assert isinstance(table.provider, TextEmbeddingProvider)
    v = table.embed_node_prompt("bed")
    assert v.shape == (512,)
    assert np.array_equal(v, PromptTable(HashTextEmbedding()).embed_node_prompt("bed"))
    assert cosine(v, table.embed_node_prompt("table")) < 1.0
    with pytest.raises(VocabularyError):
        table.embed_node_prompt("dragon")


def test_edge_prompt_text_and_order(table):
    assert edge_prompt(V, V.class_id("bed"), V.predicate_id("in front of"), V.class_id("table")) == "bed in front of table"
    a = table.embed_edge_prompt("bed", "in front of", "table")
    b = table.embed_edge_prompt("table", "in front of", "bed")
    expected = table.provider.embed(["bed in front of table"])[0]
    assert np.array_equal(a, expected)
    assert not np.allclose(a, b)
    assert np.array_equal(a, table.embed_edge_prompt("bed", "front", "table"))
    with pytest.raises(VocabularyError):
        table.embed_edge_prompt("bed", "orbiting", "table")


def test_clip_plugin_distinct_classes():
    """Real text encoder plug-in, when its weights are available locally."""
    pytest.importorskip("transformers")
    from sg2scene.context import ClipTextEmbedding

    try:
        provider = ClipTextEmbedding()
    except Exception as exc:  # no network or cached weights
        pytest.skip(f"CLIP weights unavailable: {exc}")
    t = PromptTable(provider)
    assert cosine(t.embed_node_prompt("bed"), t.embed_node_prompt("table")) < 1.0


def test_box_encoder_zero_weights_and_shape():
    enc = BoxEncoder(64)
    x = torch.randn(5, 7)
    assert enc(x).shape == (5, 64)
    for p in enc.parameters():
        torch.nn.init.zeros_(p)
    assert torch.equal(enc(x), torch.zeros(5, 64))
    with pytest.raises(NumericError):
        enc(torch.full((1, 7), float("nan")))


def test_box_encoder_gradient_matches_finite_differences():
    torch.manual_seed(0)
    enc = BoxEncoder(16).double()
    gen = torch.Generator().manual_seed(0)
    for _ in range(10):
        x = torch.randn(1, 7, generator=gen, dtype=torch.float64, requires_grad=True)
        w = torch.randn(16, generator=gen, dtype=torch.float64)
        f = lambda v: (enc(v) * w).sum()
        (g,) = torch.autograd.grad(f(x), x)
        h = 1e-6
        fd = torch.tensor([
            (f(x.detach() + h * e[None]) - f(x.detach() - h * e[None])).item() / (2 * h)
            for e in torch.eye(7, dtype=torch.float64)
        ], dtype=torch.float64)
        # derivative with respect to the size components (first three inputs)
        assert ((g[0, :3] - fd[:3]).norm() / g[0, :3].norm()) < 1e-4


def small_scene():
    g = SceneGraph.from_classes(
        [V.class_id("bed"), V.class_id("nightstand"), V.class_id("lamp")],
        [(1, 0, V.predicate_id("left of")), (2, 1, V.predicate_id("standing on"))],
    )
    boxes = [BoundingBox((2, 1.6, 0.5), (0, 0, 0.25)), BoundingBox((0.5, 0.5, 0.5), (-1.5, 0, 0.25)), BoundingBox((0.3, 0.3, 0.4), (-1.5, 0, 0.7))]
    return Scene(g, boxes)


def test_build_bcg_modes():
    torch.manual_seed(0)
    ctx_net = ContextualGraph(HashTextEmbedding(), V)
    scene = small_scene()
    batch = collate([scene])
    ctx = ctx_net(batch)
    assert not ctx.boxed and ctx.node_features().shape == (3, 512 + 64)
    assert ctx.edge_features().shape == (2, 512 + 64)
    boxed = ctx_net(batch, batch.box_tensor())
    assert boxed.boxed and boxed.box_embedding.shape == (3, 64)
    assert boxed.node_features().shape == (3, 512 + 64 + 64)
    with pytest.raises(ModeError):
        ctx_net(batch, batch.box_tensor()[:2])


def test_prompt_frozen_learnables_trained():
    torch.manual_seed(0)
    ctx_net = ContextualGraph(HashTextEmbedding(), V)
    batch = collate([small_scene()])
    ctx = ctx_net(batch, batch.box_tensor())
    (ctx.node_features().sum() + ctx.edge_features().sum()).backward()
    assert not ctx.node_prompt.requires_grad and not ctx.edge_prompt.requires_grad
    assert ctx_net.node_embedding.weight.grad is not None
    assert ctx_net.edge_embedding.weight.grad is not None
    assert all(p.grad is not None for p in ctx_net.box_encoder.parameters())


def test_feature_construction_permutation_equivariant():
    torch.manual_seed(0)
    ctx_net = ContextualGraph(HashTextEmbedding(), V)
    scene = small_scene()
    perm = [2, 0, 1]
    nodes = [scene.graph.nodes[i] for i in perm]
    permuted = Scene(SceneGraph(nodes, scene.graph.edges), [scene.boxes[i] for i in perm])
    a, b = collate([scene]), collate([permuted])
    fa = ctx_net(a, a.box_tensor()).node_features()
    fb = ctx_net(b, b.box_tensor()).node_features()
    assert torch.allclose(fa[perm], fb)
