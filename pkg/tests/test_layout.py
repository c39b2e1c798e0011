import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from sg2scene.batch import collate
from sg2scene.context import ContextualGraph, HashTextEmbedding, ModeError
from sg2scene.layout import (
    LatentDistribution,
    LayoutDecoder,
    LayoutPrediction,
    PosteriorEncoder,
    assemble_layout,
    kl_loss,
    layout_loss,
    sample_latent,
)
from sg2scene.scene_model import AlignmentError, BoundingBox, NumericError, Scene, SceneGraph, default_vocabulary

V = default_vocabulary()


def small_batch():
    g = SceneGraph.from_classes(
        [V.class_id("bed"), V.class_id("nightstand"), V.class_id("lamp")],
        [(1, 0, V.predicate_id("left of")), (2, 1, V.predicate_id("standing on"))],
    )
    boxes = [
        BoundingBox((2, 1.6, 0.5), (0, 0, 0.25)),
        BoundingBox((0.5, 0.5, 0.5), (-1.5, 0, 0.25)),
        BoundingBox((0.3, 0.3, 0.4), (-1.5, 0, 0.7)),
    ]
    return collate([Scene(g, boxes)])


# -- KL ---------------------------------------------------------------------


def test_kl_examples():
    assert kl_loss(LatentDistribution.standard(4, 128)).item() == 0.0
    one = LatentDistribution(torch.ones(1, 1), torch.zeros(1, 1))
    assert kl_loss(one).item() == pytest.approx(0.5)
    with pytest.raises(NumericError):
        kl_loss(LatentDistribution(torch.tensor([[math.nan]]), torch.zeros(1, 1)))


def test_kl_matches_monte_carlo():
    gen = torch.Generator().manual_seed(0)
    mu = torch.tensor([[0.7, -1.2, 0.3]], dtype=torch.float64)
    log_sigma = torch.tensor([[-0.4, 0.5, 0.1]], dtype=torch.float64)
    closed = kl_loss(LatentDistribution(mu, log_sigma)).item()
    sigma = log_sigma.exp()
    z = mu + sigma * torch.randn(10**6, 3, generator=gen, dtype=torch.float64)
    log_q = (-0.5 * ((z - mu) / sigma) ** 2 - log_sigma).sum(-1)
    log_p = (-0.5 * z**2).sum(-1)
    estimate = (log_q - log_p).mean().item()
    assert abs(estimate - closed) / closed < 0.02


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-3, 3), min_size=1, max_size=6),
    st.lists(st.floats(-2, 2), min_size=1, max_size=6),
)
def test_kl_nonnegative_zero_only_at_standard(mus, logs):
    k = min(len(mus), len(logs))
    mu = torch.tensor([mus[:k]], dtype=torch.float64)
    ls = torch.tensor([logs[:k]], dtype=torch.float64)
    value = kl_loss(LatentDistribution(mu, ls)).item()
    assert value >= 0.0
    if mu.abs().max() > 1e-3 or ls.abs().max() > 1e-3:
        assert value > 0.0


# -- sampling ---------------------------------------------------------------


def test_sample_latent_reproducible_and_degenerate():
    dist = LatentDistribution(torch.randn(3, 8), torch.full((3, 8), -10.0))
    a = sample_latent(dist, torch.Generator().manual_seed(5))
    b = sample_latent(dist, torch.Generator().manual_seed(5))
    assert torch.equal(a, b)
    assert torch.allclose(a, dist.mu, atol=1e-3)


def test_sample_latent_mean_statistics_and_gradient():
    n = 10**5
    mu = torch.full((n, 1), 0.8, dtype=torch.float64, requires_grad=True)
    ls = torch.full((n, 1), math.log(1.5), dtype=torch.float64, requires_grad=True)
    z = sample_latent(LatentDistribution(mu, ls), torch.Generator().manual_seed(1))
    assert abs(z.mean().item() - 0.8) < 3 * 1.5 / math.sqrt(n)
    z.sum().backward()
    assert mu.grad.abs().sum() > 0 and ls.grad.abs().sum() > 0


# -- posterior encoder ------------------------------------------------------


def test_posterior_shapes_zero_heads_and_box_gradient():
    torch.manual_seed(0)
    ctx_net = ContextualGraph(HashTextEmbedding(), V)
    batch = small_batch()
    boxes = batch.box_tensor().clone().requires_grad_(True)
    ctx = ctx_net(batch, boxes)
    enc = PosteriorEncoder(ctx.node_features().shape[1], ctx.edge_features().shape[1], hidden=32, num_layers=2)
    dist = enc(ctx, batch.edges)
    assert dist.mu.shape == (3, 128) and dist.log_sigma.shape == (3, 128)
    (g,) = torch.autograd.grad(dist.mu.sum(), boxes)
    assert (g.abs().sum(-1) > 0).all()

    for head in (enc.mu_head, enc.log_sigma_head):
        for p in head.parameters():
            torch.nn.init.zeros_(p)
    dist = enc(ctx_net(batch, batch.box_tensor()), batch.edges)
    assert torch.equal(dist.mu, torch.zeros(3, 128)) and torch.equal(dist.sigma, torch.ones(3, 128))
    with pytest.raises(ModeError):
        enc(ctx_net(batch), batch.edges)


def test_decoder_shapes_and_determinism():
    torch.manual_seed(0)
    dec = LayoutDecoder(10, 4, hidden=16, num_layers=2)
    nodes, ef, edges = torch.randn(5, 10), torch.randn(3, 4), torch.tensor([[0, 1], [1, 2], [4, 3]])
    p1, p2 = dec(nodes, ef, edges), dec(nodes, ef, edges)
    assert p1.sizes.shape == (5, 3) and p1.translations.shape == (5, 3) and p1.angle_logits.shape == (5, 24)
    assert torch.equal(p1.sizes, p2.sizes) and torch.equal(p1.angle_logits, p2.angle_logits)
    assert (p1.sizes > 0).all()
    bins = p1.angle_logits.argmax(-1)
    assert ((bins >= 0) & (bins < 24)).all()


# -- layout loss ------------------------------------------------------------


def one_hot_logits(bins, margin=20.0, num_bins=24):
    return torch.nn.functional.one_hot(bins, num_bins).double() * margin


def test_layout_loss_examples():
    n = 4
    sizes = torch.rand(n, 3, dtype=torch.float64) + 0.5
    trans = torch.randn(n, 3, dtype=torch.float64)
    bins = torch.tensor([0, 5, 18, 23])
    perfect = LayoutPrediction(sizes.clone(), trans.clone(), one_hot_logits(bins, 40.0))
    assert layout_loss(perfect, sizes, trans, bins).item() < 1e-6
    off = sizes.clone()
    off[2, 1] += 1.0
    base = layout_loss(LayoutPrediction(sizes, trans, one_hot_logits(bins)), sizes, trans, bins).item()
    shifted = layout_loss(LayoutPrediction(off, trans, one_hot_logits(bins)), sizes, trans, bins).item()
    assert shifted - base == pytest.approx(1 / n, abs=1e-12)
    with pytest.raises(AlignmentError):
        layout_loss(perfect, sizes[:3], trans, bins)


def test_layout_loss_gradient_matches_finite_differences():
    gen = torch.Generator().manual_seed(0)
    n = 3
    sizes = torch.rand(n, 3, generator=gen, dtype=torch.float64) + 0.5
    trans = torch.randn(n, 3, generator=gen, dtype=torch.float64)
    bins = torch.tensor([1, 7, 20])
    logits = torch.randn(n, 24, generator=gen, dtype=torch.float64, requires_grad=True)
    # keep the L1 terms away from their kinks
    ps = (sizes + 0.3).requires_grad_(True)
    pt = (trans - 0.2).requires_grad_(True)
    f = lambda a, b, c: layout_loss(LayoutPrediction(a, b, c), sizes, trans, bins)
    grads = torch.autograd.grad(f(ps, pt, logits), (ps, pt, logits))
    h = 1e-6
    for k, x in enumerate((ps, pt, logits)):
        fd = torch.zeros_like(x)
        flat = fd.view(-1)
        for j in range(x.numel()):
            e = torch.zeros_like(x).view(-1)
            e[j] = h
            args_p = [ps.detach(), pt.detach(), logits.detach()]
            args_m = list(args_p)
            args_p[k] = x.detach() + e.view_as(x)
            args_m[k] = x.detach() - e.view_as(x)
            flat[j] = (f(*args_p) - f(*args_m)).item() / (2 * h)
        assert ((grads[k] - fd).norm() / grads[k].norm()).item() < 1e-4


def test_layout_loss_permutation_invariant():
    gen = torch.Generator().manual_seed(3)
    sizes, trans = torch.rand(6, 3, generator=gen), torch.randn(6, 3, generator=gen)
    bins = torch.randint(0, 24, (6,), generator=gen)
    pred = LayoutPrediction(torch.rand(6, 3, generator=gen), torch.randn(6, 3, generator=gen), torch.randn(6, 24, generator=gen))
    perm = torch.randperm(6, generator=gen)
    permuted = LayoutPrediction(pred.sizes[perm], pred.translations[perm], pred.angle_logits[perm])
    a = layout_loss(pred, sizes, trans, bins)
    b = layout_loss(permuted, sizes[perm], trans[perm], bins[perm])
    assert torch.allclose(a, b)


# -- assembly of boxes ------------------------------------------------------


def test_assemble_layout_bin_center_and_count():
    logits = torch.zeros(2, 24)
    logits[0, 18] = 5.0
    logits[1, 0] = 5.0
    pred = LayoutPrediction(torch.tensor([[1.0, 2.0, 0.5], [0.3, 0.3, 0.3]]), torch.zeros(2, 3), logits)
    boxes = assemble_layout(pred)
    assert len(boxes) == 2
    assert math.degrees(boxes[0].yaw) == pytest.approx(277.5)
    assert math.degrees(boxes[1].yaw) == pytest.approx(7.5)


def test_decoder_maps_negative_raw_sizes_positive():
    dec = LayoutDecoder(4, 2, hidden=8, num_layers=1)
    for p in dec.size_head.parameters():
        torch.nn.init.constant_(p, -5.0)
    pred = dec(torch.randn(3, 4), torch.zeros(0, 2), torch.zeros(0, 2, dtype=torch.long))
    assert (pred.sizes > 0).all()
    assert all(min(b.size) > 0 for b in assemble_layout(pred))
