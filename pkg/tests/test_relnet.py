import pytest
import torch

from sg2scene.relnet import ShapeError, TripletGCN, TripletGcnConfig, TripletGcnLayer, scatter_mean


def random_graph(n, e, gen):
    src = torch.randint(0, n, (e,), generator=gen)
    dst = (src + torch.randint(1, n, (e,), generator=gen)) % n
    return torch.stack([src, dst], 1)


def zero_(module):
    for p in module.parameters():
        torch.nn.init.zeros_(p)
    return module


def test_message_pass_zero_weights_and_shapes():
    layer = TripletGcnLayer(4, 3, 6, 5, hidden=8)
    s, e, o = torch.randn(7, 4), torch.randn(7, 3), torch.randn(7, 4)
    ps, pe, po = layer.message_pass(s, e, o)
    assert ps.shape == (7, 6) and pe.shape == (7, 5) and po.shape == (7, 6)
    zero_(layer)
    assert all((t == 0).all() for t in layer.message_pass(s, e, o))
    with pytest.raises(ShapeError):
        layer.message_pass(torch.randn(7, 5), e, o)


def test_message_pass_jacobian_matches_finite_differences():
    torch.manual_seed(0)
    layer = TripletGcnLayer(3, 2, 4, 3, hidden=6).double()
    x = torch.randn(3 + 2 + 3, dtype=torch.float64, requires_grad=True)

    def f(v):
        ps, pe, po = layer.message_pass(v[:3][None], v[3:5][None], v[5:][None])
        return torch.cat([ps, pe, po], -1)[0]

    jac = torch.autograd.functional.jacobian(f, x)
    h = 1e-6
    fd = torch.stack([(f(x + h * ei) - f(x - h * ei)) / (2 * h) for ei in torch.eye(8, dtype=torch.float64)], 1)
    rel = (jac - fd).norm() / jac.norm()
    assert rel < 1e-4


def test_aggregate_degenerate_cases():
    torch.manual_seed(1)
    layer = TripletGcnLayer(3, 2, 4, 2, hidden=5)
    psi = torch.randn(1, 4)
    u = torch.randn(1, 4)
    # isolated node: empty neighbour mean is the zero vector
    empty = scatter_mean(torch.zeros(0, 4), torch.zeros(0, dtype=torch.long), 1)
    assert torch.equal(empty, torch.zeros(1, 4))
    assert torch.allclose(layer.aggregate(psi, empty), psi + layer.g2(torch.zeros(1, 4)))
    one = scatter_mean(u, torch.zeros(1, dtype=torch.long), 1)
    assert torch.allclose(one, u)
    twice = scatter_mean(torch.cat([u, u]), torch.zeros(2, dtype=torch.long), 1)
    assert torch.allclose(layer.aggregate(psi, twice), layer.aggregate(psi, one))


def test_single_layer_is_one_composition():
    torch.manual_seed(2)
    cfg = TripletGcnConfig(4, 3, hidden=6, num_layers=1)
    net = TripletGCN(cfg)
    nodes, edges = torch.randn(5, 4), torch.tensor([[0, 1], [1, 2], [3, 1]])
    ef = torch.randn(3, 3)
    out, eout = net(nodes, ef, edges)
    ref, eref = net.layers[0](nodes, ef, edges)
    assert torch.equal(out, ref) and torch.equal(eout, eref)


def test_no_edges_only_self_path():
    torch.manual_seed(3)
    layer = TripletGcnLayer(4, 3, 4, 3, hidden=6)
    nodes = torch.randn(3, 4)
    out, eout = layer(nodes, torch.zeros(0, 3), torch.zeros(0, 2, dtype=torch.long))
    psi, _, _ = layer.message_pass(nodes, torch.zeros(3, 3), nodes)
    assert torch.allclose(out, psi + layer.g2(torch.zeros(3, 4)))
    assert eout.shape == (0, 3)


@pytest.mark.parametrize("layers", [1, 3, 5])
def test_permutation_equivariance(layers):
    gen = torch.Generator().manual_seed(layers)
    torch.manual_seed(layers)
    net = TripletGCN(TripletGcnConfig(6, 4, hidden=16, num_layers=layers)).double()
    for _ in range(20):
        n = int(torch.randint(2, 10, (1,), generator=gen))
        e = int(torch.randint(1, 20, (1,), generator=gen))
        nodes = torch.randn(n, 6, generator=gen, dtype=torch.float64)
        edges = random_graph(n, e, gen)
        ef = torch.randn(e, 4, generator=gen, dtype=torch.float64)
        perm = torch.randperm(n, generator=gen)
        inv = torch.argsort(perm)
        out, eout = net(nodes, ef, edges)
        out_p, eout_p = net(nodes[perm], ef, inv[edges])
        assert (out_p - out[perm]).abs().max() < 1e-5
        assert (eout_p - eout).abs().max() < 1e-5


def test_every_parameter_gets_gradient():
    torch.manual_seed(4)
    net = TripletGCN(TripletGcnConfig(5, 3, hidden=8, num_layers=3))
    edges = torch.tensor([[0, 1], [1, 2], [2, 3], [3, 0]])
    out, eout = net(torch.randn(4, 5), torch.randn(4, 3), edges)
    (out.square().sum() + eout.square().sum()).backward()
    for name, p in net.named_parameters():
        assert p.grad is not None and p.grad.abs().sum() > 0, name


def test_config_and_shape_errors():
    with pytest.raises(ValueError):
        TripletGcnConfig(4, 3, num_layers=0)
    net = TripletGCN(TripletGcnConfig(4, 3, hidden=8, num_layers=2, node_out=5, edge_out=2))
    out, eout = net(torch.randn(3, 4), torch.randn(1, 3), torch.tensor([[0, 2]]))
    assert out.shape == (3, 5) and eout.shape == (1, 2)
    with pytest.raises(ShapeError):
        net(torch.randn(3, 4), torch.randn(1, 3), torch.tensor([[0, 3]]))
    with pytest.raises(ShapeError):
        net(torch.randn(3, 4), torch.randn(2, 3), torch.tensor([[0, 1]]))
