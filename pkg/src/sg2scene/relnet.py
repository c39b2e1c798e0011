"""Triplet graph convolution.

Each layer runs ``g1`` over every (subject, edge, object) triplet, producing
per-endpoint messages and an updated edge feature, then updates every node as

    phi_i' = psi_i + g2(mean of psi_j over neighbours j)

``psi_i`` is the mean of node i's own-side outputs over its incident
triplets, where every node also takes part in one self triplet
(phi_i, 0, phi_i) so that isolated nodes keep a defined state. The
neighbour term uses, for every incident edge, the output ``g1`` produced for
the opposite endpoint; an empty neighbourhood averages to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn


class ShapeError(ValueError):
    pass


def mlp(in_dim: int, hidden_dim: int, out_dim: int) -> nn.Sequential:
    """Two-layer perceptron with a smooth nonlinearity."""
    return nn.Sequential(nn.Linear(in_dim, hidden_dim), nn.SiLU(), nn.Linear(hidden_dim, out_dim))


def scatter_mean(values: torch.Tensor, index: torch.Tensor, size: int) -> torch.Tensor:
    """Row-wise mean of ``values`` grouped by ``index``; empty groups are zero."""
    out = values.new_zeros(size, values.shape[-1])
    count = values.new_zeros(size)
    out.index_add_(0, index, values)
    count.index_add_(0, index, torch.ones_like(index, dtype=values.dtype))
    return out / count.clamp(min=1.0)[:, None]


@dataclass(frozen=True)
class TripletGcnConfig:
    node_in: int
    edge_in: int
    hidden: int = 512
    num_layers: int = 5
    node_out: int | None = None
    edge_out: int | None = None

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be at least 1")
        dims = (self.node_in, self.edge_in, self.hidden, self.node_out or 1, self.edge_out or 1)
        if min(dims) <= 0:
            raise ValueError("all dimensions must be positive")

    def layer_dims(self) -> list[tuple[int, int, int, int]]:
        """(node_in, edge_in, node_out, edge_out) for each layer."""
        dims = []
        n, e = self.node_in, self.edge_in
        for k in range(self.num_layers):
            last = k == self.num_layers - 1
            n_out = (self.node_out or self.hidden) if last else self.hidden
            e_out = (self.edge_out or self.hidden) if last else self.hidden
            dims.append((n, e, n_out, e_out))
            n, e = n_out, e_out
        return dims


class TripletGcnLayer(nn.Module):
    def __init__(self, node_in: int, edge_in: int, node_out: int, edge_out: int, hidden: int):
        super().__init__()
        self.node_in, self.edge_in = node_in, edge_in
        self.node_out, self.edge_out = node_out, edge_out
        self.g1 = mlp(2 * node_in + edge_in, hidden, 2 * node_out + edge_out)
        self.g2 = mlp(node_out, hidden, node_out)

    def message_pass(
        self, subj: torch.Tensor, edge: torch.Tensor, obj: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        if subj.shape[-1] != self.node_in or obj.shape[-1] != self.node_in:
            raise ShapeError(f"node features must have dim {self.node_in}")
        if edge.shape[-1] != self.edge_in:
            raise ShapeError(f"edge features must have dim {self.edge_in}")
        out = self.g1(torch.cat([subj, edge, obj], dim=-1))
        n = self.node_out
        return out[..., :n], out[..., n : n + self.edge_out], out[..., n + self.edge_out :]

    def aggregate(self, psi_self: torch.Tensor, neighbour_mean: torch.Tensor) -> torch.Tensor:
        return psi_self + self.g2(neighbour_mean)

    def forward(
        self, nodes: torch.Tensor, edge_feats: torch.Tensor, edges: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        n = nodes.shape[0]
        s, o = edges[:, 0], edges[:, 1]
        psi_s, new_edges, psi_o = self.message_pass(nodes[s], edge_feats, nodes[o])
        self_s, _, _ = self.message_pass(nodes, edge_feats.new_zeros(n, self.edge_in), nodes)

        own_index = torch.cat([torch.arange(n, device=nodes.device), s, o])
        psi_self = scatter_mean(torch.cat([self_s, psi_s, psi_o]), own_index, n)
        # node s hears the object-side output of its edge and vice versa
        neighbour = scatter_mean(torch.cat([psi_o, psi_s]), torch.cat([s, o]), n)
        return self.aggregate(psi_self, neighbour), new_edges


class TripletGCN(nn.Module):
    def __init__(self, config: TripletGcnConfig):
        super().__init__()
        self.config = config
        self.layers = nn.ModuleList(
            TripletGcnLayer(ni, ei, no, eo, config.hidden) for ni, ei, no, eo in config.layer_dims()
        )

    @property
    def node_out(self) -> int:
        return self.layers[-1].node_out

    @property
    def edge_out(self) -> int:
        return self.layers[-1].edge_out

    def forward(
        self,
        nodes: torch.Tensor,
        edge_feats: torch.Tensor,
        edges: torch.Tensor,
        return_activations: bool = False,
    ):
        if edges.numel() and (edges.min() < 0 or edges.max() >= nodes.shape[0]):
            raise ShapeError("edge endpoints out of range")
        if edge_feats.shape[0] != edges.shape[0]:
            raise ShapeError("one feature row per edge is required")
        acts = [(nodes, edge_feats)]
        for layer in self.layers:
            nodes, edge_feats = layer(nodes, edge_feats, edges)
            acts.append((nodes, edge_feats))
        if return_activations:
            return nodes, edge_feats, acts
        return nodes, edge_feats
