"""Relation encoder: turns updated contextual-graph features into one
conditioning vector per node for the shape denoiser."""

from __future__ import annotations

import torch
import torch.nn as nn

from ..relnet import ShapeError, TripletGCN, TripletGcnConfig


class RelationEncoder(nn.Module):
    def __init__(self, node_in: int, edge_in: int, out_dim: int = 128, hidden: int = 512, num_layers: int = 5):
        super().__init__()
        self.gcn = TripletGCN(TripletGcnConfig(node_in, edge_in, hidden, num_layers, node_out=out_dim))
        self.out_dim = out_dim

    def forward(self, nodes: torch.Tensor, edge_feats: torch.Tensor, edges: torch.Tensor) -> torch.Tensor:
        emb, _ = self.gcn(nodes, edge_feats, edges)
        if not torch.isfinite(emb).all():
            raise ShapeError("relation embedding is not finite")
        return emb
