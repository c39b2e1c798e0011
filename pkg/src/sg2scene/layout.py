"""Layout branch: per-node Gaussian posterior, latent sampling, box decoding
and the KL / box reconstruction losses."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .context import ContextFeatures, ModeError
from .relnet import TripletGCN, TripletGcnConfig, mlp
from .scene_model import NUM_ANGLE_BINS, AlignmentError, BoundingBox, NumericError, bin_center

LOG_SIGMA_MIN, LOG_SIGMA_MAX = -10.0, 5.0


@dataclass
class LatentDistribution:
    mu: torch.Tensor  # [N, Nc]
    log_sigma: torch.Tensor  # [N, Nc]

    @property
    def sigma(self) -> torch.Tensor:
        return self.log_sigma.exp()

    @classmethod
    def standard(cls, n: int, dim: int, dtype=torch.float32) -> "LatentDistribution":
        z = torch.zeros(n, dim, dtype=dtype)
        return cls(z, z.clone())


def kl_loss(dist: LatentDistribution) -> torch.Tensor:
    """Mean over nodes of KL(N(mu, sigma) || N(0, 1)), summed over dimensions."""
    mu, log_sigma = dist.mu, dist.log_sigma
    if not (torch.isfinite(mu).all() and torch.isfinite(log_sigma).all()):
        raise NumericError("non-finite latent distribution")
    if mu.shape[0] == 0:
        return mu.sum() * 0.0
    # expm1 keeps sigma^2 - 1 - ln sigma^2 from cancelling below zero near sigma = 1
    per_dim = 0.5 * (mu.square() + torch.expm1(2.0 * log_sigma) - 2.0 * log_sigma)
    return per_dim.sum(dim=-1).mean()


def sample_latent(dist: LatentDistribution, generator: torch.Generator | None = None) -> torch.Tensor:
    """Reparameterized draw z = mu + sigma * eps."""
    eps = torch.randn(dist.mu.shape, generator=generator, dtype=dist.mu.dtype)
    return dist.mu + dist.sigma * eps


def sample_prior(n: int, dim: int, generator: torch.Generator | None = None, dtype=torch.float32):
    return torch.randn((n, dim), generator=generator, dtype=dtype)


class PosteriorEncoder(nn.Module):
    """Graph encoder over the box-enhanced contextual graph with mu / log-sigma heads."""

    def __init__(self, node_in: int, edge_in: int, latent_dim: int = 128, hidden: int = 512, num_layers: int = 5):
        super().__init__()
        self.gcn = TripletGCN(TripletGcnConfig(node_in, edge_in, hidden, num_layers))
        self.mu_head = mlp(hidden, hidden, latent_dim)
        self.log_sigma_head = mlp(hidden, hidden, latent_dim)
        self.latent_dim = latent_dim

    def forward(self, ctx: ContextFeatures, edges: torch.Tensor) -> LatentDistribution:
        if not ctx.boxed:
            raise ModeError("posterior encoding needs box-enhanced features (training mode)")
        h, _ = self.gcn(ctx.node_features(), ctx.edge_features(), edges)
        log_sigma = self.log_sigma_head(h).clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX)
        return LatentDistribution(self.mu_head(h), log_sigma)


@dataclass
class LayoutPrediction:
    sizes: torch.Tensor  # [N, 3], positive
    translations: torch.Tensor  # [N, 3]
    angle_logits: torch.Tensor  # [N, num_bins]

    @property
    def num_bins(self) -> int:
        return self.angle_logits.shape[-1]


def positive_size(raw: torch.Tensor) -> torch.Tensor:
    return F.softplus(raw) + 1e-3


class LayoutDecoder(nn.Module):
    def __init__(
        self,
        node_in: int,
        edge_in: int,
        hidden: int = 512,
        num_layers: int = 5,
        num_bins: int = NUM_ANGLE_BINS,
    ):
        super().__init__()
        self.gcn = TripletGCN(TripletGcnConfig(node_in, edge_in, hidden, num_layers))
        self.size_head = mlp(hidden, hidden, 3)
        self.translation_head = mlp(hidden, hidden, 3)
        self.angle_head = mlp(hidden, hidden, num_bins)
        self.num_bins = num_bins

    def forward(self, nodes: torch.Tensor, edge_feats: torch.Tensor, edges: torch.Tensor) -> LayoutPrediction:
        h, _ = self.gcn(nodes, edge_feats, edges)
        return LayoutPrediction(
            positive_size(self.size_head(h)), self.translation_head(h), self.angle_head(h)
        )


def layout_loss(
    pred: LayoutPrediction, sizes: torch.Tensor, translations: torch.Tensor, angle_bins: torch.Tensor
) -> torch.Tensor:
    """(1/N) sum_i |s - s_hat|_1 + |t - t_hat|_1 + CE(bin_i, logits_i)."""
    n = pred.sizes.shape[0]
    if not (sizes.shape[0] == translations.shape[0] == angle_bins.shape[0] == n):
        raise AlignmentError("predictions and ground truth must be index-aligned")
    if n == 0:
        return pred.sizes.sum() * 0.0
    l1 = (pred.sizes - sizes).abs().sum(-1) + (pred.translations - translations).abs().sum(-1)
    ce = F.cross_entropy(pred.angle_logits, angle_bins, reduction="none")
    return (l1 + ce).mean()


def assemble_layout(pred: LayoutPrediction) -> list[BoundingBox]:
    bins = pred.angle_logits.argmax(-1).tolist()
    sizes = pred.sizes.detach().cpu().double().tolist()
    trans = pred.translations.detach().cpu().double().tolist()
    return [
        BoundingBox(tuple(s), tuple(t), bin_center(b, pred.num_bins), pred.num_bins)
        for s, t, b in zip(sizes, trans, bins)
    ]

