"""The full generator: contextual graph, layout CVAE, relation encoder and the
latent shape diffusion model on top of a frozen VQ-VAE."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .batch import GraphBatch, collate
from .config import TrainConfig
from .context import ClipTextEmbedding, ContextFeatures, ContextualGraph, HashTextEmbedding
from .layout import (
    LayoutDecoder,
    LayoutPrediction,
    PosteriorEncoder,
    assemble_layout,
    kl_loss,
    layout_loss,
    sample_latent,
    sample_prior,
)
from .scene_model import BoundingBox, SceneGraph, Vocabulary, default_vocabulary
from .shape.diffusion import build_schedule, ddpm_sample, scaled_beta_range, shape_loss
from .shape.relation import RelationEncoder
from .shape.tsdf import TsdfGrid
from .shape.unet import UNet3d
from .shape.vqvae import VQVAE

log = logging.getLogger(__name__)


def make_provider(config: TrainConfig):
    if config.text_provider == "clip":
        return ClipTextEmbedding()
    return HashTextEmbedding(config.text_dim)


@dataclass
class LossTerms:
    total: torch.Tensor
    kl: torch.Tensor
    layout: torch.Tensor
    shape: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("total", "kl", "layout", "shape")}


def combine_losses(kl, layout, shape, config: TrainConfig) -> LossTerms:
    total = config.lambda_kl * kl + config.lambda_layout * layout + config.lambda_shape * shape
    return LossTerms(total, kl, layout, shape)


@dataclass
class GeneratedScene:
    graph: SceneGraph
    boxes: list[BoundingBox]
    shapes: dict[int, TsdfGrid]  # node id -> grid, shape-bearing nodes only


class SceneGenerator(nn.Module):
    def __init__(self, config: TrainConfig, vocab: Vocabulary | None = None, provider=None):
        super().__init__()
        self.config = config
        self.vocab = vocab or default_vocabulary()
        self.provider = provider or make_provider(config)
        c = config
        self.context = ContextualGraph(self.provider, self.vocab, c.embed_dim, c.box_dim)
        node_dim, edge_dim = self.context.node_dim, self.context.edge_dim
        self.posterior = PosteriorEncoder(
            node_dim + c.box_dim, edge_dim, c.latent_dim, c.gcn_hidden, c.gcn_layers
        )
        updated_dim = c.latent_dim + node_dim
        self.decoder = LayoutDecoder(updated_dim, edge_dim, c.gcn_hidden, c.gcn_layers, c.num_angle_bins)
        self.relation = RelationEncoder(updated_dim, edge_dim, c.relation_dim, c.gcn_hidden, c.gcn_layers)
        self.vqvae = VQVAE(c.vqvae_config())
        self.vqvae.requires_grad_(False)
        self.denoiser = UNet3d(c.unet_config())
        self.register_buffer("latent_scale", torch.ones(()))
        self.schedule = build_schedule(c.diffusion_steps, c.beta_min, c.beta_max)
        final = float(self.schedule.alpha_bars[-1])
        if c.shape_branch and final > 0.01:
            log.warning(
                "diffusion chain ends at alpha-bar %.3f, so sampling from a unit Gaussian is off-distribution; "
                "for %d steps consider beta range %s",
                final, c.diffusion_steps, scaled_beta_range(c.diffusion_steps),
            )

    def trainable_parameters(self):
        return [p for n, p in self.named_parameters() if not n.startswith("vqvae.") and p.requires_grad]

    def train(self, mode: bool = True):
        super().train(mode)
        self.vqvae.eval()
        return self

    # -- feature construction -------------------------------------------------

    def updated_features(self, ctx: ContextFeatures, z: torch.Tensor) -> torch.Tensor:
        """Concatenate the latent sample with prompt and learnable node embeddings."""
        return torch.cat([z, ctx.node_prompt, ctx.node_embedding], dim=-1)

    def encode_shapes(self, grids: torch.Tensor) -> torch.Tensor:
        """Scaled pre-quantization latents of ``[B, D, D, D]`` grids (frozen encoder)."""
        with torch.no_grad():
            z, _, _ = self.vqvae.encode(grids)
        return z * self.latent_scale

    @torch.no_grad()
    def fit_latent_scale(self, grids: torch.Tensor) -> float:
        """Set the latent scale so encoded training shapes have unit variance."""
        z, _, _ = self.vqvae.encode(grids)
        std = float(z.std()) if z.numel() > 1 else 1.0
        self.latent_scale.fill_(1.0 / max(std, 1e-6))
        return float(self.latent_scale)

    def decode_shapes(self, latents: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.vqvae.decode(latents / self.latent_scale, quantize=True)

    # -- training -------------------------------------------------------------

    def losses(
        self,
        batch: GraphBatch,
        generator: torch.Generator | None = None,
        shape_rows: torch.Tensor | None = None,
        shape_latents: torch.Tensor | None = None,
    ) -> LossTerms:
        """All three loss terms from a single contextual-graph encoding.

        ``shape_rows`` indexes batch nodes whose target latents are given in
        ``shape_latents``; the shape term is skipped when the weight is zero.
        """
        if not batch.has_boxes:
            raise ValueError("training batches need ground-truth boxes")
        ctx = self.context(batch, batch.box_tensor())
        dist = self.posterior(ctx, batch.edges)
        z = sample_latent(dist, generator)
        nodes = self.updated_features(ctx, z)
        edge_feats = ctx.edge_features()
        pred = self.decoder(nodes, edge_feats, batch.edges)
        l_kl = kl_loss(dist)
        l_layout = layout_loss(pred, batch.sizes, batch.translations, batch.angle_bins)
        l_shape = l_layout.new_zeros(())
        if self.config.shape_branch and shape_rows is not None and shape_rows.numel():
            cond = self.relation(nodes, edge_feats, batch.edges)[shape_rows]
            l_shape = shape_loss(self.denoiser, shape_latents, cond, self.schedule, generator)
        return combine_losses(l_kl, l_layout, l_shape, self.config)

    @torch.no_grad()
    def reconstruct_layout(self, batch: GraphBatch) -> LayoutPrediction:
        """Decode boxes from the posterior mean of the box-enhanced graph."""
        ctx = self.context(batch, batch.box_tensor())
        dist = self.posterior(ctx, batch.edges)
        return self.decoder(self.updated_features(ctx, dist.mu), ctx.edge_features(), batch.edges)

    # -- inference ------------------------------------------------------------

    @torch.no_grad()
    def generate(self, graph: SceneGraph, seed: int = 0, shapes: bool = True) -> GeneratedScene:
        """Sample a layout (and shapes) for ``graph`` from the prior."""
        was_training = self.training
        self.eval()
        gen = torch.Generator().manual_seed(int(seed))
        batch = collate([graph], self.vocab, with_boxes=False)
        ctx = self.context(batch)
        dtype = ctx.node_embedding.dtype
        z = sample_prior(batch.num_nodes, self.config.latent_dim, gen, dtype)
        nodes = self.updated_features(ctx, z)
        edge_feats = ctx.edge_features()
        pred = self.decoder(nodes, edge_feats, batch.edges)
        boxes = assemble_layout(pred)
        grids: dict[int, TsdfGrid] = {}
        if shapes and self.config.shape_branch and bool(batch.shape_mask.any()):
            rows = batch.shape_mask.nonzero().flatten()
            cond = self.relation(nodes, edge_feats, batch.edges)[rows]
            latents = self.sample_shape_latents(cond, gen)
            decoded = self.decode_shapes(latents).cpu().numpy()
            for r, values in zip(rows.tolist(), decoded):
                node_id = batch.node_keys[r][1]
                grids[node_id] = TsdfGrid(np.clip(values, -1.0, 1.0), object_id=f"node{node_id}")
        self.train(was_training)
        return GeneratedScene(graph, boxes, grids)

    def sample_shape_latents(self, cond: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
        vc = self.config.vqvae_config()
        shape = (vc.latent_channels,) + (vc.latent_resolution,) * 3
        return ddpm_sample(self.denoiser, cond, shape, self.schedule, generator)
