"""Small 3D U-Net noise predictor with relation-embedding cross-attention."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .vqvae import ConfigError


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal features of integer timesteps, ``[B] -> [B, dim]``."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def _norm(ch: int) -> nn.GroupNorm:
    groups = 8 if ch % 8 == 0 else 1
    return nn.GroupNorm(groups, ch)


class ResBlock3d(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int):
        super().__init__()
        self.norm1 = _norm(in_ch)
        self.conv1 = nn.Conv3d(in_ch, out_ch, 3, padding=1)
        self.time = nn.Linear(time_dim, out_ch)
        self.norm2 = _norm(out_ch)
        self.conv2 = nn.Conv3d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv3d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time(F.silu(temb))[:, :, None, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class CrossAttention3d(nn.Module):
    """Voxels attend to a short token sequence (the relation embedding and a
    learned null token)."""

    def __init__(self, ch: int, context_dim: int, heads: int = 4):
        super().__init__()
        if ch % heads:
            heads = 1
        self.heads = heads
        self.norm = _norm(ch)
        self.q = nn.Linear(ch, ch, bias=False)
        self.k = nn.Linear(context_dim, ch, bias=False)
        self.v = nn.Linear(context_dim, ch, bias=False)
        self.out = nn.Linear(ch, ch)

    def forward(self, x: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        b, c, *spatial = x.shape
        h = self.norm(x).flatten(2).transpose(1, 2)  # [B, V, C]
        split = lambda y: y.view(b, -1, self.heads, c // self.heads).transpose(1, 2)
        q, k, v = split(self.q(h)), split(self.k(tokens)), split(self.v(tokens))
        attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(c // self.heads), dim=-1)
        o = (attn @ v).transpose(1, 2).reshape(b, -1, c)
        return x + self.out(o).transpose(1, 2).view(b, c, *spatial)


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 8
    base_channels: int = 64
    channel_mults: tuple[int, ...] = (1, 2)
    context_dim: int = 128
    time_dim: int = 128
    heads: int = 4
    attention_levels: int = 2  # counted from the coarsest level

    def __post_init__(self):
        if not self.channel_mults:
            raise ConfigError("channel_mults must be non-empty")
        if min(self.in_channels, self.base_channels, self.context_dim, self.time_dim) <= 0:
            raise ConfigError("all widths must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class UNet3d(nn.Module):
    """``forward(x_t [B,C,d,d,d], t [B], context [B, context_dim]) -> eps_hat``."""

    def __init__(self, config: UNetConfig = UNetConfig()):
        super().__init__()
        self.config = config
        cfg = config
        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.time_dim, cfg.time_dim), nn.SiLU(), nn.Linear(cfg.time_dim, cfg.time_dim)
        )
        self.null_token = nn.Parameter(torch.randn(cfg.context_dim) * 0.02)
        self.inp = nn.Conv3d(cfg.in_channels, cfg.base_channels, 3, padding=1)

        levels = len(cfg.channel_mults)
        attn_from = levels - cfg.attention_levels
        widths = [cfg.base_channels * m for m in cfg.channel_mults]

        self.down_blocks = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        self.downsamplers = nn.ModuleList()
        ch = cfg.base_channels
        for i, w in enumerate(widths):
            self.down_blocks.append(ResBlock3d(ch, w, cfg.time_dim))
            self.down_attn.append(
                CrossAttention3d(w, cfg.context_dim, cfg.heads) if i >= attn_from else nn.Identity()
            )
            ch = w
            if i < levels - 1:
                self.downsamplers.append(nn.Conv3d(w, w, 3, stride=2, padding=1))

        self.mid1 = ResBlock3d(ch, ch, cfg.time_dim)
        self.mid_attn = CrossAttention3d(ch, cfg.context_dim, cfg.heads)
        self.mid2 = ResBlock3d(ch, ch, cfg.time_dim)

        self.up_blocks = nn.ModuleList()
        self.up_attn = nn.ModuleList()
        self.upsamplers = nn.ModuleList()
        for i in reversed(range(levels)):
            w = widths[i]
            self.up_blocks.append(ResBlock3d(ch + w, w, cfg.time_dim))
            self.up_attn.append(
                CrossAttention3d(w, cfg.context_dim, cfg.heads) if i >= attn_from else nn.Identity()
            )
            ch = w
            if i > 0:
                self.upsamplers.append(nn.Conv3d(w, widths[i - 1], 3, padding=1))
                ch = widths[i - 1]

        self.out_norm = _norm(ch)
        self.out = nn.Conv3d(ch, cfg.in_channels, 3, padding=1)

    def _tokens(self, context: torch.Tensor) -> torch.Tensor:
        null = self.null_token.expand(context.shape[0], 1, -1)
        return torch.cat([context[:, None, :], null], dim=1)

    @staticmethod
    def _attend(block: nn.Module, h: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        return block(h, tokens) if isinstance(block, CrossAttention3d) else h

    def forward(self, x: torch.Tensor, t: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if x.dim() != 5 or x.shape[1] != cfg.in_channels:
            raise ConfigError(f"expected latent [B, {cfg.in_channels}, d, d, d], got {tuple(x.shape)}")
        if context.shape != (x.shape[0], cfg.context_dim):
            raise ConfigError(
                f"expected context [B={x.shape[0]}, {cfg.context_dim}], got {tuple(context.shape)}"
            )
        temb = self.time_mlp(timestep_embedding(t, cfg.time_dim).to(x.dtype))
        tokens = self._tokens(context)

        h = self.inp(x)
        skips = []
        for i, (block, attn) in enumerate(zip(self.down_blocks, self.down_attn)):
            h = self._attend(attn, block(h, temb), tokens)
            skips.append(h)
            if i < len(self.downsamplers):
                h = self.downsamplers[i](h)

        h = self.mid2(self.mid_attn(self.mid1(h, temb), tokens), temb)

        for j, (block, attn) in enumerate(zip(self.up_blocks, self.up_attn)):
            skip = skips.pop()
            if h.shape[-3:] != skip.shape[-3:]:
                h = F.interpolate(h, size=skip.shape[-3:], mode="nearest")
            h = self._attend(attn, block(torch.cat([h, skip], dim=1), temb), tokens)
            if j < len(self.upsamplers):
                h = self.upsamplers[j](h)
        return self.out(F.silu(self.out_norm(h)))
