"""3D VQ-VAE shape compressor for TSDF grids."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class VQVAEConfig:
    resolution: int = 16
    downsample: int = 4
    latent_channels: int = 8
    codebook_size: int = 512
    hidden: int = 16
    commitment: float = 0.25

    def __post_init__(self):
        stages = math.log2(self.downsample) if self.downsample > 0 else -1
        if stages < 1 or stages != int(stages):
            raise ConfigError(f"downsample must be a power of two >= 2, got {self.downsample}")
        if self.resolution % self.downsample:
            raise ConfigError(
                f"resolution {self.resolution} is not divisible by downsample {self.downsample}"
            )
        if self.codebook_size < 2:
            raise ConfigError("codebook needs at least 2 entries")

    @property
    def latent_resolution(self) -> int:
        return self.resolution // self.downsample

    @property
    def num_stages(self) -> int:
        return int(math.log2(self.downsample))

    def to_dict(self) -> dict:
        return asdict(self)


def nearest_code(flat: torch.Tensor, codebook: torch.Tensor) -> torch.Tensor:
    """Index of the closest codebook row (squared L2) for each row of ``flat``."""
    d = (
        flat.square().sum(1, keepdim=True)
        - 2.0 * flat @ codebook.t()
        + codebook.square().sum(1)[None, :]
    )
    return d.argmin(dim=1)


class VectorQuantizer(nn.Module):
    def __init__(self, num_codes: int, dim: int, commitment: float = 0.25):
        super().__init__()
        self.codebook = nn.Embedding(num_codes, dim)
        self.codebook.weight.data.uniform_(-1.0 / num_codes, 1.0 / num_codes)
        self.commitment = commitment
        self.register_buffer("usage", torch.zeros(num_codes, dtype=torch.long))

    def forward(self, z: torch.Tensor):
        """Quantize a ``[B, C, d, d, d]`` latent.

        Returns the straight-through quantized latent, code indices
        ``[B, d, d, d]``, and the codebook + commitment loss.
        """
        b, c, *spatial = z.shape
        flat = z.movedim(1, -1).reshape(-1, c)
        idx = nearest_code(flat, self.codebook.weight)
        q = self.codebook(idx).view(b, *spatial, c).movedim(-1, 1)
        codebook_term = F.mse_loss(q, z.detach())
        commit_term = F.mse_loss(z, q.detach())
        if self.training:
            self.usage += torch.bincount(idx, minlength=self.usage.numel())
        q_st = z + (q - z).detach()
        return q_st, idx.view(b, *spatial), codebook_term + self.commitment * commit_term

    @torch.no_grad()
    def restart_unused(self, z: torch.Tensor, generator: torch.Generator | None = None) -> int:
        """Re-seed codes unused since the last call from random encoder outputs."""
        dead = (self.usage == 0).nonzero().flatten()
        if dead.numel():
            flat = z.movedim(1, -1).reshape(-1, z.shape[1])
            pick = torch.randint(0, flat.shape[0], (dead.numel(),), generator=generator)
            self.codebook.weight.data[dead] = flat[pick].to(self.codebook.weight.dtype)
        self.usage.zero_()
        return int(dead.numel())


def _group_norm(ch: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, ch), ch)


class VQVAE(nn.Module):
    def __init__(self, config: VQVAEConfig = VQVAEConfig()):
        super().__init__()
        self.config = config
        h = config.hidden
        enc = [nn.Conv3d(1, h, 3, padding=1), nn.SiLU()]
        ch = h
        for _ in range(config.num_stages):
            enc += [nn.Conv3d(ch, 2 * ch, 4, stride=2, padding=1), _group_norm(2 * ch), nn.SiLU()]
            ch *= 2
        enc += [nn.Conv3d(ch, ch, 3, padding=1), nn.SiLU(), nn.Conv3d(ch, config.latent_channels, 1)]
        self.encoder = nn.Sequential(*enc)

        dec = [nn.Conv3d(config.latent_channels, ch, 3, padding=1), nn.SiLU()]
        for _ in range(config.num_stages):
            dec += [nn.ConvTranspose3d(ch, ch // 2, 4, stride=2, padding=1), _group_norm(ch // 2), nn.SiLU()]
            ch //= 2
        dec += [nn.Conv3d(ch, ch, 3, padding=1), nn.SiLU(), nn.Conv3d(ch, 1, 3, padding=1)]
        self.decoder = nn.Sequential(*dec)
        self.quantizer = VectorQuantizer(config.codebook_size, config.latent_channels, config.commitment)

    def _check(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 3:
            x = x[None, None]
        elif x.dim() == 4:
            x = x[:, None]
        if tuple(x.shape[-3:]) != (self.config.resolution,) * 3:
            raise ConfigError(
                f"expected {self.config.resolution}^3 grids, got {tuple(x.shape[-3:])}"
            )
        return x

    def encode(self, tsdf: torch.Tensor):
        """Return (pre-quantization latent, quantized latent, code indices)."""
        z = self.encoder(self._check(tsdf))
        q, idx, _ = self.quantizer(z)
        return z, q, idx

    def decode(self, latent: torch.Tensor, quantize: bool = True) -> torch.Tensor:
        """Decode a ``[B, C, d, d, d]`` latent to ``[B, D, D, D]`` values in [-1, 1]."""
        expect = (self.config.latent_channels,) + (self.config.latent_resolution,) * 3
        if tuple(latent.shape[1:]) != expect:
            raise ConfigError(f"expected latent of shape [B, {expect}], got {tuple(latent.shape)}")
        if quantize:
            latent, _, _ = self.quantizer(latent)
        return torch.tanh(self.decoder(latent))[:, 0]

    def loss(self, tsdf: torch.Tensor) -> tuple[torch.Tensor, dict[str, float]]:
        """Reconstruction MSE plus codebook and weighted commitment terms."""
        x = self._check(tsdf)
        if not torch.isfinite(x).all():
            raise ValueError("non-finite TSDF input")
        z = self.encoder(x)
        q, _, vq_term = self.quantizer(z)
        recon = torch.tanh(self.decoder(q))
        rec = F.mse_loss(recon, x)
        return rec + vq_term, {"recon": float(rec.detach()), "vq": float(vq_term.detach())}

    def forward(self, tsdf: torch.Tensor) -> torch.Tensor:
        _, q, _ = self.encode(tsdf)
        return self.decode(q, quantize=False)


def train_vqvae(
    model: VQVAE,
    grids: torch.Tensor,
    steps: int = 5000,
    lr: float = 1e-3,
    restart_every: int = 200,
    seed: int = 0,
    target_mse: float | None = None,
    log=None,
) -> list[float]:
    """Fit ``model`` on a ``[B, D, D, D]`` stack of grids; returns per-step recon MSE.

    Training stops early once an evaluation-mode reconstruction reaches
    ``target_mse`` (checked every 100 steps).
    """
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    model.train()
    history = []
    for step in range(steps):
        loss, parts = model.loss(grids)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        history.append(parts["recon"])
        if restart_every and (step + 1) % restart_every == 0 and step + 1 < steps * 0.8:
            with torch.no_grad():
                model.quantizer.restart_unused(model.encoder(model._check(grids)), gen)
        if log is not None and step % 500 == 0:
            log(step, parts)
        if target_mse is not None and (step + 1) % 100 == 0:
            if reconstruction_mse(model, grids) < target_mse:
                break
    model.eval()
    return history


def codes_in_use(model: VQVAE, grids: torch.Tensor) -> int:
    with torch.no_grad():
        _, _, idx = model.encode(grids)
    return int(idx.unique().numel())


@torch.no_grad()
def reconstruction_mse(model: VQVAE, grids: torch.Tensor) -> float:
    was_training = model.training
    model.eval()
    err = float(F.mse_loss(model(grids), grids))
    model.train(was_training)
    return err
