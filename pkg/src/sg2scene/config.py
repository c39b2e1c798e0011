"""Run configuration shared by training, generation and the command line."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .shape.vqvae import ConfigError, VQVAEConfig
from .shape.unet import UNetConfig


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    steps: int = 2000
    lr: float = 1e-4
    weight_decay: float = 0.01
    grad_clip: float | None = 1.0
    lambda_kl: float = 1.0
    lambda_layout: float = 1.0
    lambda_shape: float = 1.0
    scenes_per_step: int = 10
    shapes_per_step: int = 40
    checkpoint_every: int = 500
    # text and graph features
    text_provider: str = "hash"
    text_dim: int = 512
    embed_dim: int = 64
    box_dim: int = 64
    latent_dim: int = 128
    gcn_hidden: int = 512
    gcn_layers: int = 5
    num_angle_bins: int = 24
    relation_dim: int = 128
    # shape branch
    tsdf_resolution: int = 16
    vq_downsample: int = 4
    vq_channels: int = 8
    vq_codebook: int = 512
    vq_hidden: int = 16
    vq_commitment: float = 0.25
    vq_steps: int = 5000
    vq_lr: float = 1e-3
    diffusion_steps: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 0.02
    unet_channels: int = 64
    unet_mults: tuple[int, ...] = (1, 2)

    def __post_init__(self):
        object.__setattr__(self, "unet_mults", tuple(self.unet_mults))
        if min(self.lambda_kl, self.lambda_layout, self.lambda_shape) < 0:
            raise ConfigError("loss weights must be non-negative")
        if not self.shapes_per_step >= self.scenes_per_step >= 1:
            raise ConfigError("need shapes_per_step >= scenes_per_step >= 1")
        if self.steps < 0 or self.lr <= 0:
            raise ConfigError("steps must be >= 0 and lr > 0")
        if self.text_provider not in ("hash", "clip"):
            raise ConfigError(f"unknown text_provider {self.text_provider!r}")

    @property
    def shape_branch(self) -> bool:
        return self.lambda_shape > 0

    def vqvae_config(self) -> VQVAEConfig:
        return VQVAEConfig(
            self.tsdf_resolution, self.vq_downsample, self.vq_channels,
            self.vq_codebook, self.vq_hidden, self.vq_commitment,
        )

    def unet_config(self) -> UNetConfig:
        return UNetConfig(
            in_channels=self.vq_channels,
            base_channels=self.unet_channels,
            channel_mults=self.unet_mults,
            context_dim=self.relation_dim,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["unet_mults"] = list(self.unet_mults)
        return d

    def replace(self, **changes) -> "TrainConfig":
        d = self.to_dict()
        d.update(changes)
        return TrainConfig.from_dict(d)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
