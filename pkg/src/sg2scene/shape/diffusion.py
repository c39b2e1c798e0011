"""DDPM machinery: linear noise schedule, forward noising, epsilon-prediction
loss and ancestral sampling. Timesteps are 1-based; index 0 of every table
is the noise-free state (alpha_bar_0 = 1)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch

from .vqvae import ConfigError

Denoiser = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class NoiseSchedule:
    betas: torch.Tensor  # [T + 1], betas[0] = 0
    alphas: torch.Tensor
    alpha_bars: torch.Tensor

    @property
    def num_steps(self) -> int:
        return self.betas.shape[0] - 1

    def posterior_variance(self, t: int) -> float:
        """Variance of q(x_{t-1} | x_t, x_0)."""
        ab, ab_prev = self.alpha_bars[t], self.alpha_bars[t - 1]
        return float(self.betas[t] * (1.0 - ab_prev) / (1.0 - ab))

    def posterior_mean(self, x0: torch.Tensor, xt: torch.Tensor, t: int) -> torch.Tensor:
        ab, ab_prev, beta = self.alpha_bars[t], self.alpha_bars[t - 1], self.betas[t]
        c0 = ab_prev.sqrt() * beta / (1.0 - ab)
        ct = self.alphas[t].sqrt() * (1.0 - ab_prev) / (1.0 - ab)
        return c0 * x0 + ct * xt


def schedule_from_betas(betas: torch.Tensor) -> NoiseSchedule:
    betas = torch.cat([betas.new_zeros(1), betas.to(torch.float64)])
    alphas = 1.0 - betas
    return NoiseSchedule(betas, alphas, torch.cumprod(alphas, dim=0))


def build_schedule(num_steps: int = 1000, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    if not 0.0 < beta_min < beta_max < 1.0:
        raise ConfigError(f"need 0 < beta_min < beta_max < 1, got {beta_min}, {beta_max}")
    if num_steps < 1:
        raise ConfigError("num_steps must be positive")
    if num_steps == 1:
        return schedule_from_betas(torch.tensor([beta_min], dtype=torch.float64))
    return schedule_from_betas(torch.linspace(beta_min, beta_max, num_steps, dtype=torch.float64))


def scaled_beta_range(
    num_steps: int, reference_steps: int = 1000, beta_min: float = 1e-4, beta_max: float = 0.02
) -> tuple[float, float]:
    """Beta range for a shorter chain that keeps the reference chain's total noise.

    A linear table over ``num_steps`` reaches roughly the same final alpha-bar as
    ``[beta_min, beta_max]`` over ``reference_steps`` when both ends are scaled
    by ``reference_steps / num_steps``. Without this, a 50-step chain with the
    1000-step range ends at alpha-bar of about 0.6, far from the unit Gaussian
    that sampling starts from.
    """
    k = reference_steps / num_steps
    return beta_min * k, min(beta_max * k, 0.999)


def _gather(table: torch.Tensor, t: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    v = table[t].to(like.dtype)
    return v.view(-1, *([1] * (like.dim() - 1)))


def q_sample(x0: torch.Tensor, t: torch.Tensor | int, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps."""
    if eps.shape != x0.shape:
        raise ValueError("eps must match x0 in shape")
    t = torch.as_tensor(t, dtype=torch.long).expand(x0.shape[0]) if x0.dim() else torch.as_tensor(t)
    if (t < 1).any() or (t > schedule.num_steps).any():
        raise ValueError(f"timestep out of range [1, {schedule.num_steps}]")
    ab = _gather(schedule.alpha_bars, t, x0)
    return ab.sqrt() * x0 + (1.0 - ab).sqrt() * eps


def shape_loss(
    denoiser: Denoiser,
    x0: torch.Tensor,
    cond: torch.Tensor,
    schedule: NoiseSchedule,
    generator: torch.Generator | None = None,
    t: torch.Tensor | None = None,
    eps: torch.Tensor | None = None,
) -> torch.Tensor:
    """Mean squared error between the drawn noise and the denoiser's prediction."""
    b = x0.shape[0]
    if t is None:
        t = torch.randint(1, schedule.num_steps + 1, (b,), generator=generator)
    if eps is None:
        eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    xt = q_sample(x0, t, eps, schedule)
    pred = denoiser(xt, t, cond)
    return (eps - pred).square().mean()


def p_step(
    denoiser: Denoiser,
    xt: torch.Tensor,
    t: int,
    cond: torch.Tensor,
    schedule: NoiseSchedule,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """One ancestral step x_t -> x_{t-1} with the fixed posterior variance."""
    tt = torch.full((xt.shape[0],), t, dtype=torch.long)
    eps = denoiser(xt, tt, cond)
    beta, alpha, ab = (float(v[t]) for v in (schedule.betas, schedule.alphas, schedule.alpha_bars))
    mean = (xt - beta / (1.0 - ab) ** 0.5 * eps) / alpha**0.5
    if t == 1:
        return mean
    noise = torch.randn(xt.shape, generator=generator, dtype=xt.dtype)
    return mean + schedule.posterior_variance(t) ** 0.5 * noise


@torch.no_grad()
def ddpm_sample(
    denoiser: Denoiser,
    cond: torch.Tensor,
    shape: tuple[int, ...],
    schedule: NoiseSchedule,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Run the reverse chain from x_T ~ N(0, I); ``shape`` excludes the batch axis."""
    x = torch.randn((cond.shape[0], *shape), generator=generator, dtype=cond.dtype)
    for t in range(schedule.num_steps, 0, -1):
        x = p_step(denoiser, x, t, cond, schedule, generator)
    return x
