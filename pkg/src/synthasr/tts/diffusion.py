"""Score-based diffusion decoder.

Forward process (per mel cell, prior mean ``mu``):

    dX_t = 0.5 * beta(t) * (mu - X_t) dt + sqrt(beta(t)) dW_t,   t in [0, 1]

so that ``X_t | X_0`` is Gaussian with mean ``X_0 e^{-B/2} + mu (1 - e^{-B/2})``
and variance ``1 - e^{-B}``, where ``B = int_0^t beta``.  Sampling starts from
``N(mu, tau)`` and runs the deterministic reverse recursion

    X_{i-1} = X_i - beta_i / (2 I) * (mu - X_i - s(X_i, t_i))

for ``i = I .. 1`` with ``t_i = (i - 1/2) / I``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from synthasr.nn.layers import TransformerStack, sinusoidal_positions


class DiffusionError(ValueError):
    pass


@dataclass
class NoiseSchedule:
    """Per-step noise levels ``beta_1..beta_I`` and the times they are taken at."""

    betas: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.betas.ndim != 1 or len(self.betas) < 1:
            raise DiffusionError("need at least one diffusion step")
        if self.betas.shape != self.times.shape:
            raise DiffusionError("betas and times must have equal length")
        if np.any(self.betas < 0) or np.any(np.diff(self.betas) < 0):
            raise DiffusionError("betas must be non-negative and non-decreasing")

    @property
    def steps(self) -> int:
        return len(self.betas)


def linear_schedule(steps: int, beta_min: float = 0.05, beta_max: float = 20.0) -> NoiseSchedule:
    """beta(t) linear in t, sampled at the step midpoints (i - 1/2) / I."""
    if steps < 1:
        raise DiffusionError("diffusion_steps must be >= 1")
    times = (np.arange(1, steps + 1) - 0.5) / steps
    return NoiseSchedule(beta_min + (beta_max - beta_min) * times, times)


def cumulative_beta(t, beta_min: float = 0.05, beta_max: float = 20.0):
    return beta_min * t + 0.5 * (beta_max - beta_min) * t ** 2


def reverse_diffusion(x_init, mu, score_fn, schedule: NoiseSchedule):
    """Run the reverse recursion from ``x_init`` (step I) down to step 0.

    ``score_fn(x, t)`` returns the score estimate at state ``x``, time ``t``.
    Works on numpy arrays or torch tensors alike.
    """
    x = x_init
    n = schedule.steps
    for i in range(n, 0, -1):
        beta = float(schedule.betas[i - 1])
        if beta == 0.0:
            continue
        s = score_fn(x, float(schedule.times[i - 1]))
        x = x - beta / (2 * n) * (mu - x - s)
    return x


class _ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, cond_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm1 = nn.GroupNorm(min(8, out_ch), out_ch)
        self.norm2 = nn.GroupNorm(min(8, out_ch), out_ch)
        self.cond = nn.Linear(cond_dim, out_ch)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, mask, cond):
        h = F.silu(self.norm1(self.conv1(x * mask)))
        h = h + self.cond(cond)[:, :, None, None]
        h = F.silu(self.norm2(self.conv2(h * mask)))
        return (h + self.skip(x)) * mask


class ScoreUNet(nn.Module):
    """Small 2-D u-net over (mel x time) predicting the score.

    Inputs are stacked as channels: noisy state, prior mean and a speaker map;
    the time and speaker embeddings are added inside every residual block.
    """

    def __init__(self, n_mels: int, spk_dim: int, dim: int = 64, mults=(1, 2, 4),
                 blocks_per_level: int = 2):
        super().__init__()
        self.n_mels, self.dim = n_mels, dim
        self.spk_map = nn.Linear(spk_dim, n_mels)
        cond_dim = 4 * dim
        self.cond_mlp = nn.Sequential(nn.Linear(dim + spk_dim, cond_dim), nn.SiLU(),
                                      nn.Linear(cond_dim, cond_dim))
        chans = [dim * m for m in mults]
        self.levels = len(chans)
        self.down = nn.ModuleList()
        in_ch = 3
        for ch in chans:
            self.down.append(nn.ModuleList(
                _ResBlock(in_ch if j == 0 else ch, ch, cond_dim) for j in range(blocks_per_level)
            ))
            in_ch = ch
        self.mid = _ResBlock(in_ch, in_ch, cond_dim)
        self.up = nn.ModuleList()
        for ch in reversed(chans[:-1]):
            self.up.append(nn.ModuleList(
                _ResBlock(in_ch + ch if j == 0 else ch, ch, cond_dim) for j in range(blocks_per_level)
            ))
            in_ch = ch
        self.final = nn.Conv2d(in_ch, 1, 1)

    def time_embedding(self, t: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype) / max(half - 1, 1))
        args = 1000.0 * t[:, None] * freqs[None, :]
        return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)

    def multiple(self) -> int:
        return 2 ** (self.levels - 1)

    def forward(self, x, mu, mask, t, spk):
        """``x``, ``mu``: (B, T, n_mels); ``mask``: (B, T); ``t``: (B,)."""
        b, t_len, _ = x.shape
        pad = (-t_len) % self.multiple()
        m = F.pad(mask.to(x.dtype), (0, pad))
        spk_map = self.spk_map(spk)[:, None, :].expand(-1, t_len, -1)
        h = torch.stack([x, mu, spk_map], dim=1).transpose(2, 3)  # (B, 3, mel, T)
        h = F.pad(h, (0, pad))
        mk = m[:, None, None, :]
        cond = self.cond_mlp(torch.cat([self.time_embedding(t), spk], dim=-1))
        skips, masks = [], []
        for i, blocks in enumerate(self.down):
            for block in blocks:
                h = block(h, mk, cond)
            if i < self.levels - 1:
                skips.append(h)
                masks.append(mk)
                h = F.avg_pool2d(h, 2, ceil_mode=True)
                mk = mk[..., ::2]
        h = self.mid(h, mk, cond)
        for blocks in self.up:
            skip, mk = skips.pop(), masks.pop()
            h = F.interpolate(h, size=skip.shape[-2:], mode="nearest")
            h = torch.cat([h, skip], dim=1)
            for block in blocks:
                h = block(h, mk, cond)
        out = self.final(h) * mk
        return out[:, 0].transpose(1, 2)[:, :t_len]


class DiffusionDecoder(nn.Module):
    def __init__(self, in_dim: int, spk_dim: int, n_mels: int = 80, mean_layers: int = 2,
                 heads: int = 2, filter_dim: int = 1024, ff_kernel: int = 3, dropout: float = 0.1,
                 unet_dim: int = 64, unet_mults=(1, 2, 4), beta_min: float = 0.05,
                 beta_max: float = 20.0, unet_blocks: int = 2):
        super().__init__()
        self.beta_min, self.beta_max = beta_min, beta_max
        self.spk_in = nn.Linear(spk_dim, in_dim)
        self.mean_net = TransformerStack(mean_layers, in_dim, heads, filter_dim, ff_kernel, dropout)
        self.mean_out = nn.Linear(in_dim, n_mels)
        self.score = ScoreUNet(n_mels, spk_dim, unet_dim, tuple(unet_mults), unet_blocks)

    def prior_means(self, h_t, mask, spk):
        x = h_t + self.spk_in(spk)[:, None, :]
        x = x + sinusoidal_positions(x.shape[1], x.shape[2], x.dtype)[None]
        return self.mean_out(self.mean_net(x, mask)) * mask[..., None].to(x.dtype)

    def loss(self, h_t, mask, spk, target, generator=None, t_min: float = 1e-5):
        mu = self.prior_means(h_t, mask, spk)
        m = mask[..., None].to(mu.dtype)
        count = m.sum() * mu.shape[-1]
        prior = ((mu - target).abs() * m).sum() / count
        b = target.shape[0]
        t = torch.rand(b, generator=generator, dtype=mu.dtype).clamp(t_min, 1.0 - t_min)
        cum = cumulative_beta(t, self.beta_min, self.beta_max)[:, None, None]
        mean_t = target * torch.exp(-0.5 * cum) + mu * (1.0 - torch.exp(-0.5 * cum))
        std_t = torch.sqrt(1.0 - torch.exp(-cum))
        eps = torch.randn(target.shape, generator=generator, dtype=mu.dtype)
        x_t = (mean_t + std_t * eps) * m
        s = self.score(x_t, mu, mask, t, spk)
        diff = (((s * std_t + eps) ** 2) * m).sum() / count
        return diff + prior, {"score": float(diff.detach()), "prior_l1": float(prior.detach())}

    def generate(self, h_t, mask, spk, sampling, generator=None):
        if sampling.diffusion_steps < 1:
            raise DiffusionError("diffusion_steps must be >= 1")
        mu = self.prior_means(h_t, mask, spk)
        m = mask[..., None].to(mu.dtype)
        noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
        x = (mu + math.sqrt(sampling.temperature) * noise) * m
        schedule = linear_schedule(sampling.diffusion_steps, self.beta_min, self.beta_max)
        b = x.shape[0]

        def score_fn(state, t):
            return self.score(state, mu, mask, torch.full((b,), t, dtype=mu.dtype), spk)

        return reverse_diffusion(x, mu, score_fn, schedule) * m
