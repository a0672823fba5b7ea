"""Glow-style invertible decoder: squeeze, then blocks of
(ActNorm, grouped invertible 1x1 convolution, affine coupling).

Tensors inside the flow are channel-first ``(B, C, T')``.
"""

from __future__ import annotations

import math

import torch
from torch import nn


class FlowError(RuntimeError):
    pass


def squeeze(x: torch.Tensor, mask: torch.Tensor, factor: int = 2):
    """(B, T, C) frames -> (B, C*factor, T/factor) latent steps; T must be a multiple."""
    b, t, c = x.shape
    if t % factor:
        raise FlowError(f"frame count {t} not a multiple of {factor}")
    z = x.reshape(b, t // factor, factor * c).transpose(1, 2)
    m = mask.view(b, t // factor, factor).any(-1)
    return z * m[:, None, :].to(z.dtype), m


def unsqueeze(z: torch.Tensor, factor: int = 2) -> torch.Tensor:
    """Inverse of :func:`squeeze` for the tensor part: (B, C*f, T') -> (B, T'*f, C)."""
    b, cf, tp = z.shape
    return z.transpose(1, 2).reshape(b, tp * factor, cf // factor)


class ActNorm(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.logs = nn.Parameter(torch.zeros(1, channels, 1))
        self.bias = nn.Parameter(torch.zeros(1, channels, 1))

    def forward(self, x, mask, g=None, reverse=False):
        m = mask[:, None, :].to(x.dtype)
        n = m.sum((1, 2))
        if reverse:
            return (x - self.bias) * torch.exp(-self.logs) * m, -self.logs.sum() * n
        return (x * torch.exp(self.logs) + self.bias) * m, self.logs.sum() * n


class InvConvNear(nn.Module):
    """Invertible 1x1 convolution mixing channel groups of size ``n_split``."""

    def __init__(self, channels: int, n_split: int = 4, identity: bool = False):
        super().__init__()
        if channels % n_split or n_split % 2:
            raise FlowError("channels must be divisible by an even n_split")
        self.channels, self.n_split = channels, n_split
        if identity:
            w = torch.eye(n_split)
        else:
            w = torch.linalg.qr(torch.randn(n_split, n_split))[0]
            if torch.det(w) < 0:
                w[:, 0] = -w[:, 0]
        self.weight = nn.Parameter(w)

    def forward(self, x, mask, g=None, reverse=False):
        b, c, t = x.shape
        s = self.n_split
        m = mask[:, None, :].to(x.dtype)
        n = m.sum((1, 2))
        xg = x.view(b, 2, c // s, s // 2, t).permute(0, 1, 3, 2, 4).reshape(b, s, c // s, t)
        logabsdet = torch.linalg.slogdet(self.weight)[1]
        if reverse:
            w = torch.linalg.inv(self.weight)
            logdet = -logabsdet * (c / s) * n
        else:
            w = self.weight
            logdet = logabsdet * (c / s) * n
        z = torch.einsum("ij,bjct->bict", w, xg)
        z = z.view(b, 2, s // 2, c // s, t).permute(0, 1, 3, 2, 4).reshape(b, c, t)
        return z * m, logdet


class WaveNet(nn.Module):
    """Gated dilated convolutions with a global conditioning vector."""

    def __init__(self, hidden: int, kernel: int, dilation_rate: int, layers: int, gin: int,
                 dropout: float = 0.0):
        super().__init__()
        self.hidden, self.layers = hidden, layers
        self.in_layers = nn.ModuleList()
        self.res_skip = nn.ModuleList()
        for i in range(layers):
            d = dilation_rate ** i
            self.in_layers.append(nn.Conv1d(hidden, 2 * hidden, kernel, dilation=d,
                                            padding=(kernel * d - d) // 2))
            out = 2 * hidden if i < layers - 1 else hidden
            self.res_skip.append(nn.Conv1d(hidden, out, 1))
        self.cond = nn.Linear(gin, 2 * hidden * layers) if gin else None
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, mask, g=None):
        m = mask[:, None, :].to(x.dtype)
        out = torch.zeros_like(x)
        cond = self.cond(g)[..., None] if (self.cond is not None and g is not None) else None
        for i in range(self.layers):
            a = self.in_layers[i](x)
            if cond is not None:
                a = a + cond[:, i * 2 * self.hidden:(i + 1) * 2 * self.hidden]
            acts = self.dropout(torch.tanh(a[:, : self.hidden]) * torch.sigmoid(a[:, self.hidden:]))
            rs = self.res_skip[i](acts)
            if i < self.layers - 1:
                x = (x + rs[:, : self.hidden]) * m
                out = out + rs[:, self.hidden:]
            else:
                out = out + rs
        return out * m


class CouplingBlock(nn.Module):
    """Affine coupling: the second channel half is scaled and shifted by a
    function of the first half and the speaker vector."""

    def __init__(self, channels: int, hidden: int, kernel: int = 5, dilation_rate: int = 1,
                 layers: int = 4, gin: int = 0, dropout: float = 0.0):
        super().__init__()
        self.half = channels // 2
        self.start = nn.Conv1d(self.half, hidden, 1)
        self.wn = WaveNet(hidden, kernel, dilation_rate, layers, gin, dropout)
        self.end = nn.Conv1d(hidden, 2 * (channels - self.half), 1)
        nn.init.zeros_(self.end.weight)
        nn.init.zeros_(self.end.bias)

    def forward(self, x, mask, g=None, reverse=False):
        m = mask[:, None, :].to(x.dtype)
        x0, x1 = x[:, : self.half], x[:, self.half:]
        h = self.wn(self.start(x0) * m, mask, g)
        stats = self.end(h)
        shift, logs = stats[:, : x1.shape[1]], stats[:, x1.shape[1]:]
        if reverse:
            x1 = (x1 - shift) * torch.exp(-logs) * m
            logdet = -(logs * m).sum((1, 2))
        else:
            x1 = (shift + torch.exp(logs) * x1) * m
            logdet = (logs * m).sum((1, 2))
        return torch.cat([x0, x1], dim=1), logdet


class FlowDecoder(nn.Module):
    """Invertible map between (squeezed) mel frames and latents, plus the
    prior-mean projection of the encoder states."""

    def __init__(self, in_dim: int, spk_dim: int, n_mels: int = 80, blocks: int = 12,
                 hidden: int = 256, kernel: int = 5, dilation_rate: int = 1, wn_layers: int = 4,
                 n_split: int = 4, squeeze_factor: int = 2, dropout: float = 0.05,
                 identity_init: bool = False):
        super().__init__()
        self.n_mels, self.factor = n_mels, squeeze_factor
        channels = n_mels * squeeze_factor
        self.mean_proj = nn.Linear(in_dim, n_mels)
        self.flows = nn.ModuleList()
        for _ in range(blocks):
            self.flows.append(ActNorm(channels))
            self.flows.append(InvConvNear(channels, n_split, identity=identity_init))
            self.flows.append(CouplingBlock(channels, hidden, kernel, dilation_rate, wn_layers,
                                            spk_dim, dropout))

    def prior_means(self, h):
        return self.mean_proj(h)

    def padded_length(self, t: int) -> int:
        return math.ceil(t / self.factor) * self.factor

    def flow_forward(self, x, mask, spk):
        """(B, T, n_mels) frames, T a multiple of the squeeze factor -> (z, z_mask, logdet)."""
        z, zmask = squeeze(x, mask, self.factor)
        logdet = torch.zeros(x.shape[0], dtype=x.dtype)
        for f in self.flows:
            z, ld = f(z, zmask, spk)
            logdet = logdet + ld
            _check_finite(z)
        return z, zmask, logdet

    def flow_inverse(self, z, zmask, spk):
        """(B, C*f, T') latents -> (B, T'*f, n_mels) frames."""
        for f in reversed(self.flows):
            z, _ = f(z, zmask, spk, reverse=True)
            _check_finite(z)
        return unsqueeze(z, self.factor)

    def _pad(self, x, mask):
        from synthasr.tts.direct import _pad_with_last

        t = self.padded_length(x.shape[1])
        xp = _pad_with_last(x, mask, t)
        lengths = mask.sum(1)
        mp = torch.arange(t)[None, :] < (torch.div(lengths + self.factor - 1, self.factor,
                                                   rounding_mode="floor") * self.factor)[:, None]
        return xp * mp[..., None].to(x.dtype), mp

    def nll(self, h_t, mask, spk, target):
        """Per-dimension Gaussian negative log-likelihood minus log-determinant."""
        x, xmask = self._pad(target, mask)
        mu, _ = self._pad(self.prior_means(h_t), mask)
        z, zmask, logdet = self.flow_forward(x, xmask, spk)
        mu_z, _ = squeeze(mu, xmask, self.factor)
        m = zmask[:, None, :].to(z.dtype)
        count = m.sum() * z.shape[1]
        sq = (0.5 * (z - mu_z) ** 2 * m).sum()
        const = 0.5 * math.log(2 * math.pi) * count
        return (sq + const - logdet.sum()) / count

    def loss(self, h_t, mask, spk, target):
        nll = self.nll(h_t, mask, spk, target)
        return nll, {"nll": float(nll.detach())}

    def generate(self, h_t, mask, spk, sampling, generator=None):
        t = h_t.shape[1]
        mu, xmask = self._pad(self.prior_means(h_t), mask)
        mu_z, zmask = squeeze(mu, xmask, self.factor)
        noise = torch.randn(mu_z.shape, generator=generator, dtype=mu_z.dtype)
        z = (mu_z + math.sqrt(sampling.temperature) * noise) * zmask[:, None, :].to(mu_z.dtype)
        return self.flow_inverse(z, zmask, spk)[:, :t] * mask[..., None].to(mu_z.dtype)


def _check_finite(z):
    if not torch.isfinite(z).all():
        raise FloatingPointError("non-finite value inside the flow")
