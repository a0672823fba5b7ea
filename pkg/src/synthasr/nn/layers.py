"""Building blocks shared by the TTS and ASR models.

All sequence modules take batch-first tensors ``(B, N, D)`` and a boolean
``mask`` of shape ``(B, N)`` that is True on valid positions.  Padded
positions are zeroed before every convolution so they can never leak into
valid frames.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


class ShapeError(ValueError):
    pass


def sequence_mask(lengths: torch.Tensor, max_len: int | None = None) -> torch.Tensor:
    max_len = int(lengths.max()) if max_len is None else max_len
    return torch.arange(max_len, device=lengths.device)[None, :] < lengths[:, None]


def _check_mask(x: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    if mask is None:
        return torch.ones(x.shape[:2], dtype=torch.bool, device=x.device)
    if mask.shape != x.shape[:2]:
        raise ShapeError(f"mask shape {tuple(mask.shape)} does not match input {tuple(x.shape[:2])}")
    return mask.bool()


def sinusoidal_positions(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : dim // 2]
    return pe.to(dtype)


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int = 2, dropout: float = 0.1):
        super().__init__()
        if dim % heads:
            raise ShapeError(f"dim {dim} not divisible by heads {heads}")
        self.heads, self.head_dim = heads, dim // heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.dropout = nn.Dropout(dropout)
        self.last_weights = None

    def forward(self, x, mask=None):
        mask = _check_mask(x, mask)
        b, n, d = x.shape
        q, k, v = self.qkv(x).view(b, n, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        self.last_weights = weights.detach()
        ctx = (self.dropout(weights) @ v).transpose(1, 2).reshape(b, n, d)
        return self.out(ctx)


class ConvFeedForward(nn.Module):
    """Position-wise feed-forward with 1-D convolutions instead of linears."""

    def __init__(self, dim: int, filter_dim: int, kernel_size: int = 3, dropout: float = 0.1):
        super().__init__()
        self.conv1 = nn.Conv1d(dim, filter_dim, kernel_size, padding=kernel_size // 2)
        self.conv2 = nn.Conv1d(filter_dim, dim, kernel_size, padding=kernel_size // 2)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, mask):
        m = mask[:, None, :].to(x.dtype)
        h = self.conv1(x.transpose(1, 2) * m)
        h = self.dropout(torch.relu(h))
        return (self.conv2(h * m) * m).transpose(1, 2)


class TransformerBlock(nn.Module):
    """Post-norm self-attention block with a convolutional feed-forward."""

    def __init__(self, dim: int, heads: int = 2, filter_dim: int = 1024, kernel_size: int = 3,
                 dropout: float = 0.1):
        super().__init__()
        self.attn = MultiHeadAttention(dim, heads, dropout)
        self.norm1 = nn.LayerNorm(dim)
        self.ffn = ConvFeedForward(dim, filter_dim, kernel_size, dropout)
        self.norm2 = nn.LayerNorm(dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, mask=None):
        mask = _check_mask(x, mask)
        m = mask[..., None].to(x.dtype)
        x = x * m
        x = self.norm1(x + self.dropout(self.attn(x, mask)))
        x = self.norm2(x + self.dropout(self.ffn(x, mask)))
        return x * m


class TransformerStack(nn.Module):
    def __init__(self, num_layers: int, dim: int, heads: int = 2, filter_dim: int = 1024,
                 kernel_size: int = 3, dropout: float = 0.1):
        super().__init__()
        self.layers = nn.ModuleList(
            TransformerBlock(dim, heads, filter_dim, kernel_size, dropout) for _ in range(num_layers)
        )

    def forward(self, x, mask=None):
        for layer in self.layers:
            x = layer(x, mask)
        return x


class MacaronFeedForward(nn.Module):
    def __init__(self, dim: int, expansion: int = 4, dropout: float = 0.1):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.lin1 = nn.Linear(dim, dim * expansion)
        self.lin2 = nn.Linear(dim * expansion, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        h = self.dropout(F.silu(self.lin1(self.norm(x))))
        return self.dropout(self.lin2(h))


class ConformerConvModule(nn.Module):
    # layer norm instead of batch norm keeps outputs independent of batch composition
    def __init__(self, dim: int, kernel_size: int = 31, dropout: float = 0.1):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.pointwise1 = nn.Conv1d(dim, 2 * dim, 1)
        self.depthwise = nn.Conv1d(dim, dim, kernel_size, padding=kernel_size // 2, groups=dim)
        self.mid_norm = nn.LayerNorm(dim)
        self.pointwise2 = nn.Conv1d(dim, dim, 1)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, mask):
        m = mask[:, None, :].to(x.dtype)
        h = F.glu(self.pointwise1(self.norm(x).transpose(1, 2)), dim=1) * m
        h = self.depthwise(h)
        h = F.silu(self.mid_norm(h.transpose(1, 2))).transpose(1, 2)
        return self.dropout(self.pointwise2(h).transpose(1, 2))


class ConformerBlock(nn.Module):
    """Macaron FF halves around self-attention and a convolution module."""

    def __init__(self, dim: int, heads: int = 4, ff_expansion: int = 4, conv_kernel: int = 31,
                 dropout: float = 0.1):
        super().__init__()
        self.ff1 = MacaronFeedForward(dim, ff_expansion, dropout)
        self.attn_norm = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, dropout)
        self.attn_dropout = nn.Dropout(dropout)
        self.conv = ConformerConvModule(dim, conv_kernel, dropout)
        self.ff2 = MacaronFeedForward(dim, ff_expansion, dropout)
        self.final_norm = nn.LayerNorm(dim)

    def residual_outputs(self):
        """Final projections of the four residual branches."""
        return [self.ff1.lin2, self.attn.out, self.conv.pointwise2, self.ff2.lin2]

    def forward(self, x, mask=None):
        mask = _check_mask(x, mask)
        m = mask[..., None].to(x.dtype)
        x = x * m
        x = x + 0.5 * self.ff1(x)
        x = x + self.attn_dropout(self.attn(self.attn_norm(x), mask))
        x = x + self.conv(x * m, mask)
        x = x + 0.5 * self.ff2(x)
        return self.final_norm(x) * m


class ConvReluNorm(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, kernel_size: int, dropout: float = 0.1,
                 activation: str = "relu"):
        super().__init__()
        self.conv = nn.Conv1d(in_dim, out_dim, kernel_size, padding=kernel_size // 2)
        self.norm = nn.LayerNorm(out_dim)
        self.dropout = nn.Dropout(dropout)
        self.activation = torch.relu if activation == "relu" else torch.tanh

    def forward(self, x, mask):
        m = mask[..., None].to(x.dtype)
        h = self.conv((x * m).transpose(1, 2)).transpose(1, 2)
        return self.dropout(self.norm(self.activation(h))) * m


class ZoneoutLSTMCell(nn.Module):
    """LSTM cell whose hidden and cell units are stochastically kept at their
    previous value with probability ``zoneout`` during training."""

    def __init__(self, input_dim: int, hidden_dim: int, zoneout: float = 0.1):
        super().__init__()
        if not 0.0 <= zoneout <= 1.0:
            raise ValueError("zoneout rate must lie in [0, 1]")
        self.cell = nn.LSTMCell(input_dim, hidden_dim)
        self.hidden_dim = hidden_dim
        self.zoneout = zoneout

    def initial_state(self, batch: int, dtype=torch.float32):
        z = torch.zeros(batch, self.hidden_dim, dtype=dtype)
        return z, z.clone()

    def forward(self, x, state, generator: torch.Generator | None = None):
        mode = "train" if self.training else "eval"
        return zoneout_lstm_step(self.cell, state, x, self.zoneout, mode, generator)


def zoneout_lstm_step(cell: nn.LSTMCell, state, x, zoneout_rate: float, mode: str = "train",
                      generator: torch.Generator | None = None):
    """One zoneout-LSTM step; returns the new ``(h, c)``."""
    if not 0.0 <= zoneout_rate <= 1.0:
        raise ValueError("zoneout rate must lie in [0, 1]")
    if x.shape[-1] != cell.input_size:
        raise ShapeError(f"input width {x.shape[-1]} != cell input size {cell.input_size}")
    h_prev, c_prev = state
    h_new, c_new = cell(x, (h_prev, c_prev))
    if mode == "eval":
        return (zoneout_rate * h_prev + (1 - zoneout_rate) * h_new,
                zoneout_rate * c_prev + (1 - zoneout_rate) * c_new)
    if mode != "train":
        raise ValueError(f"unknown mode {mode!r}")
    keep_h = torch.rand(h_prev.shape, generator=generator) < zoneout_rate
    keep_c = torch.rand(c_prev.shape, generator=generator) < zoneout_rate
    return torch.where(keep_h, h_prev, h_new), torch.where(keep_c, c_prev, c_new)


class Postnet(nn.Module):
    """Residual convolutional refinement of a predicted spectrogram."""

    def __init__(self, n_mels: int = 80, channels: int = 512, kernel_size: int = 5,
                 num_layers: int = 5, dropout: float = 0.1):
        super().__init__()
        dims = [n_mels] + [channels] * (num_layers - 1) + [n_mels]
        self.convs = nn.ModuleList(
            nn.Conv1d(dims[i], dims[i + 1], kernel_size, padding=kernel_size // 2)
            for i in range(num_layers)
        )
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, mask):
        m = mask[:, None, :].to(x.dtype)
        h = x.transpose(1, 2) * m
        for i, conv in enumerate(self.convs):
            h = conv(h * m)
            if i < len(self.convs) - 1:
                h = self.dropout(torch.tanh(h))
        return x + (h * m).transpose(1, 2)
