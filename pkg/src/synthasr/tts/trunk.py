"""Shared TTS trunk: phoneme encoder, duration predictor and up-sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from synthasr.nn.layers import ConvReluNorm, TransformerStack, sinusoidal_positions


class TrunkError(ValueError):
    pass


@dataclass
class TrunkConfig:
    vocab_size: int
    num_speakers: int
    dim: int = 256
    prenet_layers: int = 3
    prenet_kernel: int = 5
    encoder_layers: int = 6
    heads: int = 2
    filter_dim: int = 1024
    ff_kernel: int = 3
    dropout: float = 0.1
    speaker_dim: int = 256
    duration_channels: int = 384
    duration_kernel: int = 3
    duration_layers: int = 2
    n_mels: int = 80


class DurationPredictor(nn.Module):
    """Predicts log(d + 1) per phoneme from gradient-stopped encoder states."""

    def __init__(self, in_dim: int, channels: int, kernel: int, layers: int, dropout: float):
        super().__init__()
        dims = [in_dim] + [channels] * layers
        self.convs = nn.ModuleList(
            ConvReluNorm(dims[i], dims[i + 1], kernel, dropout) for i in range(layers)
        )
        self.proj = nn.Linear(channels, 1)

    def forward(self, x, mask):
        for conv in self.convs:
            x = conv(x, mask)
        return self.proj(x).squeeze(-1) * mask.to(x.dtype)


class Trunk(nn.Module):
    def __init__(self, config: TrunkConfig):
        super().__init__()
        self.config = config
        c = config
        self.embedding = nn.Embedding(c.vocab_size, c.dim)
        nn.init.normal_(self.embedding.weight, 0.0, c.dim ** -0.5)
        self.prenet = nn.ModuleList(
            ConvReluNorm(c.dim, c.dim, c.prenet_kernel, c.dropout) for _ in range(c.prenet_layers)
        )
        self.encoder = TransformerStack(c.encoder_layers, c.dim, c.heads, c.filter_dim,
                                        c.ff_kernel, c.dropout)
        self.speakers = nn.Embedding(c.num_speakers, c.speaker_dim)
        self.duration = DurationPredictor(c.dim + c.speaker_dim, c.duration_channels,
                                          c.duration_kernel, c.duration_layers, c.dropout)

    def speaker_embedding(self, speakers: torch.Tensor) -> torch.Tensor:
        if speakers.numel() and (speakers.min() < 0 or speakers.max() >= self.config.num_speakers):
            raise TrunkError(f"speaker id outside [0, {self.config.num_speakers})")
        return self.speakers(speakers)

    def encode(self, phonemes: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """(B, N) phoneme ids -> (B, N, dim) encoder states."""
        if phonemes.shape[1] == 0 or not bool(mask.any(dim=1).all()):
            raise TrunkError("empty phoneme sequence")
        valid = phonemes[mask]
        if valid.numel() and (valid.min() < 0 or valid.max() >= self.config.vocab_size):
            raise TrunkError(f"phoneme id outside vocabulary of size {self.config.vocab_size}")
        x = self.embedding(phonemes.clamp(0, self.config.vocab_size - 1))
        for conv in self.prenet:
            x = x + conv(x, mask)
        x = x + sinusoidal_positions(x.shape[1], x.shape[2], x.dtype)[None]
        return self.encoder(x * mask[..., None].to(x.dtype), mask)

    def predict_durations(self, h: torch.Tensor, spk: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Log(d + 1) per phoneme; ``h`` is detached so no gradient reaches the encoder."""
        g = spk[:, None, :].expand(-1, h.shape[1], -1)
        return self.duration(torch.cat([h.detach(), g], dim=-1), mask)


def duration_loss(log_pred: torch.Tensor, durations: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Masked mean of |predicted - log(d + 1)|."""
    target = torch.log1p(durations.to(log_pred.dtype))
    m = mask.to(log_pred.dtype)
    return ((log_pred - target).abs() * m).sum() / m.sum()


def round_durations(log_pred) -> np.ndarray:
    """exp(log_pred) - 1, rounded half-up and clamped at zero."""
    d = np.exp(np.asarray(log_pred, dtype=np.float64)) - 1.0
    return np.maximum(np.floor(d + 0.5), 0).astype(np.int64)


def upsample(h: torch.Tensor, durations) -> torch.Tensor:
    """Repeat row n of ``h`` (N, D) durations[n] times, in order."""
    d = torch.as_tensor(np.asarray(durations), dtype=torch.long)
    if d.ndim != 1 or d.numel() != h.shape[0]:
        raise TrunkError(f"{d.numel()} durations for {h.shape[0]} encoder states")
    if (d < 0).any():
        raise TrunkError("negative duration")
    if int(d.sum()) < 1:
        raise TrunkError("durations sum to zero; nothing to up-sample")
    return torch.repeat_interleave(h, d, dim=0)


def upsample_batch(h: torch.Tensor, durations: list, n_lengths) -> tuple[torch.Tensor, torch.Tensor]:
    """Up-sample each item of a padded batch; returns ``(h_t, frame_mask)``."""
    rows = [upsample(h[b, : n_lengths[b]], durations[b]) for b in range(h.shape[0])]
    t_max = max(r.shape[0] for r in rows)
    out = h.new_zeros(h.shape[0], t_max, h.shape[2])
    mask = torch.zeros(h.shape[0], t_max, dtype=torch.bool)
    for b, r in enumerate(rows):
        out[b, : r.shape[0]] = r
        mask[b, : r.shape[0]] = True
    return out, mask
