"""Conformer CTC recognizer with a strided convolutional frontend."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from synthasr.asr.specaug import MaskSpec
from synthasr.nn.checkpoint import load_checkpoint, save_checkpoint
from synthasr.nn.layers import ConformerBlock, sequence_mask, sinusoidal_positions


@dataclass
class AsrConfig:
    phonemes: tuple = ()
    num_blocks: int = 12
    model_dim: int = 384
    heads: int = 4
    ff_expansion: int = 4
    conv_kernel: int = 31
    frontend_channels: int = 32
    subsampling_factor: int = 4
    n_mels: int = 80
    dropout: float = 0.1
    specaugment: MaskSpec = field(default_factory=MaskSpec)

    def __post_init__(self):
        self.phonemes = tuple(self.phonemes)
        if isinstance(self.specaugment, dict):
            self.specaugment = MaskSpec(**self.specaugment)
        f = self.subsampling_factor
        if f < 1 or f & (f - 1):
            raise ValueError("subsampling_factor must be a power of two >= 1")
        if len(set(self.phonemes)) != len(self.phonemes):
            raise ValueError("duplicate phonemes in the recognizer inventory")

    @property
    def vocab_size(self) -> int:
        return 1 + 2 * len(self.phonemes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phonemes"] = list(self.phonemes)
        return d


def subsampled_length(n_frames, factor: int = 4):
    """Frames left after ``log2(factor)`` stride-2 convolutions (kernel 3, padding 1)."""
    n = n_frames
    while factor > 1:
        n = (n + 1) // 2
        factor //= 2
    return n


class Frontend(nn.Module):
    """Stride-2 2-D convolutions over (time, mel), then a projection to the model width."""

    def __init__(self, n_mels: int, channels: int, dim: int, factor: int):
        super().__init__()
        self.factor = factor
        layers, in_ch, width = [], 1, n_mels
        while factor > 1:
            layers.append(nn.Conv2d(in_ch, channels, 3, stride=2, padding=1))
            in_ch, width, factor = channels, (width + 1) // 2, factor // 2
        self.convs = nn.ModuleList(layers)
        self.proj = nn.Linear(in_ch * width, dim)

    def forward(self, x, lengths):
        h = x[:, None]  # (B, 1, T, F)
        for conv in self.convs:
            mask = sequence_mask(lengths, h.shape[2])[:, None, :, None].to(h.dtype)
            h = F.relu(conv(h * mask))
            lengths = (lengths + 1) // 2
        b, c, t, f = h.shape
        return self.proj(h.permute(0, 2, 1, 3).reshape(b, t, c * f)), lengths


class AsrModel(nn.Module):
    def __init__(self, config: AsrConfig):
        super().__init__()
        self.config = config
        self.frontend = Frontend(config.n_mels, config.frontend_channels, config.model_dim,
                                 config.subsampling_factor)
        self.dropout = nn.Dropout(config.dropout)
        self.blocks = nn.ModuleList(
            ConformerBlock(config.model_dim, config.heads, config.ff_expansion,
                           config.conv_kernel, config.dropout)
            for _ in range(config.num_blocks)
        )
        self.out = nn.Linear(config.model_dim, config.vocab_size)

    @staticmethod
    def normalise(frames: np.ndarray) -> np.ndarray:
        """Per-utterance mean and variance normalisation of each mel bin."""
        frames = np.asarray(frames, dtype=np.float64)
        return (frames - frames.mean(0)) / np.maximum(frames.std(0), 1e-3)

    def forward(self, feats: torch.Tensor, lengths: torch.Tensor):
        """(B, T, n_mels) normalised features -> ((B, T', V) log-probs, T' lengths)."""
        h, out_lengths = self.frontend(feats, lengths)
        h = h + sinusoidal_positions(h.shape[1], h.shape[2], h.dtype)[None]
        h = self.dropout(h)
        mask = sequence_mask(out_lengths, h.shape[1])
        for block in self.blocks:
            h = block(h, mask)
        return F.log_softmax(self.out(h), dim=-1), out_lengths

    @torch.no_grad()
    def log_probs(self, frames: np.ndarray) -> np.ndarray:
        """Un-normalised (T, n_mels) log-mel frames -> (T', V) log-probabilities."""
        self.eval()
        x = torch.as_tensor(self.normalise(frames), dtype=torch.float32)[None]
        lp, _ = self(x, torch.tensor([x.shape[1]]))
        return lp[0].double().numpy()


def save_asr(path, model: AsrModel, meta: dict | None = None, epoch: float = 0) -> None:
    save_checkpoint(path, model.state_dict(), meta=meta, epoch=epoch, config=model.config.to_dict())


def load_asr(path) -> AsrModel:
    state, header = load_checkpoint(path)
    model = AsrModel(AsrConfig(**header["config"]))
    model.load_state_dict(state)
    model.eval()
    return model
