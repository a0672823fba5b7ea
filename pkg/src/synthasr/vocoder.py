"""Learned log-Mel to linear-magnitude mapping."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from synthasr.dsp import FeatureConfig, mel_filterbank
from synthasr.nn.checkpoint import load_checkpoint, save_checkpoint
from synthasr.nn.optim import Optimizer, OptimizerConfig


@dataclass
class VocoderConfig:
    n_mels: int = 80
    n_freqs: int = 513
    hidden: int = 256
    layers: int = 1


class MelToLinearNet(nn.Module):
    """BLSTM predicting a log-magnitude residual on top of the filterbank transpose estimate."""

    def __init__(self, config: VocoderConfig, features: FeatureConfig | None = None):
        super().__init__()
        self.config = config
        self.lstm = nn.LSTM(config.n_mels, config.hidden, num_layers=config.layers,
                            batch_first=True, bidirectional=True)
        self.out = nn.Linear(2 * config.hidden, config.n_freqs)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)
        fb = mel_filterbank(features) if features is not None else np.zeros((config.n_mels, config.n_freqs))
        self.register_buffer("basis", torch.as_tensor(fb.T / np.maximum(fb.sum(1), 1e-12), dtype=torch.float32))

    def forward(self, log_mel: torch.Tensor) -> torch.Tensor:
        """(B, T, n_mels) log-Mel -> (B, T, n_freqs) log-magnitudes."""
        base = 0.5 * torch.log(torch.exp(log_mel) @ self.basis.T + 1e-10)
        h, _ = self.lstm(log_mel)
        return base + self.out(h)

    @torch.no_grad()
    def predict(self, frames) -> np.ndarray:
        self.eval()
        x = torch.as_tensor(np.asarray(frames), dtype=torch.float32)[None]
        return torch.exp(self(x))[0].double().numpy()


def train_vocoder(pairs, features: FeatureConfig, config: VocoderConfig | None = None,
                  steps: int = 200, lr: float = 1e-3, seed: int = 0) -> MelToLinearNet:
    """Fit on ``(log_mel (T, n_mels), magnitude (T, n_freqs))`` pairs with an L1 loss on log-magnitudes."""
    torch.manual_seed(seed)
    config = config or VocoderConfig(features.n_mels, features.n_freqs)
    net = MelToLinearNet(config, features)
    opt = Optimizer(net.named_parameters(), OptimizerConfig("adam", lr))
    rng = np.random.default_rng(seed)
    data = [(torch.as_tensor(m, dtype=torch.float32)[None],
             torch.log(torch.as_tensor(s, dtype=torch.float32) + 1e-5)[None]) for m, s in pairs]
    net.train()
    for _ in range(steps):
        mel, target = data[int(rng.integers(len(data)))]
        loss = (net(mel) - target).abs().mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
    net.eval()
    return net


def save_vocoder(path, net: MelToLinearNet) -> None:
    save_checkpoint(path, net.state_dict(), config=asdict(net.config))


def load_vocoder(path) -> MelToLinearNet:
    state, header = load_checkpoint(path)
    net = MelToLinearNet(VocoderConfig(**header["config"]))
    net.load_state_dict(state)
    net.eval()
    return net
