"""Trunk + interchangeable decoder, training losses and synthesis."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from synthasr.nn.checkpoint import load_checkpoint, save_checkpoint
from synthasr.tts.diffusion import DiffusionDecoder
from synthasr.tts.direct import ArLstmDecoder, NarLstmDecoder, TransformerDecoder
from synthasr.tts.flow import FlowDecoder
from synthasr.tts.trunk import (
    Trunk,
    TrunkConfig,
    TrunkError,
    duration_loss,
    round_durations,
    upsample_batch,
)

VARIANTS = ("transformer", "nar_lstm", "ar_lstm", "flow", "diffusion")


@dataclass
class DecoderConfig:
    variant: str = "transformer"
    layers: int = 6
    lstm_dim: int = 512
    lstm_layers: int = 2
    ar_lstm_dim: int = 1024
    prenet_dim: int = 256
    zoneout: float = 0.1
    reduction: int = 2
    postnet_channels: int = 512
    postnet_kernel: int = 5
    postnet_layers: int = 5
    flow_blocks: int = 12
    flow_hidden: int = 256
    flow_kernel: int = 5
    flow_wn_layers: int = 4
    flow_split: int = 4
    flow_identity_init: bool = False
    mean_layers: int = 2
    unet_dim: int = 64
    unet_mults: tuple = (1, 2, 4)
    unet_blocks: int = 2
    beta_min: float = 0.05
    beta_max: float = 20.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown decoder variant {self.variant!r}; choose from {VARIANTS}")
        self.unet_mults = tuple(self.unet_mults)


@dataclass
class SamplingConfig:
    temperature: float = 0.7
    diffusion_steps: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.diffusion_steps < 1:
            raise ValueError("diffusion_steps must be >= 1")


@dataclass
class TTSConfig:
    trunk: TrunkConfig
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def to_dict(self) -> dict:
        return {"trunk": asdict(self.trunk), "decoder": asdict(self.decoder)}

    @classmethod
    def from_dict(cls, d: dict) -> "TTSConfig":
        return cls(TrunkConfig(**d["trunk"]), DecoderConfig(**d.get("decoder", {})))


def build_decoder(trunk: TrunkConfig, dec: DecoderConfig) -> nn.Module:
    d, s, n = trunk.dim, trunk.speaker_dim, trunk.n_mels
    postnet = {"channels": dec.postnet_channels, "kernel_size": dec.postnet_kernel,
               "num_layers": dec.postnet_layers, "dropout": trunk.dropout}
    if dec.variant == "transformer":
        return TransformerDecoder(d, s, n, dec.layers, trunk.heads, trunk.filter_dim,
                                  trunk.ff_kernel, trunk.dropout)
    if dec.variant == "nar_lstm":
        return NarLstmDecoder(d, s, n, dec.lstm_dim, dec.lstm_layers, trunk.dropout, postnet)
    if dec.variant == "ar_lstm":
        return ArLstmDecoder(d, s, n, dec.ar_lstm_dim, dec.lstm_layers, dec.prenet_dim,
                             dec.zoneout, dec.reduction, postnet=postnet, dropout=trunk.dropout)
    if dec.variant == "flow":
        return FlowDecoder(d, s, n, dec.flow_blocks, dec.flow_hidden, dec.flow_kernel, 1,
                           dec.flow_wn_layers, dec.flow_split, 2, identity_init=dec.flow_identity_init)
    return DiffusionDecoder(d, s, n, dec.mean_layers, trunk.heads, trunk.filter_dim,
                            trunk.ff_kernel, trunk.dropout, dec.unet_dim, dec.unet_mults,
                            dec.beta_min, dec.beta_max, dec.unet_blocks)


@dataclass
class Batch:
    phonemes: torch.Tensor  # (B, N) long
    phoneme_mask: torch.Tensor  # (B, N) bool
    speakers: torch.Tensor  # (B,) long
    durations: list | None = None  # per item int arrays
    mels: torch.Tensor | None = None  # (B, T, n_mels), normalised
    mel_mask: torch.Tensor | None = None


def collate(phoneme_seqs, speakers, durations=None, mels=None) -> Batch:
    b = len(phoneme_seqs)
    n_max = max(len(p) for p in phoneme_seqs)
    ph = torch.zeros(b, n_max, dtype=torch.long)
    pm = torch.zeros(b, n_max, dtype=torch.bool)
    for i, p in enumerate(phoneme_seqs):
        ph[i, : len(p)] = torch.as_tensor(np.asarray(p), dtype=torch.long)
        pm[i, : len(p)] = True
    batch = Batch(ph, pm, torch.as_tensor(np.asarray(speakers), dtype=torch.long),
                  [np.asarray(d) for d in durations] if durations is not None else None)
    if mels is not None:
        t_max = max(len(m) for m in mels)
        x = torch.zeros(b, t_max, mels[0].shape[1])
        xm = torch.zeros(b, t_max, dtype=torch.bool)
        for i, m in enumerate(mels):
            x[i, : len(m)] = torch.as_tensor(np.asarray(m), dtype=torch.float32)
            xm[i, : len(m)] = True
        batch.mels, batch.mel_mask = x, xm
    return batch


class TTSModel(nn.Module):
    def __init__(self, config: TTSConfig):
        super().__init__()
        self.config = config
        self.trunk = Trunk(config.trunk)
        self.decoder = build_decoder(config.trunk, config.decoder)
        n = config.trunk.n_mels
        # log-mel normalisation statistics, fitted on training data
        self.register_buffer("mel_mean", torch.zeros(n))
        self.register_buffer("mel_std", torch.ones(n))

    @property
    def variant(self) -> str:
        return self.config.decoder.variant

    def fit_normalisation(self, mels) -> None:
        stacked = np.concatenate([np.asarray(m, dtype=np.float64) for m in mels])
        self.mel_mean.copy_(torch.as_tensor(stacked.mean(0), dtype=torch.float32))
        self.mel_std.copy_(torch.as_tensor(np.maximum(stacked.std(0), 1e-3), dtype=torch.float32))

    def normalise(self, mel):
        return (torch.as_tensor(np.asarray(mel), dtype=torch.float32) - self.mel_mean) / self.mel_std

    def denormalise(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.mel_std + self.mel_mean

    def upsampled_states(self, batch: Batch, durations):
        h = self.trunk.encode(batch.phonemes, batch.phoneme_mask)
        n_lengths = batch.phoneme_mask.sum(1).tolist()
        h_t, t_mask = upsample_batch(h, durations, n_lengths)
        return h, h_t, t_mask

    def losses(self, batch: Batch, generator=None) -> tuple[torch.Tensor, dict]:
        """Duration loss plus the decoder's own loss on a batch with targets."""
        h, h_t, t_mask = self.upsampled_states(batch, batch.durations)
        if h_t.shape[1] != batch.mels.shape[1] or not torch.equal(t_mask, batch.mel_mask):
            raise TrunkError("durations do not sum to the target frame counts")
        spk = self.trunk.speaker_embedding(batch.speakers)
        log_d = self.trunk.predict_durations(h, spk, batch.phoneme_mask)
        d_target = torch.zeros_like(log_d)
        for i, d in enumerate(batch.durations):
            d_target[i, : len(d)] = torch.as_tensor(d, dtype=log_d.dtype)
        l_dur = duration_loss(log_d, d_target, batch.phoneme_mask)
        l_dec, parts = decoder_train_loss(self, h_t, t_mask, spk, batch.mels, generator)
        parts["duration"] = float(l_dur.detach())
        return l_dec + l_dur, parts

    @torch.no_grad()
    def predict_durations(self, phonemes, speaker: int) -> np.ndarray:
        batch = collate([phonemes], [speaker])
        h = self.trunk.encode(batch.phonemes, batch.phoneme_mask)
        spk = self.trunk.speaker_embedding(batch.speakers)
        return round_durations(self.trunk.predict_durations(h, spk, batch.phoneme_mask)[0].numpy())


def decoder_train_loss(model: TTSModel, h_t, mask, spk, target, generator=None):
    """Variant-specific loss of the decoder on normalised targets."""
    if h_t.shape[:2] != target.shape[:2]:
        raise TrunkError(f"decoder input has {h_t.shape[1]} frames, target {target.shape[1]}")
    if model.variant == "diffusion":
        return model.decoder.loss(h_t, mask, spk, target, generator=generator)
    return model.decoder.loss(h_t, mask, spk, target)


def utterance_seed(global_seed: int, utt_id: str) -> int:
    digest = hashlib.sha256(f"{global_seed}:{utt_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF


@torch.no_grad()
def generate(model: TTSModel, h_t, mask, spk, sampling: SamplingConfig,
             generator: torch.Generator | None = None) -> torch.Tensor:
    """Normalised mel frames (B, T, n_mels) from up-sampled states."""
    return model.decoder.generate(h_t, mask, spk, sampling, generator)


@torch.no_grad()
def synthesize_utterance(model: TTSModel, phonemes, speaker: int, sampling: SamplingConfig,
                         utt_id: str = "", durations=None) -> np.ndarray:
    """Phonemes -> log-Mel frames (T, n_mels), deterministic in (seed, utt_id).

    Uses predicted durations unless ``durations`` is given.
    """
    model.eval()
    gen = torch.Generator().manual_seed(utterance_seed(sampling.seed, utt_id))
    if durations is None:
        durations = model.predict_durations(phonemes, speaker)
    durations = np.asarray(durations, dtype=np.int64)
    if durations.sum() < 1:
        raise TrunkError("predicted durations sum to zero")
    batch = collate([phonemes], [speaker])
    _, h_t, t_mask = model.upsampled_states(batch, [durations])
    spk = model.trunk.speaker_embedding(batch.speakers)
    out = generate(model, h_t, t_mask, spk, sampling, gen)
    return model.denormalise(out)[0].numpy().astype(np.float64)


def save_tts(path, model: TTSModel, meta: dict | None = None, epoch: float = 0) -> None:
    save_checkpoint(path, model.state_dict(), meta=meta, epoch=epoch,
                    config=model.config.to_dict())


def load_tts(path) -> TTSModel:
    state, header = load_checkpoint(path)
    model = TTSModel(TTSConfig.from_dict(header["config"]))
    model.load_state_dict(state)
    model.eval()
    return model


def parameter_breakdown(model: TTSModel) -> dict[str, int]:
    """Parameter counts per top-level submodule."""
    out = {}
    groups = {
        "embedding": model.trunk.embedding,
        "prenet": model.trunk.prenet,
        "encoder": model.trunk.encoder,
        "duration_predictor": model.trunk.duration,
        "speaker_embedding": model.trunk.speakers,
        "decoder": model.decoder,
    }
    for name, module in groups.items():
        out[name] = sum(p.numel() for p in module.parameters())
    return out
