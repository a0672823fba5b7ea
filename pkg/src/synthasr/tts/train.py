"""TTS training, including the alignment mode that produces duration targets."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from synthasr.nn.optim import TTS_SCHEDULE, LrSchedule, Optimizer, OptimizerConfig, lr_at, scaled
from synthasr.tts.flow import unsqueeze
from synthasr.tts.mas import AlignmentError, mas_align
from synthasr.tts.model import Batch, TTSModel, collate

log = logging.getLogger(__name__)


@dataclass
class TTSItem:
    utt_id: str
    phonemes: list[int]
    speaker: int
    mel: np.ndarray  # (T, n_mels) log-Mel, not normalised


@dataclass
class TTSTrainSettings:
    epochs: float = 400
    batch_size: int = 8
    schedule: LrSchedule = field(default_factory=lambda: TTS_SCHEDULE)
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.schedule, dict):
            self.schedule = LrSchedule(**self.schedule)
        if self.epochs <= 0 or self.batch_size < 1:
            raise ValueError("epochs must be positive and batch_size >= 1")


@torch.no_grad()
def align_batch(model: TTSModel, batch: Batch) -> list[np.ndarray]:
    """Durations maximising the latent likelihood under the current flow."""
    if model.variant != "flow":
        raise AlignmentError("alignment search needs the flow decoder")
    dec = model.decoder
    h = model.trunk.encode(batch.phonemes, batch.phoneme_mask)
    spk = model.trunk.speaker_embedding(batch.speakers)
    x, xmask = dec._pad(batch.mels, batch.mel_mask)
    z, _, _ = dec.flow_forward(x, xmask, spk)
    frames = unsqueeze(z, dec.factor)
    means = dec.prior_means(h)
    out = []
    for b in range(len(batch.speakers)):
        n = int(batch.phoneme_mask[b].sum())
        t = int(batch.mel_mask[b].sum())
        out.append(mas_align(means[b, :n].double().numpy(), frames[b, :t].double().numpy()))
    return out


def _make_batch(model: TTSModel, items, durations):
    mels = [model.normalise(it.mel).numpy() for it in items]
    return collate([it.phonemes for it in items], [it.speaker for it in items],
                   [durations[it.utt_id] for it in items] if durations is not None else None, mels)


def train_tts(model: TTSModel, items: list[TTSItem], settings: TTSTrainSettings,
              durations: dict | None = None, align: bool = False,
              max_steps: int | None = None) -> list[float]:
    """Train in place; returns per-step losses.

    With ``align=True`` the duration targets of every batch come from
    alignment search against the current flow, otherwise from ``durations``.
    """
    if not items:
        raise ValueError("no training items")
    if not align and durations is None:
        raise ValueError("duration targets are required unless training in alignment mode")
    if not align:
        for it in items:
            d = durations.get(it.utt_id)
            if d is None:
                raise KeyError(f"no durations for utterance {it.utt_id!r}")
            if len(d) != len(it.phonemes) or int(np.sum(d)) != len(it.mel):
                raise ValueError(f"{it.utt_id}: durations do not match phonemes/frames")
    torch.manual_seed(settings.seed)
    model.fit_normalisation([it.mel for it in items])
    opt = Optimizer(model.named_parameters(), OptimizerConfig("adam", settings.schedule.lr_start))
    schedule = scaled(settings.schedule, settings.epochs)
    rng = np.random.default_rng(settings.seed)
    gen = torch.Generator().manual_seed(settings.seed)
    per_epoch = int(np.ceil(len(items) / settings.batch_size))
    total = int(np.ceil(settings.epochs * per_epoch))
    if max_steps is not None:
        total = min(total, max_steps)
    losses: list[float] = []
    step = 0
    while step < total:
        order = rng.permutation(len(items))
        for start in range(0, len(order), settings.batch_size):
            if step >= total:
                break
            chunk = [items[int(i)] for i in order[start:start + settings.batch_size]]
            if align:
                model.eval()
                batch = _make_batch(model, chunk, None)
                batch.durations = align_batch(model, batch)
            else:
                batch = _make_batch(model, chunk, durations)
            model.train()
            loss, _ = model.losses(batch, gen)
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), settings.grad_clip)
            opt.set_lr(lr_at(schedule, min(step / per_epoch, settings.epochs)))
            opt.step()
            losses.append(float(loss.detach()))
            step += 1
    model.eval()
    return losses


@torch.no_grad()
def extract_durations(model: TTSModel, items: list[TTSItem], batch_size: int = 8) -> dict[str, np.ndarray]:
    """Final alignment of every item under a trained flow."""
    model.eval()
    out = {}
    for start in range(0, len(items), batch_size):
        chunk = items[start:start + batch_size]
        for it, d in zip(chunk, align_batch(model, _make_batch(model, chunk, None))):
            out[it.utt_id] = d
    return out
