"""CTC training of the recognizer."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from synthasr.asr.ctc import ctc_loss, min_frames
from synthasr.asr.lexicon import AsrVocab, Lexicon, LexiconError, words_to_symbols
from synthasr.asr.model import AsrConfig, AsrModel, subsampled_length
from synthasr.asr.specaug import specaugment
from synthasr.nn.optim import ASR_SCHEDULE, LrSchedule, Optimizer, OptimizerConfig, lr_at, scaled

log = logging.getLogger(__name__)


@dataclass
class AsrTrainSettings:
    epochs: float = 80
    batch_size: int = 8
    schedule: LrSchedule = field(default_factory=lambda: ASR_SCHEDULE)
    weight_decay: float = 1e-3
    specaugment: bool = True
    grad_clip: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.schedule, dict):
            self.schedule = LrSchedule(**self.schedule)
        if self.epochs <= 0 or self.batch_size < 1:
            raise ValueError("epochs must be positive and batch_size >= 1")


@dataclass
class AsrTrainResult:
    model: AsrModel
    losses: list[float]
    skipped: list[int]


def encode_targets(texts, lexicon: Lexicon, vocab: AsrVocab, g2p=None) -> list[list[int]]:
    """Word lists -> recognizer label ids; uncovered words fail together unless ``g2p`` is given."""
    if g2p is None:
        missing = lexicon.uncovered(w for words in texts for w in words)
        if missing:
            raise LexiconError(f"words not in lexicon and no g2p fallback: {', '.join(missing)}")
    return [vocab.encode(words_to_symbols(words, lexicon, g2p)) for words in texts]


def _item_seed(seed: int, epoch: int, index: int) -> int:
    return (seed * 1_000_003 + epoch * 10_007 + index) % (2 ** 32)


def train_asr(config: AsrConfig, corpus, lexicon: Lexicon, settings: AsrTrainSettings,
              g2p=None, max_steps: int | None = None) -> AsrTrainResult:
    """Train on ``corpus``: a sequence of ``(frames (T, n_mels), words)`` pairs.

    Utterances too short to carry their label sequence after sub-sampling are
    skipped and reported in the result.
    """
    torch.manual_seed(settings.seed)
    vocab = AsrVocab(config.phonemes)
    frames = [np.asarray(f, dtype=np.float64) for f, _ in corpus]
    targets = encode_targets([list(w) for _, w in corpus], lexicon, vocab, g2p)
    keep, skipped = [], []
    for i, (f, y) in enumerate(zip(frames, targets)):
        if subsampled_length(len(f), config.subsampling_factor) >= min_frames(y):
            keep.append(i)
        else:
            skipped.append(i)
    if skipped:
        log.warning("skipping %d utterance(s) too short for their transcripts", len(skipped))
    if not keep:
        raise ValueError("no utterance is long enough for its transcript")

    model = AsrModel(config)
    model.train()
    opt = Optimizer(model.named_parameters(),
                    OptimizerConfig("adamw", settings.schedule.lr_start, weight_decay=settings.weight_decay))
    schedule = scaled(settings.schedule, settings.epochs)
    rng = np.random.default_rng(settings.seed)
    per_epoch = int(np.ceil(len(keep) / settings.batch_size))
    total_steps = int(np.ceil(settings.epochs * per_epoch))
    if max_steps is not None:
        total_steps = min(total_steps, max_steps)
    normed = {i: AsrModel.normalise(frames[i]) for i in keep}
    losses: list[float] = []
    step, epoch = 0, 0
    while step < total_steps:
        order = rng.permutation(keep)
        for start in range(0, len(order), settings.batch_size):
            if step >= total_steps:
                break
            idx = order[start:start + settings.batch_size]
            feats = []
            for i in idx:
                x = normed[int(i)]
                if settings.specaugment:
                    x = specaugment(x, config.specaugment, _item_seed(settings.seed, epoch, int(i)))
                feats.append(x)
            lengths = torch.tensor([len(x) for x in feats])
            batch = torch.zeros(len(feats), int(lengths.max()), config.n_mels)
            for b, x in enumerate(feats):
                batch[b, : len(x)] = torch.as_tensor(x, dtype=torch.float32)
            lp, out_lengths = model(batch, lengths)
            labels = [targets[int(i)] for i in idx]
            per_utt = ctc_loss(lp, labels, out_lengths.tolist(), blank=vocab.blank)
            norm = torch.tensor([max(len(y), 1) for y in labels], dtype=per_utt.dtype)
            loss = (per_utt / norm).mean()
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), settings.grad_clip)
            opt.set_lr(lr_at(schedule, min(step / per_epoch, settings.epochs)))
            opt.step()
            losses.append(float(loss.detach()))
            step += 1
        epoch += 1
    model.eval()
    return AsrTrainResult(model, losses, skipped)
