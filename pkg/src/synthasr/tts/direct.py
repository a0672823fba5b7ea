"""Direct-prediction decoders trained with L1 on the target spectrogram."""

from __future__ import annotations

import math

import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from synthasr.nn.layers import Postnet, TransformerStack, ZoneoutLSTMCell, sinusoidal_positions


def masked_l1(pred, target, mask):
    m = mask[..., None].to(pred.dtype)
    return ((pred - target).abs() * m).sum() / (m.sum() * pred.shape[-1])


def _with_speaker(h_t, spk):
    return torch.cat([h_t, spk[:, None, :].expand(-1, h_t.shape[1], -1)], dim=-1)


class TransformerDecoder(nn.Module):
    def __init__(self, in_dim: int, spk_dim: int, n_mels: int, layers: int = 6, heads: int = 2,
                 filter_dim: int = 1024, ff_kernel: int = 3, dropout: float = 0.1):
        super().__init__()
        self.inp = nn.Linear(in_dim + spk_dim, in_dim)
        self.stack = TransformerStack(layers, in_dim, heads, filter_dim, ff_kernel, dropout)
        self.out = nn.Linear(in_dim, n_mels)

    def forward(self, h_t, mask, spk):
        x = self.inp(_with_speaker(h_t, spk))
        x = x + sinusoidal_positions(x.shape[1], x.shape[2], x.dtype)[None]
        return self.out(self.stack(x, mask)) * mask[..., None].to(x.dtype)

    def loss(self, h_t, mask, spk, target):
        l1 = masked_l1(self(h_t, mask, spk), target, mask)
        return l1, {"l1": float(l1.detach())}

    def generate(self, h_t, mask, spk, sampling=None, generator=None):
        return self(h_t, mask, spk)


class NarLstmDecoder(nn.Module):
    """Bidirectional LSTM stack plus convolutional post-net."""

    def __init__(self, in_dim: int, spk_dim: int, n_mels: int, lstm_dim: int = 512,
                 lstm_layers: int = 2, dropout: float = 0.1, postnet: dict | None = None):
        super().__init__()
        self.lstm = nn.LSTM(in_dim + spk_dim, lstm_dim, num_layers=lstm_layers, batch_first=True,
                            bidirectional=True, dropout=dropout if lstm_layers > 1 else 0.0)
        self.dropout = nn.Dropout(dropout)
        self.out = nn.Linear(2 * lstm_dim, n_mels)
        self.postnet = Postnet(n_mels, **(postnet or {}))

    def forward(self, h_t, mask, spk):
        lengths = mask.sum(1).cpu()
        packed = pack_padded_sequence(_with_speaker(h_t, spk), lengths, batch_first=True,
                                      enforce_sorted=False)
        out, _ = self.lstm(packed)
        out, _ = pad_packed_sequence(out, batch_first=True, total_length=h_t.shape[1])
        pre = self.out(self.dropout(out)) * mask[..., None].to(out.dtype)
        return pre, self.postnet(pre, mask)

    def loss(self, h_t, mask, spk, target):
        pre, post = self(h_t, mask, spk)
        l_pre, l_post = masked_l1(pre, target, mask), masked_l1(post, target, mask)
        return l_pre + l_post, {"l1_decoder": float(l_pre.detach()), "l1_postnet": float(l_post.detach())}

    def generate(self, h_t, mask, spk, sampling=None, generator=None):
        return self(h_t, mask, spk)[1]


class ArLstmDecoder(nn.Module):
    """Auto-regressive zoneout-LSTM decoder emitting ``reduction`` frames per step.

    The step input is the mean of the up-sampled states covered by the step,
    the speaker embedding and a pre-net view of the last frame emitted by the
    previous step (ground truth under teacher forcing).
    """

    def __init__(self, in_dim: int, spk_dim: int, n_mels: int, lstm_dim: int = 1024,
                 lstm_layers: int = 2, prenet_dim: int = 256, zoneout: float = 0.1,
                 reduction: int = 2, prenet_dropout: float = 0.5, postnet: dict | None = None,
                 dropout: float = 0.1):
        super().__init__()
        self.n_mels, self.reduction = n_mels, reduction
        self.prenet = nn.Sequential(
            nn.Linear(n_mels, prenet_dim), nn.ReLU(), nn.Dropout(prenet_dropout),
            nn.Linear(prenet_dim, prenet_dim), nn.ReLU(), nn.Dropout(prenet_dropout),
        )
        cond_dim = in_dim + spk_dim
        dims = [cond_dim + prenet_dim] + [lstm_dim] * lstm_layers
        self.cells = nn.ModuleList(
            ZoneoutLSTMCell(dims[i], lstm_dim, zoneout) for i in range(lstm_layers)
        )
        self.out = nn.Linear(lstm_dim + cond_dim, n_mels * reduction)
        self.postnet = Postnet(n_mels, **(postnet or {}))

    def num_steps(self, n_frames: int) -> int:
        return math.ceil(n_frames / self.reduction)

    def _step_conditions(self, h_t, mask, spk):
        b, t, d = h_t.shape
        steps = self.num_steps(t)
        pad = steps * self.reduction - t
        m = mask.to(h_t.dtype)[..., None]
        h = torch.nn.functional.pad(h_t * m, (0, 0, 0, pad)).view(b, steps, self.reduction, d)
        cnt = torch.nn.functional.pad(m, (0, 0, 0, pad)).view(b, steps, self.reduction, 1).sum(2)
        h = h.sum(2) / cnt.clamp(min=1.0)
        return torch.cat([h, spk[:, None, :].expand(-1, steps, -1)], dim=-1)

    def _run(self, cond, feedback_fn, generator=None):
        b, steps, _ = cond.shape
        states = [cell.initial_state(b, cond.dtype) for cell in self.cells]
        prev = cond.new_zeros(b, self.n_mels)
        frames = []
        for k in range(steps):
            x = torch.cat([cond[:, k], self.prenet(prev)], dim=-1)
            for i, cell in enumerate(self.cells):
                states[i] = cell(x, states[i], generator)
                x = states[i][0]
            out = self.out(torch.cat([x, cond[:, k]], dim=-1)).view(b, self.reduction, self.n_mels)
            frames.append(out)
            prev = feedback_fn(k, out)
        return torch.cat(frames, dim=1)

    def forward(self, h_t, mask, spk, target=None, generator=None):
        t = h_t.shape[1]
        cond = self._step_conditions(h_t, mask, spk)
        if target is not None:
            padded = _pad_with_last(target, mask, self.num_steps(t) * self.reduction)

            def teacher(k, out):
                return padded[:, (k + 1) * self.reduction - 1]
        else:
            def teacher(k, out):
                return out[:, -1]
        pre = self._run(cond, teacher, generator)[:, :t] * mask[..., None].to(h_t.dtype)
        return pre, self.postnet(pre, mask)

    def loss(self, h_t, mask, spk, target):
        pre, post = self(h_t, mask, spk, target=target)
        l_pre, l_post = masked_l1(pre, target, mask), masked_l1(post, target, mask)
        return l_pre + l_post, {"l1_decoder": float(l_pre.detach()), "l1_postnet": float(l_post.detach())}

    def generate(self, h_t, mask, spk, sampling=None, generator=None):
        return self(h_t, mask, spk)[1]


def _pad_with_last(x, mask, length):
    """Pad (B, T, C) to ``length`` frames by repeating each item's last valid frame."""
    b, t, c = x.shape
    lengths = mask.sum(1)
    idx = torch.arange(length)[None, :].expand(b, -1)
    idx = torch.minimum(idx, (lengths - 1)[:, None])
    return torch.gather(x, 1, idx[..., None].expand(-1, -1, c))
