"""CTC loss by log-domain forward-backward, and greedy decoding."""

from __future__ import annotations

import numpy as np
import torch

NEG_INF = -np.inf


class CTCError(ValueError):
    pass


def min_frames(labels) -> int:
    """Shortest input that can carry ``labels``: one frame per label plus a
    blank between every pair of equal neighbours."""
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _extend(labels, blank):
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    return ext


def _shift(a, k):
    """Shift right by ``k`` (left if negative), filling with -inf."""
    out = np.full_like(a, NEG_INF)
    if k > 0:
        out[k:] = a[:-k]
    else:
        out[:k] = a[-k:]
    return out


def _lse(*arrays):
    out = arrays[0]
    for a in arrays[1:]:
        out = np.logaddexp(out, a)
    return out


def ctc_forward_backward(log_probs: np.ndarray, labels, blank: int = 0):
    """Returns ``(nll, grad)`` with ``grad = d nll / d log_probs`` for one utterance.

    ``log_probs`` is (T, V); rows need not be normalised.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    labels = np.asarray(list(labels), dtype=np.int64)
    n_frames, vocab = lp.shape
    if np.any(labels == blank):
        raise CTCError("labels must not contain the blank symbol")
    if labels.size and (labels.min() < 0 or labels.max() >= vocab):
        raise CTCError("label id outside the output vocabulary")
    need = min_frames(labels)
    if n_frames < need:
        raise CTCError(f"{len(labels)} labels need at least {need} frames, got {n_frames}")
    ext = _extend(labels, blank)
    s_len = len(ext)
    emit = lp[:, ext]  # (T, S)
    # skip transition s-2 -> s allowed for non-blank s whose label differs from s-2
    skip = np.zeros(s_len, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    alpha = np.full((n_frames, s_len), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if s_len > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, n_frames):
        prev = alpha[t - 1]
        shift2 = np.where(skip, _shift(prev, 2), NEG_INF)
        shift1 = _shift(prev, 1)
        alpha[t] = _lse(prev, shift1, shift2) + emit[t]

    finals = [alpha[-1, -1]] + ([alpha[-1, -2]] if s_len > 1 else [])
    log_p = float(_lse(*[np.asarray(f) for f in finals]))
    if not np.isfinite(log_p):
        raise CTCError("labels are unreachable under the given log-probabilities")

    # beta excludes the emission at its own frame
    beta = np.full((n_frames, s_len), NEG_INF)
    beta[-1, -1] = 0.0
    if s_len > 1:
        beta[-1, -2] = 0.0
    for t in range(n_frames - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        shift1 = _shift(nxt, -1)
        shift2 = _shift(np.where(skip, nxt, NEG_INF), -2)
        beta[t] = _lse(nxt, shift1, shift2)

    occupancy = np.exp(alpha + beta - log_p)  # (T, S)
    grad = np.zeros_like(lp)
    for s in range(s_len):
        grad[:, ext[s]] -= occupancy[:, s]
    return -log_p, grad


class _CTCFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, log_probs, input_lengths, labels, blank):
        lp = log_probs.detach().cpu().numpy()
        losses = np.zeros(lp.shape[0])
        grads = np.zeros_like(lp, dtype=np.float64)
        for b in range(lp.shape[0]):
            t = int(input_lengths[b])
            losses[b], grads[b, :t] = ctc_forward_backward(lp[b, :t], labels[b], blank)
        ctx.save_for_backward(torch.from_numpy(grads).to(log_probs.dtype))
        return torch.from_numpy(losses).to(log_probs.dtype)

    @staticmethod
    def backward(ctx, grad_out):
        (grads,) = ctx.saved_tensors
        return grads * grad_out[:, None, None], None, None, None


def ctc_loss(log_probs: torch.Tensor, labels, input_lengths=None, blank: int = 0) -> torch.Tensor:
    """Per-utterance negative log-likelihood.

    ``log_probs`` is (T, V) for a single utterance (``labels`` a sequence of
    ids; a scalar is returned) or (B, T, V) with ``labels`` a list of
    sequences (a (B,) tensor is returned).
    """
    single = log_probs.dim() == 2
    if single:
        log_probs, labels = log_probs[None], [labels]
    if input_lengths is None:
        input_lengths = [log_probs.shape[1]] * log_probs.shape[0]
    input_lengths = [int(x) for x in input_lengths]
    out = _CTCFunction.apply(log_probs, input_lengths, [list(map(int, l)) for l in labels], blank)
    return out[0] if single else out


def greedy_decode(log_probs, blank: int = 0) -> list[int]:
    """Per-frame argmax, collapse repeats, drop blanks."""
    best = np.asarray(torch.as_tensor(log_probs).argmax(-1))
    out, prev = [], None
    for k in best.tolist():
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out
