"""Monotonic alignment search.

Given a token-by-frame log-likelihood matrix, find the monotonic, complete
assignment of frames to tokens (every token gets >= 1 frame, tokens in
order) with maximal total log-likelihood.

Tie rule: when two predecessors score equally the backtrace moves to the
earlier token, so among equally good alignments the one giving the *last*
tokens the fewest frames wins (lexicographically smallest reversed duration
vector).
"""

from __future__ import annotations

import numpy as np


class AlignmentError(ValueError):
    pass


def monotonic_alignment(loglik: np.ndarray) -> np.ndarray:
    """Durations (length N, each >= 1, summing to T) from an (N, T) matrix."""
    loglik = np.asarray(loglik, dtype=np.float64)
    if loglik.ndim != 2:
        raise AlignmentError("log-likelihood matrix must be 2-D")
    n_tok, n_frames = loglik.shape
    if n_tok < 1:
        raise AlignmentError("need at least one token")
    if n_tok > n_frames:
        raise AlignmentError(f"{n_tok} tokens cannot be aligned to {n_frames} frames")
    q = np.full((n_tok, n_frames), -np.inf)
    q[0] = np.cumsum(loglik[0])
    for j in range(1, n_frames):
        stay = q[1:, j - 1]
        advance = q[:-1, j - 1]
        q[1:, j] = np.maximum(stay, advance) + loglik[1:, j]
        # token i cannot be active before frame i
        q[np.arange(n_tok) > j, j] = -np.inf
    durations = np.zeros(n_tok, dtype=np.int64)
    i = n_tok - 1
    for j in range(n_frames - 1, -1, -1):
        durations[i] += 1
        if j == 0:
            break
        if i > 0 and (i == j or q[i - 1, j - 1] >= q[i, j - 1]):
            i -= 1
    return durations


def gaussian_log_likelihood(means: np.ndarray, frames: np.ndarray) -> np.ndarray:
    """(N, T) unit-variance Gaussian log-likelihoods of every frame under every mean."""
    means = np.asarray(means, dtype=np.float64)
    frames = np.asarray(frames, dtype=np.float64)
    d = means.shape[1]
    sq = (means ** 2).sum(1)[:, None] - 2 * means @ frames.T + (frames ** 2).sum(1)[None, :]
    return -0.5 * sq - 0.5 * d * np.log(2 * np.pi)


def mas_align(means: np.ndarray, frames: np.ndarray) -> np.ndarray:
    """Durations aligning per-token Gaussian ``means`` (N, D) to ``frames`` (T, D)."""
    if len(means) > len(frames):
        raise AlignmentError(f"{len(means)} tokens cannot be aligned to {len(frames)} frames")
    return monotonic_alignment(gaussian_log_likelihood(means, frames))
