"""Brute-force reference implementations used only by the tests.

Each oracle enumerates the full search space directly, sharing no code with
the package implementation it checks.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def ctc_collapse(path, blank=0):
    out, prev = [], None
    for s in path:
        if s != prev and s != blank:
            out.append(s)
        prev = s
    return tuple(out)


def ctc_brute_nll(probs: np.ndarray, labels, blank=0) -> float:
    """-log sum over every length-T path that collapses to ``labels``."""
    t_len, v = probs.shape
    total = 0.0
    for path in itertools.product(range(v), repeat=t_len):
        if ctc_collapse(path, blank) == tuple(labels):
            total += math.prod(probs[t, s] for t, s in enumerate(path))
    return -math.log(total) if total > 0 else math.inf


def segmentations(n: int, t: int):
    """All duration vectors of n positive parts summing to t."""
    for cuts in itertools.combinations(range(1, t), n - 1):
        bounds = (0,) + cuts + (t,)
        yield tuple(b - a for a, b in zip(bounds[:-1], bounds[1:]))


def mas_brute(loglik: np.ndarray, tie_key=None):
    """Best segmentation; ties resolved by ``tie_key`` (smaller wins)."""
    n, t = loglik.shape
    best, best_score = None, -math.inf
    for d in segmentations(n, t):
        tok = np.repeat(np.arange(n), d)
        score = float(loglik[tok, np.arange(t)].sum())
        if score > best_score or (score == best_score and tie_key(d) < tie_key(best)):
            best, best_score = d, score
    return best, best_score


def edit_paths(ref, hyp):
    """Every edit script turning ``ref`` into ``hyp`` as (subs, ins, dels) tuples."""
    if not ref:
        return [(0, len(hyp), 0)]
    if not hyp:
        return [(0, 0, len(ref))]
    out = []
    cost = 0 if ref[0] == hyp[0] else 1
    for s, i, d in edit_paths(ref[1:], hyp[1:]):
        out.append((s + cost, i, d))
    for s, i, d in edit_paths(ref[1:], hyp):
        out.append((s, i, d + 1))
    for s, i, d in edit_paths(ref, hyp[1:]):
        out.append((s, i + 1, d))
    return out


def min_edits(ref, hyp) -> int:
    return min(s + i + d for s, i, d in edit_paths(ref, hyp))


def dense_jacobian(fn, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector function at ``x`` (flattened)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        cols.append((np.ravel(fn(x + e)) - np.ravel(fn(x - e))) / (2 * eps))
    return np.stack(cols, axis=1)


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Normalized cross-correlation of two equally shaped arrays (zero lag, mean-removed)."""
    a = np.ravel(a) - np.mean(a)
    b = np.ravel(b) - np.mean(b)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def gaussian_reverse_moments(data_mean, data_var, prior_mean, init_var, betas, times, beta_min, beta_max):
    """Exact mean and variance after the deterministic reverse recursion on a scalar Gaussian toy.

    The data are ``N(data_mean, data_var)``; the forward process drifts toward
    ``prior_mean`` with unit stationary variance, so at time ``t`` the marginal
    is ``N(m_t, v_t)`` with ``a = exp(-B(t)/2)``, ``m_t = a data_mean + (1-a) prior_mean``
    and ``v_t = a^2 data_var + 1 - a^2``.  With the exact score
    ``-(x - m_t) / v_t`` each step is affine in the state, so the moments are
    propagated exactly from the initial ``N(prior_mean, init_var)``.
    """
    n = len(betas)
    mean, var = float(prior_mean), float(init_var)
    for i in range(n, 0, -1):
        beta, t = float(betas[i - 1]), float(times[i - 1])
        big_b = beta_min * t + 0.5 * (beta_max - beta_min) * t * t
        a2 = math.exp(-big_b)
        m_t = math.sqrt(a2) * data_mean + (1 - math.sqrt(a2)) * prior_mean
        v_t = a2 * data_var + 1 - a2
        c = beta / (2 * n)
        gain = 1 + c - c / v_t
        mean = gain * mean + c * (m_t / v_t - prior_mean)
        var = gain * gain * var
    return mean, var
