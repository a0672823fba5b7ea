"""Word error rate and bootstrap confidence intervals."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class EditCounts:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    def __add__(self, other: "EditCounts") -> "EditCounts":
        return EditCounts(self.substitutions + other.substitutions,
                          self.insertions + other.insertions, self.deletions + other.deletions)


def align_words(ref, hyp) -> EditCounts:
    """Minimum edit distance with its breakdown.

    Among minimum-cost paths the backtrace prefers match/substitution, then
    deletion, then insertion.
    """
    ref, hyp = list(ref), list(hyp)
    m, n = len(ref), len(hyp)
    cost = np.zeros((m + 1, n + 1), dtype=np.int64)
    cost[:, 0] = np.arange(m + 1)
    cost[0, :] = np.arange(n + 1)
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            cost[i, j] = min(cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]),
                             cost[i - 1, j] + 1, cost[i, j - 1] + 1)
    i, j, sub, ins, dele = m, n, 0, 0, 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i, j] == cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            sub += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            dele += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditCounts(int(sub), ins, dele)


@dataclass
class WerResult:
    rate: float
    counts: EditCounts
    ref_words: int
    missing: list[str] = field(default_factory=list)
    per_utterance: dict[str, EditCounts] = field(default_factory=dict)


def wer(hypotheses: dict[str, list[str]], references: dict[str, list[str]]) -> WerResult:
    """Corpus WER: summed edit distance over summed reference length.

    References without a hypothesis count as fully deleted and are listed
    in ``missing``.
    """
    total_ref = sum(len(r) for r in references.values())
    if total_ref == 0:
        raise ValueError("references contain no words")
    counts, per, missing = EditCounts(), {}, []
    for utt_id in sorted(references):
        ref = list(references[utt_id])
        if utt_id not in hypotheses:
            missing.append(utt_id)
            c = EditCounts(deletions=len(ref))
        else:
            c = align_words(ref, hypotheses[utt_id])
        per[utt_id] = c
        counts = counts + c
    return WerResult(counts.errors / total_ref, counts, total_ref, missing, per)


def bootstrap_ci(scores, level: float = 0.95, resamples: int = 1000, seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval of the mean.

    Scores are sorted first and resampling indices refer to sorted
    positions, so the interval does not depend on the input order.
    """
    x = np.sort(np.asarray(scores, dtype=np.float64))
    if x.size == 0:
        raise ValueError("bootstrap of an empty score list")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if resamples < 1:
        raise ValueError("resamples must be >= 1")
    rng = np.random.default_rng(seed)
    means = np.empty(resamples)
    for r in range(resamples):
        means[r] = x[rng.integers(0, x.size, x.size)].mean()
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    mean = x.mean()
    # keep lo <= mean <= hi exact for degenerate inputs
    return float(min(lo, mean)), float(max(hi, mean))
