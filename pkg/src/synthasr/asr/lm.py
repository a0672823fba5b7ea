"""Word n-gram language model with add-k smoothing."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

BOS, EOS = "<s>", "</s>"


class LMError(ValueError):
    pass


@dataclass
class NGramLM:
    """Add-k smoothed n-gram model over a closed vocabulary plus ``</s>``.

    Each conditional distribution sums to one over ``vocab + [</s>]``, so
    every log-probability is finite and ``<= 0``.
    """

    order: int = 2
    k: float = 0.1
    vocab: list[str] = field(default_factory=list)
    counts: dict[tuple, Counter] = field(default_factory=dict)

    def __post_init__(self):
        if self.order < 1:
            raise LMError("order must be >= 1")
        if self.k <= 0:
            raise LMError("add-k constant must be positive")

    @classmethod
    def train(cls, sentences, order: int = 2, k: float = 0.1, vocab=None) -> "NGramLM":
        sentences = [list(s) for s in sentences]
        words = sorted(set(vocab or []) | {w for s in sentences for w in s})
        lm = cls(order=order, k=k, vocab=words)
        for s in sentences:
            padded = [BOS] * (order - 1) + s + [EOS]
            for i in range(order - 1, len(padded)):
                hist = tuple(padded[i - order + 1:i])
                lm.counts.setdefault(hist, Counter())[padded[i]] += 1
        return lm

    def _history(self, history) -> tuple:
        if self.order == 1:
            return ()
        padded = [BOS] * (self.order - 1) + list(history)
        return tuple(padded[-(self.order - 1):])

    def logprob(self, word: str, history=()) -> float:
        """Natural-log probability of ``word`` (or ``</s>``) after ``history``."""
        if word != EOS and word not in self.vocab:
            raise LMError(f"word {word!r} outside the LM vocabulary")
        c = self.counts.get(self._history(history), Counter())
        size = len(self.vocab) + 1
        return math.log((c[word] + self.k) / (sum(c.values()) + self.k * size))

    def sentence_logprob(self, words) -> float:
        words = list(words)
        total = sum(self.logprob(w, words[:i]) for i, w in enumerate(words))
        return total + self.logprob(EOS, words)

    def save(self, path) -> None:
        data = {"order": self.order, "k": self.k, "vocab": self.vocab,
                "counts": [[list(h), dict(c)] for h, c in sorted(self.counts.items())]}
        Path(path).write_text(json.dumps(data, sort_keys=True))

    @classmethod
    def load(cls, path) -> "NGramLM":
        data = json.loads(Path(path).read_text())
        lm = cls(order=data["order"], k=data["k"], vocab=data["vocab"])
        lm.counts = {tuple(h): Counter(c) for h, c in data["counts"]}
        return lm
