"""The three synthesis conditions: training text and speakers (a), training
text with shuffled speakers (b), new text (c)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from synthasr.eval.corpus import CorpusManifest

KINDS = {"a": "a_same_text_same_speaker", "b": "b_same_text_shuffled_speaker", "c": "c_new_text"}


class ConditionError(ValueError):
    pass


@dataclass(frozen=True)
class SynthesisCondition:
    kind: str
    seed: int = 0
    new_texts: tuple = ()

    def __post_init__(self):
        kind = {v: k for k, v in KINDS.items()}.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ConditionError(f"unknown condition {self.kind!r}; use a, b or c")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "new_texts", tuple(self.new_texts))


@dataclass(frozen=True)
class SynthesisJob:
    utt_id: str
    text: str
    speaker: str


def speaker_permutation(speakers, seed: int) -> np.ndarray:
    """Seeded permutation of the assignment list.

    Draws that leave every assignment unchanged (the identity, or swaps
    within one speaker) are rejected and re-drawn, unless only one distinct
    speaker exists.
    """
    speakers = list(speakers)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(speakers))
    if len(set(speakers)) > 1:
        while all(speakers[int(p)] == s for p, s in zip(perm, speakers)):
            perm = rng.permutation(len(speakers))
    return perm


def build_condition(train: CorpusManifest, condition: SynthesisCondition) -> list[SynthesisJob]:
    utts = train.utterances
    if condition.kind == "a":
        return [SynthesisJob(u.utt_id, u.text, u.speaker) for u in utts]
    if condition.kind == "b":
        perm = speaker_permutation([u.speaker for u in utts], condition.seed)
        return [SynthesisJob(u.utt_id, u.text, utts[int(p)].speaker) for u, p in zip(utts, perm)]
    if len(condition.new_texts) != len(utts):
        raise ConditionError(
            f"condition c needs {len(utts)} new texts, got {len(condition.new_texts)}")
    return [SynthesisJob(f"new-{i:06d}", text, utts[i % len(utts)].speaker)
            for i, text in enumerate(condition.new_texts)]
