"""CTC prefix beam search, optionally constrained to lexicon pronunciations.

A hypothesis is keyed by its emitted label sequence and the words it has
closed so far.  It carries two log-scores: paths ending in blank and paths
ending in its last label.  With ``scoring="sum"`` those are CTC prefix
probabilities; with ``scoring="max"`` they are best single-path scores.

Ranking key: ``ctc + lm_weight * lm``; ties go to the lexicographically
smaller word sequence, then the smaller label sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from synthasr.asr.lexicon import AsrVocab, Lexicon, mark_word_end

NEG_INF = -np.inf


class DecodeError(ValueError):
    pass


class LexiconTrie:
    """Prefix tree over recognizer labels of every pronunciation.

    Reaching a node through an end-of-word label closes the words listed at
    that node; the search then continues from the root.
    """

    def __init__(self, lexicon: Lexicon, vocab: AsrVocab):
        if len(lexicon) == 0:
            raise DecodeError("lexicon is empty")
        self.children: list[dict[int, int]] = [{}]
        self.words_at: list[list[str]] = [[]]
        for word in lexicon.words():
            for pron in lexicon.entries[word]:
                node = 0
                for label in vocab.encode(mark_word_end(pron)):
                    nxt = self.children[node].get(label)
                    if nxt is None:
                        nxt = len(self.children)
                        self.children[node][label] = nxt
                        self.children.append({})
                        self.words_at.append([])
                    node = nxt
                self.words_at[node].append(word)

    @property
    def root(self) -> int:
        return 0


@dataclass
class Hypothesis:
    labels: tuple
    words: tuple
    ctc: float
    lm: float
    score: float


@dataclass
class _State:
    node: int
    lm: float
    pb: float = NEG_INF
    pnb: float = NEG_INF


def _check_beam(beam):
    if beam is not None and beam < 1:
        raise DecodeError(f"beam must be >= 1 or None (exhaustive), got {beam}")


def prefix_search(log_probs, blank: int = 0, beam: int | None = 8, scoring: str = "sum",
                  trie: LexiconTrie | None = None, lm=None, lm_weight: float = 0.0) -> list[Hypothesis]:
    """All surviving hypotheses, best first.

    Without a ``trie`` any label sequence is allowed and no words are formed.
    With one, only label sequences that spell lexicon pronunciations survive
    and the returned hypotheses end on a word boundary.
    """
    _check_beam(beam)
    if scoring not in ("sum", "max"):
        raise DecodeError(f"unknown scoring {scoring!r}")
    merge = np.logaddexp if scoring == "sum" else np.maximum
    lp = np.asarray(log_probs, dtype=np.float64)
    n_frames, vocab_size = lp.shape
    use_lm = lm is not None and lm_weight != 0.0
    root = trie.root if trie is not None else 0

    def total(st: _State) -> float:
        return float(merge(st.pb, st.pnb))

    def rank(item):
        (labels, words), st = item
        return (-(total(st) + lm_weight * st.lm), words, labels)

    beams = {((), ()): _State(root, 0.0, 0.0, NEG_INF)}
    for t in range(n_frames):
        row = lp[t]
        new: dict[tuple, _State] = {}

        def slot(key, node, lm_score):
            st = new.get(key)
            if st is None:
                st = new[key] = _State(node, lm_score)
            return st

        for (labels, words), st in beams.items():
            here = total(st)
            last = labels[-1] if labels else None
            same = slot((labels, words), st.node, st.lm)
            same.pb = merge(same.pb, here + row[blank])
            if last is not None:
                same.pnb = merge(same.pnb, st.pnb + row[last])
            if trie is None:
                options = [(c, 0) for c in range(vocab_size) if c != blank]
            else:
                options = sorted(trie.children[st.node].items())
            for c, child in options:
                p = (st.pb if c == last else here) + row[c]
                ext = labels + (c,)
                closed = trie.words_at[child] if trie is not None else []
                if closed:
                    for w in closed:
                        lm_score = st.lm + (lm.logprob(w, words) if use_lm else 0.0)
                        nxt = slot((ext, words + (w,)), root, lm_score)
                        nxt.pnb = merge(nxt.pnb, p)
                else:
                    nxt = slot((ext, words), child, st.lm)
                    nxt.pnb = merge(nxt.pnb, p)
        ranked = sorted(new.items(), key=rank)
        beams = dict(ranked if beam is None else ranked[:beam])

    hyps = []
    for (labels, words), st in beams.items():
        if trie is not None and st.node != root:
            continue
        lm_score = st.lm + (lm.logprob("</s>", words) if use_lm else 0.0)
        ctc = total(st)
        hyps.append(Hypothesis(labels, words, ctc, lm_score, ctc + lm_weight * lm_score))
    hyps.sort(key=lambda h: (-h.score, h.words, h.labels))
    return hyps


def beam_decode(log_probs, lexicon: Lexicon, lm=None, beam: int | None = 8,
                lm_weight: float = 0.0, vocab: AsrVocab | None = None,
                trie: LexiconTrie | None = None) -> list[str]:
    """Best lexicon-constrained word sequence for one utterance.

    ``beam=None`` disables pruning (exhaustive search).  ``lm`` is any object
    with ``logprob(word, history)``, e.g. :class:`synthasr.asr.lm.NGramLM`.
    """
    _check_beam(beam)
    if trie is None:
        trie = LexiconTrie(lexicon, vocab or AsrVocab(tuple(lexicon.phonemes())))
    blank = 0 if vocab is None else vocab.blank
    hyps = prefix_search(log_probs, blank, beam, "sum", trie, lm, lm_weight)
    return list(hyps[0].words) if hyps else []
