"""Pronunciation lexicon with end-of-word phoneme variants, and the ASR
output vocabulary built from it."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

EOW = "#"
BLANK = "<b>"


class LexiconError(ValueError):
    pass


def normalize_text(text: str) -> list[str]:
    """Lower-case, strip punctuation, split on whitespace."""
    return re.sub(r"[^a-z0-9' ]+", " ", text.lower()).split()


@dataclass
class Lexicon:
    """word -> pronunciations; each pronunciation is a tuple of base phonemes.

    The end-of-word marker is added when pronunciations are turned into
    recognizer labels, so entries here stay free of it.
    """

    entries: dict[str, list[tuple[str, ...]]] = field(default_factory=dict)

    def add(self, word: str, phonemes) -> None:
        phonemes = tuple(p.rstrip(EOW) for p in phonemes)
        if not phonemes or any(not p for p in phonemes):
            raise LexiconError(f"empty pronunciation for {word!r}")
        prons = self.entries.setdefault(word, [])
        if phonemes not in prons:
            prons.append(phonemes)

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def words(self) -> list[str]:
        return sorted(self.entries)

    def phonemes(self) -> list[str]:
        return sorted({p for prons in self.entries.values() for pron in prons for p in pron})

    def pronounce(self, word: str, g2p=None) -> tuple[str, ...]:
        """First pronunciation of ``word``; falls back to ``g2p(word)`` if given."""
        if word in self.entries:
            return self.entries[word][0]
        if g2p is None:
            raise LexiconError(f"word not in lexicon and no g2p fallback: {word!r}")
        return tuple(g2p(word))

    def uncovered(self, words) -> list[str]:
        return sorted({w for w in words if w not in self.entries})

    @classmethod
    def load(cls, path) -> "Lexicon":
        lex = cls()
        for n, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                word, pron = line.split("\t")
            except ValueError:
                raise LexiconError(f"{path}:{n}: expected WORD<TAB>PHONEMES") from None
            phones = pron.split()
            if not phones or not phones[-1].endswith(EOW):
                raise LexiconError(f"{path}:{n}: last phoneme must carry the {EOW!r} marker")
            lex.add(word, phones)
        return lex

    def save(self, path) -> None:
        lines = []
        for word in self.words():
            for pron in self.entries[word]:
                lines.append(f"{word}\t{' '.join(mark_word_end(pron))}")
        Path(path).write_text("\n".join(lines) + "\n")


def mark_word_end(pron) -> list[str]:
    pron = list(pron)
    return pron[:-1] + [pron[-1] + EOW]


def words_to_symbols(words, lexicon: Lexicon, g2p=None) -> list[str]:
    """Word sequence -> recognizer symbols with the end-of-word variant on each word's last phoneme."""
    out = []
    for w in words:
        out.extend(mark_word_end(lexicon.pronounce(w, g2p)))
    return out


def words_to_phonemes(words, lexicon: Lexicon, g2p=None) -> list[str]:
    """Word sequence -> plain phoneme sequence (TTS input)."""
    out = []
    for w in words:
        out.extend(lexicon.pronounce(w, g2p))
    return out


@dataclass(frozen=True)
class AsrVocab:
    """Blank at id 0, then every phoneme followed by its end-of-word variant."""

    phonemes: tuple[str, ...]

    @property
    def symbols(self) -> list[str]:
        out = [BLANK]
        for p in self.phonemes:
            out += [p, p + EOW]
        return out

    @property
    def blank(self) -> int:
        return 0

    def __len__(self) -> int:
        return 1 + 2 * len(self.phonemes)

    def encode(self, symbols) -> list[int]:
        table = {s: i for i, s in enumerate(self.symbols)}
        try:
            return [table[s] for s in symbols]
        except KeyError as exc:
            raise LexiconError(f"symbol {exc.args[0]!r} not in the recognizer vocabulary") from None

    def decode(self, ids) -> list[str]:
        syms = self.symbols
        return [syms[i] for i in ids]

    def is_word_end(self, label: int) -> bool:
        return label > 0 and label % 2 == 0


# Letter-to-phoneme table for the spelling fallback. Keys are letters; values
# are phoneme names that must exist in the recognizer inventory.
LETTER_PHONEMES = {
    "a": "a", "b": "b", "c": "k", "d": "d", "e": "e", "f": "f", "g": "g", "h": "h", "i": "i",
    "j": "j", "k": "k", "l": "l", "m": "m", "n": "n", "o": "o", "p": "p", "q": "k", "r": "r",
    "s": "s", "t": "t", "u": "u", "v": "v", "w": "w", "x": "k", "y": "i", "z": "s",
}


def spelling_g2p(table: dict[str, str] | None = None):
    """Letter-by-letter fallback: unknown letters are skipped; an empty result is an error."""
    table = LETTER_PHONEMES if table is None else table

    def g2p(word: str) -> list[str]:
        out = [table[ch] for ch in word.lower() if ch in table]
        if not out:
            raise LexiconError(f"spelling fallback produced no phonemes for {word!r}")
        return out

    return g2p
