"""Corpus manifests and the held-out split."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Utterance:
    utt_id: str
    speaker: str
    text: str
    audio_path: str = ""

    @property
    def words(self) -> list[str]:
        return self.text.split()


@dataclass
class CorpusManifest:
    utterances: list[Utterance]
    speakers: list[str] = field(default_factory=list)
    root: Path = Path(".")

    def __post_init__(self):
        ids = [u.utt_id for u in self.utterances]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestError(f"duplicate utterance ids: {', '.join(dup)}")
        if not self.speakers:
            self.speakers = sorted({u.speaker for u in self.utterances})
        unknown = sorted({u.speaker for u in self.utterances} - set(self.speakers))
        if unknown:
            raise ManifestError(f"speakers missing from the speaker table: {', '.join(unknown)}")

    def __len__(self) -> int:
        return len(self.utterances)

    def speaker_index(self, speaker: str) -> int:
        return self.speakers.index(speaker)

    def audio(self, utt: Utterance) -> Path:
        p = Path(utt.audio_path)
        return p if p.is_absolute() else self.root / p

    def subset(self, utterances) -> "CorpusManifest":
        return replace(self, utterances=list(utterances))

    def by_id(self) -> dict[str, Utterance]:
        return {u.utt_id: u for u in self.utterances}

    def save(self, path) -> None:
        Path(path).write_text("".join(
            f"{u.utt_id}\t{u.speaker}\t{u.audio_path}\t{u.text}\n" for u in self.utterances))


def load_speakers(path) -> list[str]:
    rows = [line.split("\t") for line in Path(path).read_text().splitlines() if line.strip()]
    return [name for _, name in sorted((int(i), name) for i, name in rows)]


def load_manifest(path, speakers: list[str] | None = None) -> CorpusManifest:
    """Read ``utt_id<TAB>speaker<TAB>audio_path<TAB>text`` lines; audio paths are relative to the file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    utts = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ManifestError(f"{path}:{n}: expected 4 tab-separated fields, got {len(parts)}")
        utt_id, speaker, audio, text = parts
        utts.append(Utterance(utt_id, speaker, text, audio))
    return CorpusManifest(utts, list(speakers or []), path.parent)


@dataclass
class CvSplit:
    train: CorpusManifest
    cv: CorpusManifest


def cv_split(manifest: CorpusManifest, k: int, seed: int) -> CvSplit:
    """Hold out ``k`` utterances per speaker, chosen by a seeded shuffle of each speaker's list."""
    if k < 0:
        raise ValueError("k must be >= 0")
    rng = np.random.default_rng(seed)
    held = set()
    for spk in sorted({u.speaker for u in manifest.utterances}):
        ids = [u.utt_id for u in manifest.utterances if u.speaker == spk]
        if len(ids) <= k:
            raise ManifestError(f"speaker {spk!r} has {len(ids)} utterance(s); need more than {k}")
        held.update(ids[int(i)] for i in rng.permutation(len(ids))[:k])
    return CvSplit(manifest.subset(u for u in manifest.utterances if u.utt_id not in held),
                   manifest.subset(u for u in manifest.utterances if u.utt_id in held))
