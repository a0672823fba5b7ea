"""Deterministic toy speech corpus.

Each "phoneme" is a stationary sound: voiced ones are harmonic series of the
speaker's pitch shaped by two formant peaks, unvoiced ones are band-limited
noise, all over a faint white-noise floor.  Speakers differ in pitch,
formant scaling and loudness.  Words are short phoneme strings spelled with
their own phoneme names, so the lexicon maps each word to its letters.  Segment durations are drawn per phoneme and
written out, so alignments can be checked against the truth.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from synthasr.asr.lexicon import Lexicon
from synthasr.dsp import TTS_FEATURES, AudioSignal, write_wav

# name -> (kind, first peak Hz, second peak Hz)
PHONEME_SOUNDS = {
    "a": ("voiced", 800.0, 1300.0),
    "e": ("voiced", 500.0, 1900.0),
    "i": ("voiced", 300.0, 2400.0),
    "o": ("voiced", 500.0, 900.0),
    "u": ("voiced", 300.0, 650.0),
    "m": ("nasal", 250.0, 1100.0),
    "s": ("noise", 4200.0, 7000.0),
    "k": ("noise", 1600.0, 3000.0),
}

WORDS = ("sa", "mik", "ko", "sumo", "kea", "mas", "ikos", "uma", "eski", "moka")

# speaker -> (pitch Hz, formant scale, gain)
SPEAKERS = {
    "spk0": (110.0, 0.95, 0.30),
    "spk1": (150.0, 1.00, 0.25),
    "spk2": (200.0, 1.05, 0.28),
    "spk3": (245.0, 1.10, 0.22),
}


@dataclass(frozen=True)
class ToySpec:
    utts_per_speaker: int = 12
    test_per_speaker: int = 3
    min_words: int = 3
    max_words: int = 5
    min_frames: int = 5
    max_frames: int = 9
    floor_snr_db: float = 40.0
    other_snr_db: float = 10.0
    seed: int = 0


def toy_lexicon() -> Lexicon:
    lex = Lexicon()
    for w in WORDS:
        lex.add(w, list(w))
    return lex


def _seed(*parts) -> int:
    return int.from_bytes(hashlib.sha256(":".join(map(str, parts)).encode()).digest()[:8], "little")


def render(phonemes, durations, speaker: str, seed: int, hop: int = TTS_FEATURES.hop_length,
           sample_rate: int = TTS_FEATURES.sample_rate) -> np.ndarray:
    """Waveform of ``sum(durations) * hop - 1`` samples (so a centred STFT
    with this hop yields exactly ``sum(durations)`` frames)."""
    pitch, scale, gain = SPEAKERS[speaker]
    rng = np.random.default_rng(seed)
    n_total = int(np.sum(durations)) * hop
    out = np.zeros(n_total)
    t = np.arange(n_total) / sample_rate
    ramp = int(0.004 * sample_rate)
    harmonics = np.arange(1, int(7500 // pitch) + 1) * pitch
    phase = rng.uniform(0, 2 * np.pi, len(harmonics))
    # slow pitch wobble keeps harmonics from being perfectly stationary
    wobble = 1.0 + 0.01 * np.sin(2 * np.pi * 3.0 * t + rng.uniform(0, 2 * np.pi))
    inst_phase = 2 * np.pi * np.cumsum(wobble) / sample_rate
    pos = 0
    for ph, d in zip(phonemes, durations):
        n = int(d) * hop
        kind, f1, f2 = PHONEME_SOUNDS[ph]
        f1, f2 = f1 * scale, f2 * scale
        seg = slice(pos, pos + n)
        if kind == "noise":
            noise = rng.standard_normal(n + 2 * ramp)
            spec = np.fft.rfft(noise)
            freqs = np.fft.rfftfreq(len(noise), 1.0 / sample_rate)
            spec *= ((freqs >= f1) & (freqs <= f2)).astype(float)
            sig = np.fft.irfft(spec, len(noise))[ramp:ramp + n]
            sig *= 0.6 / max(np.std(sig), 1e-9)
        else:
            bw = 90.0 if kind == "nasal" else 130.0
            amps = (np.exp(-0.5 * ((harmonics - f1) / bw) ** 2)
                    + 0.7 * np.exp(-0.5 * ((harmonics - f2) / bw) ** 2) + 0.02)
            amps /= np.sqrt(np.sum(amps ** 2))
            sig = np.sin(np.outer(inst_phase[seg], harmonics / pitch) + phase) @ amps
            sig *= 0.4 if kind == "nasal" else 1.0
        env = np.ones(n)
        r = min(ramp, n // 2)
        env[:r] = np.linspace(0.2, 1.0, r)
        env[n - r:] = np.linspace(1.0, 0.2, r)
        out[seg] = sig * env
        pos += n
    out = gain * out / max(np.max(np.abs(out)), 1e-9) * 0.9
    return out[:-1]


def _sentences(rng, count, spec: ToySpec):
    out = []
    for _ in range(count):
        n = int(rng.integers(spec.min_words, spec.max_words + 1))
        out.append([WORDS[int(i)] for i in rng.integers(0, len(WORDS), n)])
    return out


def _durations(rng, phonemes, spec: ToySpec):
    return rng.integers(spec.min_frames, spec.max_frames + 1, len(phonemes))


def _add_noise(x, snr_db, seed):
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(len(x))
    scale = np.sqrt(np.mean(x ** 2) / (10 ** (snr_db / 10))) / max(np.std(noise), 1e-9)
    return np.clip(x + scale * noise, -1.0, 1.0)


def make_toy_corpus(out_dir, spec: ToySpec = ToySpec()) -> dict[str, Path]:
    """Write audio, manifests, lexicon, new-text source and true segmentations.

    Returns the written file paths by role.
    """
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    lex = toy_lexicon()
    paths = {"lexicon": out / "lexicon.txt", "speakers": out / "speakers.tsv",
             "train": out / "train.tsv", "test_clean": out / "test_clean.tsv",
             "test_other": out / "test_other.tsv", "new_text": out / "new_text.txt",
             "segments": out / "segments.tsv"}
    lex.save(paths["lexicon"])
    speakers = sorted(SPEAKERS)
    paths["speakers"].write_text("".join(f"{i}\t{s}\n" for i, s in enumerate(speakers)))
    n_train = spec.utts_per_speaker * len(speakers)
    texts = {
        "train": _sentences(rng, n_train, spec),
        "test": _sentences(rng, spec.test_per_speaker * len(speakers), spec),
    }
    new_text = _sentences(rng, n_train, spec)
    paths["new_text"].write_text("".join(" ".join(s) + "\n" for s in new_text))
    segments = []
    rows = {"train": [], "test_clean": [], "test_other": []}
    for split, per in (("train", spec.utts_per_speaker), ("test", spec.test_per_speaker)):
        k = 0
        for s_idx, spk in enumerate(speakers):
            for j in range(per):
                words = texts[split][k]
                k += 1
                phonemes = [p for w in words for p in lex.pronounce(w)]
                durs = _durations(rng, phonemes, spec)
                utt = f"{split}-{spk}-{j:03d}"
                wav = render(phonemes, durs, spk, _seed(spec.seed, utt))
                # a faint noise floor keeps silent mel bins off the log floor
                wav = _add_noise(wav, spec.floor_snr_db, _seed(spec.seed, utt, "floor"))
                text = " ".join(words)
                if split == "train":
                    write_wav(out / "wav" / f"{utt}.wav", AudioSignal(wav, TTS_FEATURES.sample_rate))
                    rows["train"].append((utt, spk, f"wav/{utt}.wav", text))
                    segments.append(f"{utt}\t{' '.join(map(str, durs))}\n")
                else:
                    clean_id, other_id = utt.replace("test", "clean"), utt.replace("test", "other")
                    write_wav(out / "wav" / f"{clean_id}.wav", AudioSignal(wav, TTS_FEATURES.sample_rate))
                    noisy = _add_noise(wav, spec.other_snr_db, _seed(spec.seed, other_id))
                    write_wav(out / "wav" / f"{other_id}.wav", AudioSignal(noisy, TTS_FEATURES.sample_rate))
                    rows["test_clean"].append((clean_id, spk, f"wav/{clean_id}.wav", text))
                    rows["test_other"].append((other_id, spk, f"wav/{other_id}.wav", text))
    for name, recs in rows.items():
        paths[name].write_text("".join("\t".join(r) + "\n" for r in recs))
    paths["segments"].write_text("".join(segments))
    return paths
