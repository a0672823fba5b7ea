"""SpecAugment-style time and frequency masking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from synthasr.dsp import MelSpectrogram


@dataclass(frozen=True)
class MaskSpec:
    """Numbers of masks and their maximum widths.

    Each mask draws a width uniformly from ``0..max_width`` (clamped to the
    axis size) and a start uniformly from the positions where it fits.
    """

    time_masks: int = 2
    max_time_width: int = 20
    freq_masks: int = 2
    max_freq_width: int = 10

    def __post_init__(self):
        if min(self.time_masks, self.max_time_width, self.freq_masks, self.max_freq_width) < 0:
            raise ValueError("mask counts and widths must be non-negative")


def _draw(rng, size: int, max_width: int):
    width = int(rng.integers(0, min(max_width, size) + 1))
    start = int(rng.integers(0, size - width + 1))
    return start, width


def mask_regions(shape, spec: MaskSpec, seed: int):
    """The (start, width) pairs along time and frequency for a given seed."""
    rng = np.random.default_rng(seed)
    n_t, n_f = shape
    times = [_draw(rng, n_t, spec.max_time_width) for _ in range(spec.time_masks)]
    freqs = [_draw(rng, n_f, spec.max_freq_width) for _ in range(spec.freq_masks)]
    return times, freqs


def specaugment(mel, spec: MaskSpec, seed: int):
    """Zero masked cells of a (T, F) array or :class:`MelSpectrogram`; returns the same kind."""
    frames = mel.frames if isinstance(mel, MelSpectrogram) else np.asarray(mel)
    out = np.array(frames, copy=True)
    times, freqs = mask_regions(out.shape, spec, seed)
    for start, width in times:
        out[start:start + width, :] = 0.0
    for start, width in freqs:
        out[:, start:start + width] = 0.0
    if isinstance(mel, MelSpectrogram):
        return MelSpectrogram(out, mel.config)
    return out
