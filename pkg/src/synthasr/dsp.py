"""Waveform and spectrogram conversions.

STFT/ISTFT, power-based log-Mel features, mel-to-linear inversion and
Griffin-Lim phase reconstruction.  Everything here is a pure function of its
inputs; randomness only enters through an explicit seed.
"""

from __future__ import annotations

import hashlib
import json
import wave
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import get_window


class DspError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    n_mels: int = 80
    frame_shift_ms: float = 12.5
    window_ms: float = 50.0
    fft_size: int = 1024
    fmin_hz: float = 0.0
    fmax_hz: float = 8000.0
    log_floor: float = 1e-10
    # zero-pad window//2 samples on both sides before framing
    center: bool = True

    def __post_init__(self):
        if self.n_mels <= 0:
            raise DspError("n_mels must be positive")
        if self.sample_rate <= 0:
            raise DspError("sample_rate must be positive")
        if self.frame_shift_ms > self.window_ms:
            raise DspError("frame_shift_ms must not exceed window_ms")
        if self.fft_size < self.win_length:
            raise DspError(f"fft_size {self.fft_size} shorter than window ({self.win_length} samples)")
        if self.log_floor <= 0:
            raise DspError("log_floor must be positive")

    @property
    def hop_length(self) -> int:
        return int(round(self.sample_rate * self.frame_shift_ms / 1000.0))

    @property
    def win_length(self) -> int:
        return int(round(self.sample_rate * self.window_ms / 1000.0))

    @property
    def n_freqs(self) -> int:
        return self.fft_size // 2 + 1

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


TTS_FEATURES = FeatureConfig(frame_shift_ms=12.5)
ASR_FEATURES = FeatureConfig(frame_shift_ms=10.0)


@dataclass
class AudioSignal:
    samples: np.ndarray
    sample_rate_hz: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DspError("AudioSignal must be mono (1-D samples)")
        if not np.all(np.isfinite(self.samples)):
            raise DspError("AudioSignal contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass
class MelSpectrogram:
    frames: np.ndarray
    config: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise DspError(f"mel frames must be T x n_mels with T >= 1, got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise DspError("mel spectrogram contains non-finite values")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class LinearSpectrogram:
    magnitudes: np.ndarray
    config: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self):
        self.magnitudes = np.asarray(self.magnitudes, dtype=np.float64)
        if self.magnitudes.ndim != 2:
            raise DspError("linear spectrogram must be 2-D")
        if not np.all(np.isfinite(self.magnitudes)) or np.any(self.magnitudes < 0):
            raise DspError("linear magnitudes must be finite and non-negative")


def _window(config: FeatureConfig) -> np.ndarray:
    return get_window("hann", config.win_length, fftbins=True)


def num_frames(n_samples: int, config: FeatureConfig) -> int:
    """Frame count for a signal of ``n_samples`` under the config's padding mode."""
    win, hop = config.win_length, config.hop_length
    if n_samples < win:
        raise DspError(f"signal of {n_samples} samples is shorter than one window ({win})")
    padded = n_samples + 2 * (win // 2) if config.center else n_samples
    return (padded - win) // hop + 1


def stft(signal: AudioSignal, config: FeatureConfig) -> np.ndarray:
    """Complex STFT, shape (T, fft_size // 2 + 1)."""
    x = signal.samples
    if len(x) == 0:
        raise DspError("empty signal")
    num_frames(len(x), config)
    win, hop = config.win_length, config.hop_length
    if config.center:
        x = np.pad(x, win // 2)
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop]
    return np.fft.rfft(frames * _window(config), n=config.fft_size, axis=1)


def istft(spec: np.ndarray, config: FeatureConfig, length: int | None = None) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`."""
    win, hop = config.win_length, config.hop_length
    window = _window(config)
    frames = np.fft.irfft(spec, n=config.fft_size, axis=1)[:, :win] * window
    n_frames = spec.shape[0]
    total = (n_frames - 1) * hop + win
    out = np.zeros(total)
    norm = np.zeros(total)
    for t in range(n_frames):
        out[t * hop:t * hop + win] += frames[t]
        norm[t * hop:t * hop + win] += window ** 2
    out = np.where(norm > 1e-8, out / np.maximum(norm, 1e-8), 0.0)
    if config.center:
        out = out[win // 2:]
    if length is not None:
        out = out[:length] if len(out) >= length else np.pad(out, (0, length - len(out)))
    return out


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: FeatureConfig) -> np.ndarray:
    """Triangular (n_mels, n_freqs) filterbank applied to power spectra.

    Filter centres are equally spaced on the mel scale with the first at fmin
    and the last at fmax, so adjacent triangles sum to one everywhere inside
    [fmin, fmax] and vanish outside it.
    """
    nyquist = config.sample_rate / 2.0
    if config.fmax_hz > nyquist:
        raise DspError(f"fmax {config.fmax_hz} Hz exceeds Nyquist {nyquist} Hz")
    if not 0 <= config.fmin_hz < config.fmax_hz:
        raise DspError("need 0 <= fmin < fmax")
    lo, hi = hz_to_mel(config.fmin_hz), hz_to_mel(config.fmax_hz)
    freqs = np.linspace(0.0, nyquist, config.n_freqs)
    mels = hz_to_mel(freqs)
    if config.n_mels == 1:
        fb = np.ones((1, config.n_freqs))
    else:
        centres = np.linspace(lo, hi, config.n_mels)
        spacing = centres[1] - centres[0]
        fb = np.maximum(0.0, 1.0 - np.abs(mels[None, :] - centres[:, None]) / spacing)
    inside = (freqs >= config.fmin_hz) & (freqs <= config.fmax_hz)
    return fb * inside[None, :]


def log_mel(signal: AudioSignal, config: FeatureConfig) -> MelSpectrogram:
    if signal.sample_rate_hz != config.sample_rate:
        raise DspError(f"signal rate {signal.sample_rate_hz} != config rate {config.sample_rate}")
    power = np.abs(stft(signal, config)) ** 2
    energies = power @ mel_filterbank(config).T
    return MelSpectrogram(np.log(np.maximum(energies, config.log_floor)), config)


def mel_to_linear(
    mel: MelSpectrogram, mode: str = "pseudo_inverse", model=None, iterations: int = 300
) -> LinearSpectrogram:
    """Map log-Mel frames back to linear STFT magnitudes.

    ``pseudo_inverse`` solves the non-negative least-squares problem
    ``min ||fb @ p - e||, p >= 0`` for every frame at once with multiplicative
    updates, started from the transpose-based estimate (which is already exact
    for spectra that are flat inside each filter).  ``learned`` delegates to a
    trained :class:`synthasr.vocoder.MelToLinearNet`.
    """
    config = mel.config
    if mode == "pseudo_inverse":
        fb = mel_filterbank(config)
        energies = np.exp(np.asarray(mel.frames, dtype=np.float64)).T
        row_sums = fb.sum(axis=1)
        power = fb.T @ (energies / np.maximum(row_sums, 1e-12)[:, None])
        gram, target = fb.T @ fb, fb.T @ energies
        for _ in range(iterations):
            power *= target / np.maximum(gram @ power, 1e-300)
        return LinearSpectrogram(np.sqrt(power.T), config)
    if mode == "learned":
        if model is None:
            raise DspError("learned mel_to_linear requires a loaded vocoder checkpoint")
        return LinearSpectrogram(model.predict(mel.frames), config)
    raise DspError(f"unknown mel_to_linear mode {mode!r}")


def consistency_error(y: np.ndarray, mag: np.ndarray, config: FeatureConfig) -> float:
    """Relative spectral inconsistency ||  |STFT(y)| - mag  || / ||mag||."""
    rebuilt = np.abs(stft(AudioSignal(y, config.sample_rate), config))
    n = min(len(rebuilt), len(mag))
    denom = np.linalg.norm(mag)
    if denom == 0:
        return float(np.linalg.norm(rebuilt))
    return float(np.linalg.norm(rebuilt[:n] - mag[:n]) / denom)


def griffin_lim(
    mag: LinearSpectrogram,
    iterations: int = 32,
    momentum: float = 0.99,
    seed: int | None = None,
    length: int | None = None,
    error_log: list | None = None,
) -> AudioSignal:
    """Fast Griffin-Lim with momentum (accelerated projection update).

    Initial phase is zero unless ``seed`` is given, in which case phases are
    drawn uniformly from a seeded generator.  When ``error_log`` is a list,
    the consistency error of the waveform reconstructed before the first
    update and after every iteration is appended to it.
    """
    if iterations < 1:
        raise DspError("iterations must be >= 1")
    if not 0.0 <= momentum < 1.0:
        raise DspError("momentum must lie in [0, 1)")
    S = mag.magnitudes
    if S.size == 0:
        raise DspError("zero-size spectrogram")
    config = mag.config
    if S.shape[1] != config.n_freqs:
        raise DspError(f"expected {config.n_freqs} frequency bins, got {S.shape[1]}")
    if length is None and config.center:
        # never shorter than one window, so the result can be analysed again
        length = max((S.shape[0] - 1) * config.hop_length, config.win_length)
    work = None if length is None else max(length, config.win_length)
    if seed is None:
        angles = np.ones(S.shape, dtype=np.complex128)
    else:
        rng = np.random.default_rng(seed)
        angles = np.exp(2j * np.pi * rng.random(S.shape))

    def project(a):
        y = istft(S * a, config, length=work)
        return y, stft(AudioSignal(y, config.sample_rate), config)[: S.shape[0]]

    if error_log is not None:
        error_log.append(consistency_error(project(angles)[0], S, config))
    rebuilt = np.zeros_like(angles)
    eps = 1e-16
    for _ in range(iterations):
        previous = rebuilt
        _, rebuilt = project(angles)
        angles = rebuilt - (momentum / (1.0 + momentum)) * previous
        angles = angles / (np.abs(angles) + eps)
        if error_log is not None:
            error_log.append(consistency_error(project(angles)[0], S, config))
    y = istft(S * angles, config, length=work)[:length]
    return AudioSignal(np.clip(y, -1.0, 1.0), config.sample_rate)


def read_wav(path) -> AudioSignal:
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1 or f.getsampwidth() != 2:
            raise DspError(f"{path}: expected mono 16-bit PCM")
        rate = f.getframerate()
        data = np.frombuffer(f.readframes(f.getnframes()), dtype="<i2")
    return AudioSignal(data.astype(np.float64) / 32768.0, rate)


def write_wav(path, signal: AudioSignal) -> None:
    pcm = np.round(np.clip(signal.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(signal.sample_rate_hz)
        f.writeframes(pcm.tobytes())


_SPEC_MAGIC = "SYNTHASR-SPEC"


def save_spectrogram(path, mel: MelSpectrogram) -> None:
    """Row-major little-endian float32 payload behind a one-line text header."""
    rows, cols = mel.frames.shape
    header = f"{_SPEC_MAGIC} 1 rows={rows} cols={cols} config={mel.config.digest()}\n"
    cfg = json.dumps(asdict(mel.config), sort_keys=True)
    with open(path, "wb") as f:
        f.write(header.encode())
        f.write((cfg + "\n").encode())
        f.write(np.ascontiguousarray(mel.frames, dtype="<f4").tobytes())


def load_spectrogram(path) -> MelSpectrogram:
    with open(path, "rb") as f:
        header = f.readline().decode().split()
        if not header or header[0] != _SPEC_MAGIC:
            raise DspError(f"{path}: not a spectrogram file")
        fields = dict(item.split("=", 1) for item in header[2:])
        config = FeatureConfig(**json.loads(f.readline().decode()))
        if config.digest() != fields["config"]:
            raise DspError(f"{path}: config hash mismatch")
        rows, cols = int(fields["rows"]), int(fields["cols"])
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != rows * cols:
        raise DspError(f"{path}: truncated payload")
    return MelSpectrogram(data.reshape(rows, cols).copy(), config)


def save_spectrogram_png(path, mel: MelSpectrogram, db_min: float = -60.0, db_max: float = 40.0) -> None:
    """Grayscale image (time on x, mel bins bottom-up) with a fixed dB mapping."""
    from PIL import Image

    db = 10.0 * np.asarray(mel.frames, dtype=np.float64) / np.log(10.0)
    scaled = np.clip((db - db_min) / (db_max - db_min), 0.0, 1.0)
    img = np.flipud((scaled.T * 255).astype(np.uint8))
    Image.fromarray(np.ascontiguousarray(img), mode="L").save(path)
