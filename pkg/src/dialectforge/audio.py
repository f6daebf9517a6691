"""WAV reading/writing and log-mel spectrograms.

The curated corpus is mono 16 kHz PCM; anything else is rejected rather
than resampled. The mel front end feeds the deterministic desk-scale
speaker embedder: magnitude STFT (Hann window, no frame padding), a
triangular HTK-spaced mel filterbank, then natural log of power.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

LOG_EPS = 1e-10


class AudioError(ValueError):
    """Raised for unreadable or unsupported audio input."""


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Mono audio with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioError(
                f"expected mono (1-D) samples, got shape {samples.shape}")
        if self.sample_rate_hz <= 0:
            raise AudioError("sample_rate_hz must be positive")
        object.__setattr__(self, "samples", np.clip(samples, -1.0, 1.0))

    def duration_seconds(self) -> float:
        return len(self.samples) / self.sample_rate_hz


def duration_seconds(buffer: AudioBuffer) -> float:
    """Seconds of audio: sample count over sample rate."""
    return buffer.duration_seconds()


def read_wav(path: str | os.PathLike) -> AudioBuffer:
    """Read a mono PCM/float WAV file, normalizing samples to [-1, 1].

    16-bit samples are scaled by 1/32768. Multi-channel files, compressed
    codecs, and non-WAV input raise AudioError.
    """
    try:
        rate, data = wavfile.read(os.fspath(path))
    except FileNotFoundError:
        raise
    except Exception as err:
        raise AudioError(f"not a readable PCM WAV file: {path}: {err}") from err
    if data.ndim != 1:
        raise AudioError(
            f"expected mono audio, got {data.shape[1]} channels: {path}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise AudioError(
            f"unsupported WAV sample format {data.dtype}: {path}")
    return AudioBuffer(samples=samples, sample_rate_hz=int(rate))


def write_wav(path: str | os.PathLike, buffer: AudioBuffer) -> None:
    """Write 16-bit PCM mono WAV."""
    pcm = np.round(buffer.samples * 32767.0).astype(np.int16)
    wavfile.write(os.fspath(path), buffer.sample_rate_hz, pcm)


@dataclass(frozen=True)
class MelConfig:
    """Mel front-end parameters (defaults conventional for 16 kHz speech)."""

    n_fft: int = 1024
    hop_length: int = 256
    n_mels: int = 80
    fmin_hz: float = 0.0
    fmax_hz: float = 8000.0

    def __post_init__(self):
        if self.n_fft <= 0 or self.hop_length <= 0 or self.n_mels <= 0:
            raise AudioError("n_fft, hop_length, n_mels must be positive")
        if self.hop_length > self.n_fft:
            raise AudioError("hop_length must be <= n_fft")
        if not (0 <= self.fmin_hz < self.fmax_hz):
            raise AudioError("need 0 <= fmin_hz < fmax_hz")


DEFAULT_MEL = MelConfig()


@dataclass(frozen=True, eq=False)
class MelMatrix:
    """Log-power mel spectrogram, shape [n_mels, T]."""

    frames: np.ndarray

    @property
    def n_mels(self) -> int:
        return self.frames.shape[0]

    @property
    def n_frames(self) -> int:
        return self.frames.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _mel_points(sample_rate_hz: int, config: MelConfig) -> np.ndarray:
    if config.fmax_hz > sample_rate_hz / 2:
        raise AudioError(
            f"fmax_hz {config.fmax_hz} exceeds Nyquist for "
            f"{sample_rate_hz} Hz audio")
    mels = np.linspace(hz_to_mel(config.fmin_hz), hz_to_mel(config.fmax_hz),
                       config.n_mels + 2)
    return mel_to_hz(mels)


def mel_band_edges(sample_rate_hz: int,
                   config: MelConfig = DEFAULT_MEL) -> list[tuple[float, float, float]]:
    """(low, center, high) frequency in Hz of each triangular mel band."""
    pts = _mel_points(sample_rate_hz, config)
    return [(float(pts[i]), float(pts[i + 1]), float(pts[i + 2]))
            for i in range(config.n_mels)]


def mel_filterbank(sample_rate_hz: int,
                   config: MelConfig = DEFAULT_MEL) -> np.ndarray:
    """Triangular mel filterbank, shape [n_mels, n_fft // 2 + 1]."""
    pts = _mel_points(sample_rate_hz, config)
    bin_freqs = np.fft.rfftfreq(config.n_fft, d=1.0 / sample_rate_hz)
    weights = np.zeros((config.n_mels, len(bin_freqs)))
    for b in range(config.n_mels):
        lo, center, hi = pts[b], pts[b + 1], pts[b + 2]
        up = (bin_freqs - lo) / max(center - lo, 1e-12)
        down = (hi - bin_freqs) / max(hi - center, 1e-12)
        weights[b] = np.maximum(0.0, np.minimum(up, down))
    return weights


def _hann(n: int) -> np.ndarray:
    # Periodic Hann window.
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def log_mel_spectrogram(buffer: AudioBuffer,
                        config: MelConfig = DEFAULT_MEL) -> MelMatrix:
    """Natural-log power mel spectrogram.

    Frames are not centered and the signal is not padded, so the frame
    count is exactly floor((len - n_fft) / hop) + 1.
    """
    samples = buffer.samples
    if len(samples) < config.n_fft:
        raise AudioError(
            f"buffer of {len(samples)} samples is shorter than "
            f"n_fft={config.n_fft}")
    n_frames = (len(samples) - config.n_fft) // config.hop_length + 1
    idx = (np.arange(config.n_fft)[None, :]
           + config.hop_length * np.arange(n_frames)[:, None])
    frames = samples[idx] * _hann(config.n_fft)
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2  # [T, bins]
    fb = mel_filterbank(buffer.sample_rate_hz, config)
    mel_power = fb @ power.T  # [n_mels, T]
    return MelMatrix(frames=np.log(mel_power + LOG_EPS))
