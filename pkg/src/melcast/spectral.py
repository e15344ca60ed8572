"""Log-mel spectrogram analysis of two-channel audio.

Converts raw PCM into the half-precision log-mel grid that travels over the
wire: periodic Hann window, no centering or padding (only full frames count),
Slaney-style mel filters with unit peak spanning 0 Hz to Nyquist, natural log
with a fixed floor, and a final round-to-nearest-even binary16 quantization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .audio_io import PathLike, read_wav
from .errors import ChannelMismatch, DegenerateFilterbank, InsufficientAudio, ParamMismatch

DEFAULT_SAMPLE_RATE = 44100
DEFAULT_FRAME_SIZE = 4096
DEFAULT_HOP = 2048
DEFAULT_N_MELS = 64
DEFAULT_LOG_FLOOR = 1e-10

FLOAT16_MAX = 65504.0

# Slaney-style mel scale: linear below the break frequency, logarithmic above.
_MEL_HZ_PER_STEP = 200.0 / 3.0
_MEL_BREAK_HZ = 1000.0
_MEL_BREAK = _MEL_BREAK_HZ / _MEL_HZ_PER_STEP
_MEL_LOG_STEP = math.log(6.4) / 27.0


@dataclass(frozen=True)
class AudioClip:
    """Multichannel float32 PCM in [-1, 1], shape (n_channels, n_samples)."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if self.samples.ndim != 2:
            raise ValueError("samples must be a (n_channels, n_samples) array")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate

    @classmethod
    def from_wav(cls, path: PathLike) -> "AudioClip":
        """Load a WAV file, keeping at most the first two channels.

        A mono file is duplicated onto both channels (one capsule heard twice),
        so every file source yields the two-channel clip the pipeline expects.
        """
        samples, rate = read_wav(path, max_channels=2)
        if samples.shape[0] == 1:
            samples = np.vstack([samples, samples])
        return cls(samples=samples, sample_rate=rate)


@dataclass(frozen=True)
class SpectralParams:
    """Analysis parameters shared by every producer and consumer of spectra."""

    frame_size: int = DEFAULT_FRAME_SIZE
    hop: int = DEFAULT_HOP
    n_mels: int = DEFAULT_N_MELS
    sample_rate: int = DEFAULT_SAMPLE_RATE
    window: str = "hann"
    mel_scale: str = "slaney"
    log_floor: float = DEFAULT_LOG_FLOOR

    def __post_init__(self):
        if not 0 < self.hop <= self.frame_size:
            raise ValueError("require 0 < hop <= frame_size")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")
        if self.window != "hann":
            raise ValueError(f"unsupported window: {self.window!r}")
        if self.mel_scale != "slaney":
            raise ValueError(f"unsupported mel scale: {self.mel_scale!r}")

    @property
    def n_bins(self) -> int:
        return self.frame_size // 2 + 1

    def frames_per_second(self) -> float:
        return self.sample_rate / self.hop

    def matches_wire(self, other: "SpectralParams") -> bool:
        """True when the wire-visible fields agree (window/scale/floor are
        protocol constants and never travel)."""
        return (
            self.frame_size == other.frame_size
            and self.hop == other.hop
            and self.n_mels == other.n_mels
            and self.sample_rate == other.sample_rate
        )


@dataclass(frozen=True)
class LogMelSpectrogram:
    """Half-precision natural-log mel energies, shape (n_channels, n_frames, n_mels)."""

    values: np.ndarray
    params: SpectralParams = field(default_factory=SpectralParams)

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError("values must be (n_channels, n_frames, n_mels)")
        if self.values.dtype != np.float16:
            raise ValueError("values must be binary16 (np.float16)")
        if self.values.shape[2] != self.params.n_mels:
            raise ParamMismatch(
                f"grid has {self.values.shape[2]} mel bins, params say {self.params.n_mels}"
            )
        if self.values.size and not np.all(np.isfinite(self.values)):
            raise ValueError("spectrogram contains non-finite values")

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    @property
    def n_mels(self) -> int:
        return self.values.shape[2]


def frame_count(n_samples: int, frame_size: int, hop: int) -> int:
    """Number of full analysis frames in ``n_samples`` (no padding, no centering)."""
    if n_samples < frame_size:
        raise InsufficientAudio(
            f"need at least {frame_size} samples for one frame, got {n_samples}"
        )
    return (n_samples - frame_size) // hop + 1


def hz_to_mel(freq_hz):
    """Slaney-style Hz→mel, vectorized."""
    f = np.asarray(freq_hz, dtype=np.float64)
    mel = f / _MEL_HZ_PER_STEP
    above = f >= _MEL_BREAK_HZ
    if np.any(above):
        mel = np.where(above, _MEL_BREAK + np.log(np.maximum(f, 1.0) / _MEL_BREAK_HZ) / _MEL_LOG_STEP, mel)
    return mel if mel.ndim else float(mel)


def mel_to_hz(mel):
    """Slaney-style mel→Hz, vectorized."""
    m = np.asarray(mel, dtype=np.float64)
    f = m * _MEL_HZ_PER_STEP
    above = m >= _MEL_BREAK
    if np.any(above):
        f = np.where(above, _MEL_BREAK_HZ * np.exp(_MEL_LOG_STEP * (m - _MEL_BREAK)), f)
    return f if f.ndim else float(f)


def mel_center_frequencies(params: SpectralParams) -> np.ndarray:
    """Center frequencies (Hz) of the ``n_mels`` filters, edges included upstream."""
    edges = np.linspace(hz_to_mel(0.0), hz_to_mel(params.sample_rate / 2.0), params.n_mels + 2)
    return mel_to_hz(edges)[1:-1]


def mel_filterbank(params: SpectralParams) -> np.ndarray:
    """Triangular unit-peak mel filterbank, shape (n_mels, frame_size//2 + 1).

    Filters span 0 Hz to Nyquist on the Slaney mel scale. Raises
    DegenerateFilterbank when the resolution cannot support the requested
    number of filters (more filters than FFT bins, or an empty filter).
    """
    n_bins = params.n_bins
    if params.n_mels > n_bins:
        raise DegenerateFilterbank(
            f"{params.n_mels} mel filters cannot fit in {n_bins} FFT bins"
        )
    freqs = np.arange(n_bins, dtype=np.float64) * params.sample_rate / params.frame_size
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(params.sample_rate / 2.0), params.n_mels + 2))
    fb = np.zeros((params.n_mels, n_bins), dtype=np.float64)
    for m in range(params.n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (freqs - lo) / (center - lo)
        falling = (hi - freqs) / (hi - center)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    if np.any(fb.sum(axis=1) <= 0.0):
        raise DegenerateFilterbank("at least one mel filter has no nonzero weight")
    return fb


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window of the given length."""
    n = np.arange(length, dtype=np.float64)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def compute_log_mel(clip: AudioClip, params: SpectralParams) -> LogMelSpectrogram:
    """Run the full analysis: windowed STFT power → mel projection → ln → binary16.

    Frames start at sample 0 and advance by ``params.hop``; only full frames
    count, so the frame axis always has ``frame_count(n_samples, L, R)`` rows.
    The result is deterministic for identical inputs.
    """
    if clip.n_channels != 2:
        raise ChannelMismatch(f"pipeline spectra need 2 channels, got {clip.n_channels}")
    if clip.sample_rate != params.sample_rate:
        raise ParamMismatch(
            f"clip at {clip.sample_rate} Hz, params expect {params.sample_rate} Hz"
        )
    n_frames = frame_count(clip.n_samples, params.frame_size, params.hop)
    window = hann_window(params.frame_size)
    fb_t = mel_filterbank(params).T

    grids = np.empty((clip.n_channels, n_frames, params.n_mels), dtype=np.float64)
    for ch in range(clip.n_channels):
        frames = np.lib.stride_tricks.sliding_window_view(
            clip.samples[ch], params.frame_size
        )[:: params.hop][:n_frames]
        spectrum = np.fft.rfft(frames.astype(np.float64) * window, axis=1)
        power = spectrum.real**2 + spectrum.imag**2
        grids[ch] = np.log(np.maximum(power @ fb_t, params.log_floor))

    # The log floor keeps values far inside the binary16 range; the clip is a
    # guard against pathological parameter choices, never active by default.
    quantized = np.clip(grids, -FLOAT16_MAX, FLOAT16_MAX).astype(np.float16)
    return LogMelSpectrogram(values=quantized, params=params)
