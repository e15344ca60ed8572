"""WAV reading/writing helpers shared by the edge and playback units."""

from __future__ import annotations

import os
from typing import Union

import numpy as np
from scipy.io import wavfile

PathLike = Union[str, os.PathLike]


def read_wav(path: PathLike, max_channels: int = 2) -> tuple[np.ndarray, int]:
    """Read a PCM WAV file into float32 samples in [-1, 1].

    Supports 16-bit integer and 32-bit float PCM. Returns ``(samples, rate)``
    where samples has shape (n_channels, n_samples). Files with more than
    ``max_channels`` channels are truncated to the first ``max_channels``
    (a multi-capsule array contributes only its first two capsules here).
    """
    rate, data = wavfile.read(os.fspath(path))
    if data.ndim == 1:
        data = data[:, None]
    data = data[:, :max_channels]
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        samples = data
    elif data.dtype == np.int32:
        samples = data.astype(np.float32) / 2147483648.0
    else:
        raise ValueError(f"unsupported WAV sample format: {data.dtype}")
    return np.ascontiguousarray(samples.T), int(rate)


def write_wav(path: PathLike, samples: np.ndarray, sample_rate: int) -> None:
    """Write float32 samples as a 32-bit float WAV.

    Accepts (n_samples,) mono or (n_channels, n_samples) arrays.
    """
    samples = np.asarray(samples, dtype=np.float32)
    if samples.ndim == 2:
        samples = samples.T  # wavfile wants (n_samples, n_channels)
    wavfile.write(os.fspath(path), int(sample_rate), samples)
