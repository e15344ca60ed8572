import numpy as np
import pytest

from melcast import codec
from melcast.inference import write_masker_bank
from melcast.spectral import AudioClip, SpectralParams, compute_log_mel

# Small analysis grid for fast unit tests; spec-value tests use the defaults.
TINY = SpectralParams(frame_size=256, hop=128, n_mels=8, sample_rate=8000)


@pytest.fixture
def tiny_params():
    return TINY


def make_clip(seconds=0.5, seed=0, params=TINY, identical_channels=True):
    n = int(round(seconds * params.sample_rate))
    rng = np.random.default_rng(seed)
    a = (rng.standard_normal(n) * 0.1).astype(np.float32)
    b = a if identical_channels else (rng.standard_normal(n) * 0.1).astype(np.float32)
    return AudioClip(np.stack([a, b]), params.sample_rate)


def make_payload_bytes(seconds=0.5, seed=0, params=TINY, device_id="dev-a",
                       timestamp="2026-01-01T00:00:00Z", raster_codec="png"):
    spec = compute_log_mel(make_clip(seconds, seed, params), params)
    payload = codec.payload_from_spectrogram(spec, device_id, timestamp, raster_codec)
    return codec.encode_payload(payload)


def make_bank(directory, params=TINY, count=3, seconds=0.2, seed=0):
    maskers = [
        (f"masker_{i:03d}", make_clip(seconds, seed=seed + i, params=params))
        for i in range(count)
    ]
    return write_masker_bank(directory, maskers, params)


@pytest.fixture
def bank_dir(tmp_path, tiny_params):
    make_bank(tmp_path / "bank", tiny_params)
    return tmp_path / "bank"
