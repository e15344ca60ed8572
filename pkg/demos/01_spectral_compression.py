"""
Spectral analysis and lossless raster compression
==================================================

Walks the upstream data path one stage at a time: synthesize a pink-noise
clip the way the edge unit would hear it, convert it to the half-precision
log-mel grid, regroup those bits into an RGBA raster, and compress the
raster losslessly. Run with `python demos/01_spectral_compression.py`.
"""

import numpy as np

from melcast import codec
from melcast.edge import pink_noise_source
from melcast.spectral import SpectralParams, compute_log_mel, frame_count, mel_filterbank

# --- 1. a 30 s two-channel clip, both channels from one co-located pair ------

params = SpectralParams()  # 4096-sample frames, hop 2048, 64 mel bins, 44.1 kHz
clip = pink_noise_source(30.0, params.sample_rate, seed=20250811)
print(f"clip: {clip.n_channels} channels x {clip.n_samples} samples "
      f"({clip.duration_s:.0f} s at {clip.sample_rate} Hz)")

# --- 2. the log-mel grid ------------------------------------------------------

# Only full frames count: floor((n - L)/R) + 1 of them.
n_frames = frame_count(clip.n_samples, params.frame_size, params.hop)
spec = compute_log_mel(clip, params)
print(f"log-mel grid: {spec.values.shape} (expected {n_frames} frames), dtype {spec.values.dtype}")

fb = mel_filterbank(params)
print(f"mel filterbank: {fb.shape}, every filter nonempty: {bool(np.all(fb.sum(axis=1) > 0))}")

# --- 3. bits -> pixels --------------------------------------------------------

# Each time-frequency bin holds 2 channels x 16 bits = one RGBA pixel:
# R/G are the high/low bytes of channel 0, B/A of channel 1.
raster = codec.pack_rgba(spec)
print(f"raster: {raster.width} x {raster.height} px, {len(raster.pixels)} raw bytes")

# --- 4. lossless image compression -------------------------------------------

for name in codec.SUPPORTED_CODECS:
    data = codec.compress_raster(raster, name)
    back = codec.decompress_raster(data, name)
    exact = back.pixels == raster.pixels
    print(f"{name:14s}: {len(data):7d} bytes "
          f"({len(data) / len(raster.pixels) * 100:5.1f}% of raw), bit-exact: {exact}")

# --- 5. and back to the grid ---------------------------------------------------

recovered = codec.unpack_rgba(raster, params)
identical = np.array_equal(recovered.values.view(np.uint16), spec.values.view(np.uint16))
print(f"unpack(pack(grid)) bit-identical: {identical}")
