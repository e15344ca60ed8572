"""
Wire payloads and the egress-rate arithmetic
=============================================

Shows why the mel representation is the one worth shipping, then frames a
compressed spectrogram as the latin-1 JSON payload that travels upstream.
"""

from melcast import codec
from melcast.edge import sine_source
from melcast.spectral import SpectralParams, compute_log_mel

# --- 1. how much would each representation cost to stream? --------------------

# Uncompressed egress requirement per representation and bit depth.
# Raw audio needs ~172 kB/s; the 16-bit mel grid needs ~5.4 kB/s, but its
# 161 kB per 30 s window still exceeds a 128 KiB broker payload limit,
# which is exactly why the raster compression stage exists.
print(codec.format_egress_table())
print()

# --- 2. build one payload ------------------------------------------------------

params = SpectralParams()
spec = compute_log_mel(sine_source(30.0, params.sample_rate), params)
payload = codec.payload_from_spectrogram(
    spec, device_id="demo-edge", timestamp_utc="2026-01-01T12:00:00Z"
)
wire = codec.encode_payload(payload)
print(f"payload: {len(wire)} bytes on the wire "
      f"(limit {codec.MAX_PAYLOAD_BYTES}), image {len(payload.image)} bytes "
      f"compressed from {spec.n_frames * spec.n_mels * 4} raw")

# The document is plain JSON, byte-encoded as latin-1 so the compressed image
# rides inside a JSON string one byte per code point.
head = wire[:120].decode("latin-1")
print(f"wire head: {head}...")

# --- 3. decode is the exact inverse ---------------------------------------------

import numpy as np

recovered = codec.spectrogram_from_payload(codec.decode_payload(wire))
identical = np.array_equal(recovered.values.view(np.uint16), spec.values.view(np.uint16))
print(f"decode(encode(payload)) spectral bits identical: {identical}")
