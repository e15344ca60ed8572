"""Lossless spectral compression and the latin-1 wire payload.

A two-channel binary16 log-mel grid carries 32 bits per time-frequency bin,
exactly one RGBA pixel at 8 bits per channel. Regrouping those bits into an
image raster lets a standard lossless image codec shrink the grid, and the
compressed stream rides inside a latin-1-encoded JSON payload that stays
under the broker's 128 KiB limit.

Byte order within a pixel at (x=frame, y=mel bin):
R = channel-0 high byte, G = channel-0 low byte,
B = channel-1 high byte, A = channel-1 low byte (big-endian half-floats).
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

import numpy as np
from PIL import Image

from .errors import (
    ChannelMismatch,
    DecodeError,
    PayloadSchemaError,
    PayloadTooLarge,
    UnsupportedCodec,
)
from .spectral import LogMelSpectrogram, SpectralParams

PAYLOAD_VERSION = "1"
MAX_PAYLOAD_BYTES = 128 * 1024  # broker limit, 1 kB = 1024 B throughout
SUPPORTED_CODECS = ("png", "webp-lossless")
DEFAULT_RASTER_CODEC = "webp-lossless"

# Fixed encoder settings; compressed sizes are part of the repo's regression
# surface, so these never float with library defaults.
_PNG_COMPRESS_LEVEL = 9
_WEBP_EFFORT = 2


@dataclass(frozen=True)
class RgbaRaster:
    """Row-major RGBA bytes; width = n_frames, height = n_mels."""

    width: int
    height: int
    pixels: bytes

    def __post_init__(self):
        expected = self.width * self.height * 4
        if len(self.pixels) != expected:
            raise ValueError(
                f"raster of {self.width}x{self.height} needs {expected} bytes, got {len(self.pixels)}"
            )


@dataclass(frozen=True)
class SpectralPayload:
    """Metadata plus compressed raster bytes; the upstream wire object."""

    device_id: str
    timestamp_utc: str
    sample_rate: int
    frame_size: int
    hop: int
    n_frames: int
    n_mels: int
    image: bytes
    raster_codec: str = DEFAULT_RASTER_CODEC
    n_channels: int = 2
    version: str = PAYLOAD_VERSION

    def wire_params(self) -> SpectralParams:
        """Analysis params as visible on the wire (window/scale/floor are
        protocol constants that never travel)."""
        return SpectralParams(
            frame_size=self.frame_size,
            hop=self.hop,
            n_mels=self.n_mels,
            sample_rate=self.sample_rate,
        )


def pack_rgba(spec: LogMelSpectrogram) -> RgbaRaster:
    """Regroup a 2-channel binary16 grid into an RGBA raster, bit for bit."""
    if spec.n_channels != 2:
        raise ChannelMismatch(f"raster packing needs 2 channels, got {spec.n_channels}")
    bits = spec.values.view(np.uint16)
    hi = (bits >> 8).astype(np.uint8)
    lo = (bits & 0xFF).astype(np.uint8)
    # (n_frames, n_mels) per plane -> image rows are mel bins, columns frames.
    raster = np.stack([hi[0].T, lo[0].T, hi[1].T, lo[1].T], axis=-1)
    return RgbaRaster(
        width=spec.n_frames,
        height=spec.n_mels,
        pixels=np.ascontiguousarray(raster).tobytes(),
    )


def unpack_rgba(raster: RgbaRaster, params: SpectralParams | None = None) -> LogMelSpectrogram:
    """Exact inverse of :func:`pack_rgba`."""
    arr = np.frombuffer(raster.pixels, dtype=np.uint8).reshape(raster.height, raster.width, 4)
    ch0 = (arr[:, :, 0].astype(np.uint16) << 8) | arr[:, :, 1]
    ch1 = (arr[:, :, 2].astype(np.uint16) << 8) | arr[:, :, 3]
    bits = np.ascontiguousarray(np.stack([ch0.T, ch1.T]))
    values = bits.view(np.float16)
    if params is None:
        params = SpectralParams(n_mels=max(raster.height, 1))
    return LogMelSpectrogram(values=values, params=params)


def compress_raster(raster: RgbaRaster, codec: str = DEFAULT_RASTER_CODEC) -> bytes:
    """Compress losslessly into a standards-conformant PNG or WebP file."""
    if codec not in SUPPORTED_CODECS:
        raise UnsupportedCodec(f"raster codec must be one of {SUPPORTED_CODECS}, got {codec!r}")
    image = Image.frombytes("RGBA", (raster.width, raster.height), raster.pixels)
    buf = io.BytesIO()
    if codec == "png":
        image.save(buf, format="PNG", compress_level=_PNG_COMPRESS_LEVEL)
    else:
        # exact=True stops libwebp from rewriting RGB under fully transparent
        # pixels, which would silently corrupt channel-1 low bytes of 0x00.
        image.save(buf, format="WEBP", lossless=True, quality=100, method=_WEBP_EFFORT, exact=True)
    return buf.getvalue()


def decompress_raster(data: bytes, codec: str = DEFAULT_RASTER_CODEC) -> RgbaRaster:
    """Decode a PNG/WebP stream back into the raw RGBA raster."""
    if codec not in SUPPORTED_CODECS:
        raise UnsupportedCodec(f"raster codec must be one of {SUPPORTED_CODECS}, got {codec!r}")
    try:
        image = Image.open(io.BytesIO(data))
        image.load()
    except Exception as exc:
        raise DecodeError(f"cannot decode {codec} stream: {exc}") from exc
    if image.mode != "RGBA":
        image = image.convert("RGBA")
    return RgbaRaster(width=image.width, height=image.height, pixels=image.tobytes())


_REQUIRED_FIELDS = (
    "version",
    "device_id",
    "timestamp_utc",
    "sample_rate",
    "n_channels",
    "frame_size",
    "hop",
    "n_frames",
    "n_mels",
    "raster_codec",
    "image",
)


def encode_payload(payload: SpectralPayload) -> bytes:
    """Serialize to latin-1 JSON bytes.

    Each compressed image byte b maps to the code point U+0000+b inside the
    JSON string (latin-1 is a byte bijection), and the whole document is
    byte-encoded as latin-1. Rejects results over the 128 KiB broker limit.
    """
    doc = {
        "version": payload.version,
        "device_id": payload.device_id,
        "timestamp_utc": payload.timestamp_utc,
        "sample_rate": payload.sample_rate,
        "n_channels": payload.n_channels,
        "frame_size": payload.frame_size,
        "hop": payload.hop,
        "n_frames": payload.n_frames,
        "n_mels": payload.n_mels,
        "raster_codec": payload.raster_codec,
        "image": payload.image.decode("latin-1"),
    }
    try:
        wire = json.dumps(doc, ensure_ascii=False).encode("latin-1")
    except UnicodeEncodeError as exc:
        raise PayloadSchemaError(f"metadata is not latin-1 encodable: {exc}") from exc
    if len(wire) > MAX_PAYLOAD_BYTES:
        raise PayloadTooLarge(f"payload is {len(wire)} bytes, limit {MAX_PAYLOAD_BYTES}")
    return wire


def decode_payload(wire: bytes) -> SpectralPayload:
    """Exact inverse of :func:`encode_payload`, with schema validation."""
    if len(wire) > MAX_PAYLOAD_BYTES:
        raise PayloadTooLarge(f"payload is {len(wire)} bytes, limit {MAX_PAYLOAD_BYTES}")
    try:
        doc = json.loads(wire.decode("latin-1"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PayloadSchemaError(f"not latin-1 JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise PayloadSchemaError("payload JSON must be an object")
    missing = [f for f in _REQUIRED_FIELDS if f not in doc]
    if missing:
        raise PayloadSchemaError(f"missing fields: {missing}")
    if doc["version"] != PAYLOAD_VERSION:
        raise PayloadSchemaError(f"unsupported payload version {doc['version']!r}")
    if doc["raster_codec"] not in SUPPORTED_CODECS:
        raise PayloadSchemaError(f"unknown raster codec {doc['raster_codec']!r}")
    for name in ("sample_rate", "n_channels", "frame_size", "hop", "n_frames", "n_mels"):
        if not isinstance(doc[name], int) or isinstance(doc[name], bool):
            raise PayloadSchemaError(f"field {name!r} must be an integer")
    if doc["n_channels"] != 2:
        raise PayloadSchemaError(f"payloads carry 2 channels, got {doc['n_channels']}")
    try:
        image = doc["image"].encode("latin-1")
    except (AttributeError, UnicodeEncodeError) as exc:
        raise PayloadSchemaError(f"image field is not a latin-1 string: {exc}") from exc
    return SpectralPayload(
        device_id=doc["device_id"],
        timestamp_utc=doc["timestamp_utc"],
        sample_rate=doc["sample_rate"],
        frame_size=doc["frame_size"],
        hop=doc["hop"],
        n_frames=doc["n_frames"],
        n_mels=doc["n_mels"],
        image=image,
        raster_codec=doc["raster_codec"],
        n_channels=doc["n_channels"],
        version=doc["version"],
    )


def payload_from_spectrogram(
    spec: LogMelSpectrogram,
    device_id: str,
    timestamp_utc: str,
    raster_codec: str = DEFAULT_RASTER_CODEC,
) -> SpectralPayload:
    """Pack, compress and frame a spectrogram into a wire payload."""
    raster = pack_rgba(spec)
    image = compress_raster(raster, raster_codec)
    return SpectralPayload(
        device_id=device_id,
        timestamp_utc=timestamp_utc,
        sample_rate=spec.params.sample_rate,
        frame_size=spec.params.frame_size,
        hop=spec.params.hop,
        n_frames=spec.n_frames,
        n_mels=spec.n_mels,
        image=image,
        raster_codec=raster_codec,
    )


def spectrogram_from_payload(payload: SpectralPayload) -> LogMelSpectrogram:
    """Decompress and unpack a payload, checking raster dims against metadata."""
    raster = decompress_raster(payload.image, payload.raster_codec)
    if raster.width != payload.n_frames or raster.height != payload.n_mels:
        raise PayloadSchemaError(
            f"raster is {raster.width}x{raster.height}, metadata says "
            f"{payload.n_frames}x{payload.n_mels}"
        )
    return unpack_rgba(raster, payload.wire_params())


# --- egress-rate arithmetic -------------------------------------------------

REPRESENTATIONS = ("raw", "linear_spec", "mel_spec")


@dataclass(frozen=True)
class EgressRow:
    """One row of the uncompressed egress-rate table (printed precision)."""

    representation: str
    bit_depth: int
    value_rate_khz: float  # half-up, 2 decimals
    byte_rate_kb_s: float  # half-up, 2 decimals
    kb_per_30s: int


def _round_half_up(value: Fraction, decimals: int) -> float:
    quantum = Decimal(1).scaleb(-decimals)
    as_decimal = Decimal(value.numerator) / Decimal(value.denominator)
    return float(as_decimal.quantize(quantum, rounding=ROUND_HALF_UP))


def egress_rate(representation: str, bit_depth: int, params: SpectralParams, n_channels: int = 2) -> EgressRow:
    """Sustained uncompressed egress requirement for one representation.

    Value rates: raw = fs*C; linear = (L/2+1)*C*fs/R; mel = M*C*fs/R.
    Byte rate = values/s * depth/8 / 1024 kB/s; the 30 s column is the byte
    rate times 30 rounded to the nearest kB. All arithmetic is exact and only
    rounded (half-up) for presentation, matching the printed table.
    """
    fs = Fraction(params.sample_rate)
    if representation == "raw":
        values_per_s = fs * n_channels
    elif representation == "linear_spec":
        values_per_s = Fraction(params.n_bins * n_channels) * fs / params.hop
    elif representation == "mel_spec":
        values_per_s = Fraction(params.n_mels * n_channels) * fs / params.hop
    else:
        raise ValueError(f"representation must be one of {REPRESENTATIONS}, got {representation!r}")
    byte_rate = values_per_s * Fraction(bit_depth, 8) / 1024
    return EgressRow(
        representation=representation,
        bit_depth=bit_depth,
        value_rate_khz=_round_half_up(values_per_s / 1000, 2),
        byte_rate_kb_s=_round_half_up(byte_rate, 2),
        kb_per_30s=int(_round_half_up(byte_rate * 30, 0)),
    )


def egress_table(params: SpectralParams | None = None) -> list[EgressRow]:
    """The five printed rows: raw/16, linear/32, linear/16, mel/32, mel/16."""
    params = params or SpectralParams()
    return [
        egress_rate("raw", 16, params),
        egress_rate("linear_spec", 32, params),
        egress_rate("linear_spec", 16, params),
        egress_rate("mel_spec", 32, params),
        egress_rate("mel_spec", 16, params),
    ]


def format_egress_table(rows: list[EgressRow] | None = None) -> str:
    rows = rows if rows is not None else egress_table()
    lines = [f"{'representation':<14} {'bits':>4} {'kHz':>8} {'kB/s':>8} {'kB/30s':>8}"]
    for r in rows:
        lines.append(
            f"{r.representation:<14} {r.bit_depth:>4} {r.value_rate_khz:>8.2f} "
            f"{r.byte_rate_kb_s:>8.2f} {r.kb_per_30s:>8d}"
        )
    return "\n".join(lines)
