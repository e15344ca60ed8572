"""Data acquisition unit: window an audio source, compress, ship upstream.

Audio sources are files or deterministic synthesizers standing in for a
microphone pair; both channels of a synthetic source carry the same signal,
the way two co-located capsules sample one acoustic field. Per-window
failures are logged and skipped; a snapshot of the soundscape is stale by the
time a long retry would succeed, so nothing is buffered for replay.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np

from . import codec
from .errors import InsufficientAudio
from .jsonlog import NULL_LOGGER, JsonLinesLogger
from .spectral import AudioClip, SpectralParams, compute_log_mel
from .transport import IngestResult, http_ingest_client

DEFAULT_WINDOW_SECONDS = 30.0


def silence_source(seconds: float, sample_rate: int = 44100) -> AudioClip:
    n = int(round(seconds * sample_rate))
    return AudioClip(np.zeros((2, n), dtype=np.float32), sample_rate)


def sine_source(
    seconds: float, sample_rate: int = 44100, freq_hz: float = 1000.0, amplitude: float = 0.9
) -> AudioClip:
    n = int(round(seconds * sample_rate))
    t = np.arange(n, dtype=np.float64) / sample_rate
    tone = (amplitude * np.sin(2.0 * np.pi * freq_hz * t)).astype(np.float32)
    return AudioClip(np.stack([tone, tone]), sample_rate)


def pink_noise_source(
    seconds: float, sample_rate: int = 44100, seed: int = 0, rms: float = 0.05
) -> AudioClip:
    """Deterministic 1/f noise via spectral shaping of seeded white noise."""
    n = int(round(seconds * sample_rate))
    rng = np.random.default_rng(seed)
    white = rng.standard_normal(n + 2)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(white.size, 1.0 / sample_rate)
    freqs[0] = freqs[1]  # keep DC finite
    shaped = np.fft.irfft(spectrum / np.sqrt(freqs))[:n]
    shaped *= rms / np.sqrt(np.mean(shaped**2))
    mono = shaped.astype(np.float32)
    return AudioClip(np.stack([mono, mono]), sample_rate)


def file_source(path: str | Path) -> AudioClip:
    return AudioClip.from_wav(path)


def make_source(source: dict, sample_rate: int = 44100) -> AudioClip:
    """Build a clip from a config table like {type = "pink", seconds = 90, seed = 7}."""
    kind = source.get("type", "file")
    if kind == "file":
        return file_source(source["path"])
    seconds = float(source.get("seconds", DEFAULT_WINDOW_SECONDS))
    if kind == "silence":
        return silence_source(seconds, sample_rate)
    if kind == "sine":
        return sine_source(
            seconds,
            sample_rate,
            freq_hz=float(source.get("freq_hz", 1000.0)),
            amplitude=float(source.get("amplitude", 0.9)),
        )
    if kind == "pink":
        return pink_noise_source(
            seconds,
            sample_rate,
            seed=int(source.get("seed", 0)),
            rms=float(source.get("rms", 0.05)),
        )
    raise ValueError(f"unknown source type {kind!r}")


@dataclass(frozen=True)
class EdgeConfig:
    """Static configuration of one acquisition agent."""

    device_id: str
    endpoint_url: str
    source: dict = field(default_factory=lambda: {"type": "silence", "seconds": 30})
    window_seconds: float = DEFAULT_WINDOW_SECONDS
    stride_seconds: float = DEFAULT_WINDOW_SECONDS
    raster_codec: str = codec.DEFAULT_RASTER_CODEC
    params: SpectralParams = field(default_factory=SpectralParams)
    start_timestamp: Optional[str] = None  # logical clock origin; None = wall clock
    pace: bool = False  # sleep to the stride grid (real-time emulation)
    payload_dir: Optional[Path] = None  # also save each encoded payload here

    def __post_init__(self):
        if not 0 < self.stride_seconds <= self.window_seconds:
            raise ValueError("require 0 < stride_seconds <= window_seconds")
        if self.window_seconds * self.params.sample_rate < self.params.frame_size:
            raise ValueError("window shorter than one analysis frame")

    @classmethod
    def from_toml(cls, path: str | Path) -> "EdgeConfig":
        import tomli

        with open(path, "rb") as fh:
            doc = tomli.load(fh)
        spectral_table = doc.pop("spectral", {})
        params = SpectralParams(**spectral_table) if spectral_table else SpectralParams()
        payload_dir = doc.pop("payload_dir", None)
        return cls(
            device_id=doc["device_id"],
            endpoint_url=doc["endpoint_url"],
            source=doc.get("source", {"type": "silence", "seconds": 30}),
            window_seconds=float(doc.get("window_seconds", DEFAULT_WINDOW_SECONDS)),
            stride_seconds=float(doc.get("stride_seconds", doc.get("window_seconds", DEFAULT_WINDOW_SECONDS))),
            raster_codec=doc.get("raster_codec", codec.DEFAULT_RASTER_CODEC),
            params=params,
            start_timestamp=doc.get("start_timestamp"),
            pace=bool(doc.get("pace", False)),
            payload_dir=Path(payload_dir) if payload_dir else None,
        )


def window_stream(clip: AudioClip, window_seconds: float, stride_seconds: float) -> Iterator[AudioClip]:
    """Consecutive analysis windows; a final partial window is discarded."""
    window_n = int(round(window_seconds * clip.sample_rate))
    stride_n = int(round(stride_seconds * clip.sample_rate))
    if clip.n_samples < window_n:
        raise InsufficientAudio(
            f"source has {clip.n_samples} samples, one window needs {window_n}"
        )
    for start in range(0, clip.n_samples - window_n + 1, stride_n):
        yield AudioClip(clip.samples[:, start : start + window_n], clip.sample_rate)


def _iso_utc(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class EdgeReport:
    """What one agent run did: one entry per window attempted."""

    sent: int = 0
    dropped: int = 0
    results: list[IngestResult] = field(default_factory=list)


def run_edge(
    config: EdgeConfig,
    clip: Optional[AudioClip] = None,
    logger: JsonLinesLogger = NULL_LOGGER,
    ingest: Callable[..., IngestResult] = http_ingest_client,
    sleep: Callable[[float], None] = time.sleep,
) -> EdgeReport:
    """Run the acquisition loop over a finite source.

    Per window: log-mel analysis, raster packing + compression, latin-1
    payload framing, HTTP POST. Emits one structured log record per window
    and never aborts on a single bad window.
    """
    clip = clip if clip is not None else make_source(config.source, config.params.sample_rate)
    if config.payload_dir:
        config.payload_dir.mkdir(parents=True, exist_ok=True)
    origin = (
        datetime.strptime(config.start_timestamp, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
        if config.start_timestamp
        else None
    )
    report = EdgeReport()
    loop_start = time.monotonic()

    for index, window in enumerate(window_stream(clip, config.window_seconds, config.stride_seconds)):
        if config.pace:
            due = index * config.stride_seconds
            lag = due - (time.monotonic() - loop_start)
            if lag > 0:
                sleep(lag)
        if origin is not None:
            stamp = _iso_utc(origin + timedelta(seconds=index * config.stride_seconds))
        else:
            stamp = _iso_utc(datetime.now(timezone.utc))
        try:
            spec = compute_log_mel(window, config.params)
            payload = codec.payload_from_spectrogram(
                spec, config.device_id, stamp, config.raster_codec
            )
            wire = codec.encode_payload(payload)
        except Exception as exc:
            report.dropped += 1
            logger.log(
                "window_dropped",
                device_id=config.device_id,
                window_index=index,
                timestamp_utc=stamp,
                reason=f"{type(exc).__name__}: {exc}",
            )
            continue
        if config.payload_dir:
            (config.payload_dir / f"payload_{index:04d}.bin").write_bytes(wire)
        t0 = time.monotonic()
        result = ingest(config.endpoint_url, wire)
        latency_ms = (time.monotonic() - t0) * 1000.0
        report.results.append(result)
        if result.accepted:
            report.sent += 1
            logger.log(
                "window_sent",
                device_id=config.device_id,
                window_index=index,
                timestamp_utc=stamp,
                payload_bytes=len(wire),
                status=result.status,
                latency_ms=round(latency_ms, 3),
            )
        else:
            report.dropped += 1
            logger.log(
                "window_dropped",
                device_id=config.device_id,
                window_index=index,
                timestamp_utc=stamp,
                payload_bytes=len(wire),
                status=result.status,
                reason=result.error or f"http status {result.status}",
                attempts=result.attempts,
            )
    return report

