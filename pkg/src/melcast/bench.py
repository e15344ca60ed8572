"""Local throughput/latency benchmark for the pipeline stages.

Measures each stage in-process against a live local service: spectral
analysis, raster packing, compression, payload framing, HTTP ingest round
trip, inference, and downstream publish. Also reports payload sizes, the
measured compression ratio, and the uncompressed egress-rate table.
"""

from __future__ import annotations

import statistics
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import codec
from .demo import synthetic_masker_bank
from .edge import pink_noise_source
from .inference import InferenceService, make_http_server
from .jsonlog import JsonLinesLogger
from .spectral import SpectralParams, compute_log_mel
from .transport import Relay, RelayClient, http_ingest_client


@dataclass
class StageStats:
    samples_ms: list[float] = field(default_factory=list)

    def add(self, ms: float):
        self.samples_ms.append(ms)

    @property
    def mean_ms(self) -> float:
        return statistics.fmean(self.samples_ms) if self.samples_ms else 0.0

    @property
    def p95_ms(self) -> float:
        if not self.samples_ms:
            return 0.0
        return float(np.percentile(self.samples_ms, 95))

    @property
    def n(self) -> int:
        return len(self.samples_ms)


@dataclass
class BenchReport:
    runs: int
    raster_codec: str
    stages: dict[str, StageStats]
    payload_bytes: list[int]
    image_bytes: list[int]
    raw_raster_bytes: int
    rate_rows: list[codec.EgressRow]

    @property
    def compression_ratio(self) -> float:
        mean_image = statistics.fmean(self.image_bytes) if self.image_bytes else 0.0
        return self.raw_raster_bytes / mean_image if mean_image else 0.0

    def format(self) -> str:
        lines = [f"bench: {self.runs} runs, raster codec {self.raster_codec}"]
        lines.append(f"{'stage':<10} {'n':>4} {'mean ms':>10} {'p95 ms':>10}")
        for name, stats in self.stages.items():
            lines.append(f"{name:<10} {stats.n:>4} {stats.mean_ms:>10.3f} {stats.p95_ms:>10.3f}")
        if self.payload_bytes:
            lines.append(
                f"payload bytes: min={min(self.payload_bytes)} "
                f"mean={statistics.fmean(self.payload_bytes):.0f} max={max(self.payload_bytes)}"
            )
            lines.append(
                f"compressed image: mean={statistics.fmean(self.image_bytes):.0f} of "
                f"{self.raw_raster_bytes} raw raster bytes ({self.compression_ratio:.2f}x)"
            )
        lines.append("")
        lines.append("uncompressed egress rates:")
        lines.append(codec.format_egress_table(self.rate_rows))
        return "\n".join(lines)


def run_bench(
    runs: int = 20,
    raster_codec: str = codec.DEFAULT_RASTER_CODEC,
    seed: int = 0,
    bank_size: int = 8,
    params: SpectralParams | None = None,
    window_seconds: float = 30.0,
) -> BenchReport:
    """Benchmark every stage over a fixed-seed pink-noise window."""
    params = params or SpectralParams()
    stages = {
        name: StageStats()
        for name in ("spectral", "pack", "compress", "encode", "ingest", "inference", "publish")
    }
    payload_sizes: list[int] = []
    image_sizes: list[int] = []
    clip = pink_noise_source(window_seconds, params.sample_rate, seed=seed)
    service_log = JsonLinesLogger(stream=None)

    with tempfile.TemporaryDirectory(prefix="melcast-bench-") as tmp:
        bank_dir = Path(tmp) / "bank"
        synthetic_masker_bank(bank_dir, params, count=bank_size, seed=seed)
        relay = Relay(keepalive_s=5.0)
        relay.start()
        server = None
        try:
            publisher = RelayClient(relay.address)
            service = InferenceService(
                bank_dir=bank_dir,
                params=params,
                publisher=publisher.publish,
                seed_salt=seed,
                logger=service_log,
            )
            service.warm_up()
            server = make_http_server(service)
            threading.Thread(target=server.serve_forever, daemon=True).start()
            host, port = server.server_address[:2]
            url = f"http://{host}:{port}/v1/ingest"

            raw_raster_bytes = 0
            for run in range(runs):
                t0 = time.monotonic()
                spec = compute_log_mel(clip, params)
                stages["spectral"].add((time.monotonic() - t0) * 1000.0)

                t0 = time.monotonic()
                raster = codec.pack_rgba(spec)
                stages["pack"].add((time.monotonic() - t0) * 1000.0)
                raw_raster_bytes = len(raster.pixels)

                t0 = time.monotonic()
                image = codec.compress_raster(raster, raster_codec)
                stages["compress"].add((time.monotonic() - t0) * 1000.0)

                t0 = time.monotonic()
                payload = codec.SpectralPayload(
                    device_id="bench",
                    timestamp_utc=f"2026-01-01T00:{run:02d}:00Z",
                    sample_rate=params.sample_rate,
                    frame_size=params.frame_size,
                    hop=params.hop,
                    n_frames=spec.n_frames,
                    n_mels=spec.n_mels,
                    image=image,
                    raster_codec=raster_codec,
                )
                wire = codec.encode_payload(payload)
                stages["encode"].add((time.monotonic() - t0) * 1000.0)
                payload_sizes.append(len(wire))
                image_sizes.append(len(image))

                t0 = time.monotonic()
                result = http_ingest_client(url, wire)
                stages["ingest"].add((time.monotonic() - t0) * 1000.0)
                if not result.accepted:
                    raise RuntimeError(f"bench ingest rejected: status {result.status}")

            # the 202 flushes before the downstream send; wait for the last
            # publish record to land before reading the stage logs
            deadline = time.monotonic() + 5.0
            while service_log.count("prediction_published") < runs and time.monotonic() < deadline:
                time.sleep(0.01)
            for record in service_log.of("request_handled"):
                stages["inference"].add(record["decode_ms"] + record["score_ms"])
            for record in service_log.of("prediction_published"):
                stages["publish"].add(record["publish_ms"])
        finally:
            if server is not None:
                server.shutdown()
                server.server_close()
            relay.stop()

    return BenchReport(
        runs=runs,
        raster_codec=raster_codec,
        stages=stages,
        payload_bytes=payload_sizes,
        image_bytes=image_sizes,
        raw_raster_bytes=raw_raster_bytes,
        rate_rows=codec.egress_table(params),
    )
