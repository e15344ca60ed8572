"""End-to-end demo: relay, inference service, edge agent and playback in one process.

Runs the full loop over synthetic audio and leaves replayable artifacts
behind: the encoded payloads, the raw prediction trace (JSON lines exactly as
published), and a WAV rendered offline from that trace. With a fixed seed the
trace and the WAV are byte-stable across runs: payload timestamps come from a
logical clock and the rendered events use those timestamps, never arrival
wall-clock times.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
import numpy as np

from . import codec
from .edge import EdgeConfig, run_edge, make_source
from .errors import DemoStageError, MelcastError, TransportError
from .inference import InferenceService, make_http_server, write_masker_bank, PREDICTIONS_TOPIC
from .jsonlog import NULL_LOGGER, JsonLinesLogger
from .playback import MaskerStore, SwitchPolicy, render_trace
from .inference import PredictionSet
from .spectral import AudioClip, SpectralParams
from .transport import Relay, RelayClient


def synthetic_masker_bank(
    directory: str | Path,
    params: SpectralParams,
    count: int = 6,
    seed: int = 0,
    seconds: float = 2.0,
    raster_codec: str = codec.DEFAULT_RASTER_CODEC,
) -> Path:
    """Write a bank of deterministic band-limited noise maskers.

    Each masker is seeded noise confined to its own frequency band, a crude
    family of water/wind/rustle-like textures that is cheap to generate and
    loop-friendly enough for a demo.
    """
    maskers = []
    n = int(round(seconds * params.sample_rate))
    centers = np.geomspace(150.0, 6000.0, max(count, 1))
    for i in range(count):
        rng = np.random.default_rng(seed * 100003 + i)
        white = rng.standard_normal(n)
        spectrum = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n, 1.0 / params.sample_rate)
        center = centers[i]
        band = np.exp(-0.5 * ((np.log(np.maximum(freqs, 1.0)) - np.log(center)) / 0.5) ** 2)
        shaped = np.fft.irfft(spectrum * band, n)
        peak = np.max(np.abs(shaped))
        if peak > 0:
            shaped = shaped / peak * 0.5
        mono = shaped.astype(np.float32)
        clip = AudioClip(np.stack([mono, mono]), params.sample_rate)
        maskers.append((f"masker_{i:03d}", clip))
    return write_masker_bank(directory, maskers, params, raster_codec)


@dataclass(frozen=True)
class DemoScenario:
    """A fully seeded end-to-end run; the seed determines every output byte."""

    seed: int = 7
    duration_s: float = 90.0
    window_seconds: float = 30.0
    stride_seconds: float = 30.0
    source_type: str = "pink"
    masker_count: int = 6
    masker_seconds: float = 2.0
    raster_codec: str = codec.DEFAULT_RASTER_CODEC
    pace: bool = False
    device_id: str = "edge-0"
    start_timestamp: str = "2026-01-01T00:00:00Z"
    params: SpectralParams = field(default_factory=SpectralParams)

    def expected_windows(self) -> int:
        window_n = int(round(self.window_seconds * self.params.sample_rate))
        stride_n = int(round(self.stride_seconds * self.params.sample_rate))
        total_n = int(round(self.duration_s * self.params.sample_rate))
        if total_n < window_n:
            return 0
        return (total_n - window_n) // stride_n + 1

    def source_spec(self) -> dict:
        spec = {"type": self.source_type, "seconds": self.duration_s}
        if self.source_type == "pink":
            spec["seed"] = self.seed
        return spec


@dataclass
class DemoArtifacts:
    out_dir: Path
    bank_dir: Path
    payload_dir: Path
    trace_path: Path
    wav_path: Path
    payload_count: int = 0
    prediction_count: int = 0


class _TraceRecorder:
    """Subscribes to the predictions topic and records raw published lines."""

    def __init__(self, client: RelayClient, topic: str):
        self.client = client
        self.lines: list[bytes] = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        client.subscribe(topic)
        self._thread = threading.Thread(target=self._pump, daemon=True)
        self._thread.start()

    def _pump(self):
        while not self._stop.is_set():
            try:
                message = self.client.recv(timeout=0.1)
            except TransportError:
                return
            if message is not None:
                with self._lock:
                    self.lines.append(message[1])

    def wait_for(self, count: int, timeout_s: float) -> list[bytes]:
        deadline = time.monotonic() + timeout_s
        while time.monotonic() < deadline:
            with self._lock:
                if len(self.lines) >= count:
                    break
            time.sleep(0.02)
        self._stop.set()
        self.client.close()
        with self._lock:
            return list(self.lines)


def _event_time(prediction: PredictionSet, origin: datetime, window_seconds: float) -> float:
    stamp = datetime.strptime(prediction.timestamp_utc, "%Y-%m-%dT%H:%M:%SZ").replace(
        tzinfo=timezone.utc
    )
    # A window stamped t covers [t, t+window); its prediction lands at the end.
    return (stamp - origin).total_seconds() + window_seconds


def run_demo(
    scenario: DemoScenario,
    out_dir: str | Path,
    logger: JsonLinesLogger = NULL_LOGGER,
) -> DemoArtifacts:
    """Run the full pipeline locally and write replayable artifacts.

    Raises DemoStageError naming the failing stage; on success at least one
    prediction was received and a nonempty WAV was rendered.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = DemoArtifacts(
        out_dir=out_dir,
        bank_dir=out_dir / "bank",
        payload_dir=out_dir / "payloads",
        trace_path=out_dir / "predictions.jsonl",
        wav_path=out_dir / "rendered.wav",
    )

    try:
        synthetic_masker_bank(
            artifacts.bank_dir,
            scenario.params,
            count=scenario.masker_count,
            seed=scenario.seed,
            seconds=scenario.masker_seconds,
            raster_codec=scenario.raster_codec,
        )
    except (MelcastError, OSError, ValueError) as exc:
        raise DemoStageError("bank", str(exc)) from exc

    try:
        relay = Relay(keepalive_s=5.0)
        relay.start()
    except OSError as exc:
        raise DemoStageError("relay", str(exc)) from exc

    server = None
    try:
        try:
            publisher = RelayClient(relay.address)
            service = InferenceService(
                bank_dir=artifacts.bank_dir,
                params=scenario.params,
                publisher=publisher.publish,
                topic=PREDICTIONS_TOPIC,
                seed_salt=scenario.seed,
                logger=logger,
            )
            service.warm_up()
            server = make_http_server(service)
            threading.Thread(target=server.serve_forever, daemon=True).start()
        except MelcastError as exc:
            raise DemoStageError("inference", str(exc)) from exc

        try:
            recorder = _TraceRecorder(RelayClient(relay.address), PREDICTIONS_TOPIC)
        except TransportError as exc:
            raise DemoStageError("trace", str(exc)) from exc

        host, port = server.server_address[:2]
        config = EdgeConfig(
            device_id=scenario.device_id,
            endpoint_url=f"http://{host}:{port}/v1/ingest",
            source=scenario.source_spec(),
            window_seconds=scenario.window_seconds,
            stride_seconds=scenario.stride_seconds,
            raster_codec=scenario.raster_codec,
            params=scenario.params,
            start_timestamp=scenario.start_timestamp,
            pace=scenario.pace,
            payload_dir=artifacts.payload_dir,
        )
        try:
            clip = make_source(config.source, scenario.params.sample_rate)
            report = run_edge(config, clip=clip, logger=logger)
        except MelcastError as exc:
            raise DemoStageError("edge", str(exc)) from exc
        artifacts.payload_count = report.sent
        if report.sent == 0:
            raise DemoStageError("edge", "no window was accepted upstream")

        lines = recorder.wait_for(report.sent, timeout_s=10.0)
        if not lines:
            raise DemoStageError("trace", "no prediction arrived on the downstream topic")
        artifacts.prediction_count = len(lines)
        with open(artifacts.trace_path, "wb") as fh:
            for line in lines:
                fh.write(line + b"\n")

        try:
            origin = datetime.strptime(scenario.start_timestamp, "%Y-%m-%dT%H:%M:%SZ").replace(
                tzinfo=timezone.utc
            )
            events = []
            for line in lines:
                prediction = PredictionSet.from_json_bytes(line)
                events.append((_event_time(prediction, origin, scenario.window_seconds), prediction))
            store = MaskerStore(artifacts.bank_dir, scenario.params.sample_rate)
            audio, _ = render_trace(
                events,
                store,
                SwitchPolicy(),
                duration_s=scenario.duration_s,
                sample_rate=scenario.params.sample_rate,
                logger=logger,
            )
            if audio.size == 0:
                raise DemoStageError("render", "rendered stream is empty")
            from .audio_io import write_wav

            write_wav(artifacts.wav_path, audio, scenario.params.sample_rate)
        except (MelcastError, ValueError, KeyError) as exc:
            raise DemoStageError("render", str(exc)) from exc

        logger.log(
            "demo_completed",
            payloads=artifacts.payload_count,
            predictions=artifacts.prediction_count,
            wav=str(artifacts.wav_path),
        )
        return artifacts
    finally:
        if server is not None:
            server.shutdown()
            server.server_close()
        relay.stop()
