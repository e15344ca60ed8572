"""Masker-gain inference service.

Stateless request handling over an immutable masker bank: decode the uplink
payload, pair every masker with sampled gains, score each pair with a
pluggable pleasantness predictor, keep the best five, publish downstream.
The bank loads exactly once per service lifetime (the cold-start phase);
after that, handler output depends only on (payload, bank, seed).

Gains are linear amplitude multipliers whose natural logs are drawn from
Normal(-2.0, 1.5); the per-request RNG is seeded from a stable hash of the
request identity so identical requests yield identical predictions.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from math import exp
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import codec
from .errors import BankLoadError, MelcastError, ParamMismatch, PayloadSchemaError, PayloadTooLarge
from .jsonlog import NULL_LOGGER, JsonLinesLogger
from .spectral import AudioClip, LogMelSpectrogram, SpectralParams, compute_log_mel

GAIN_LOG_MEAN = -2.0
GAIN_LOG_STD = 1.5
GAINS_PER_MASKER = 5
TOP_K = 5

BANK_MANIFEST = "manifest.jsonl"
PREDICTIONS_TOPIC = "site0/playback/predictions"


@dataclass(frozen=True)
class GainSample:
    """Linear amplitude multiplier and its natural log."""

    gain: float
    log_gain: float

    @classmethod
    def from_log(cls, log_gain: float) -> "GainSample":
        return cls(gain=exp(log_gain), log_gain=log_gain)


@dataclass(frozen=True)
class PleasantnessDistribution:
    mean: float
    log_std: float


@dataclass(frozen=True)
class MaskerRecord:
    masker_id: str
    spectrogram: LogMelSpectrogram
    audio_path: Path


@dataclass(frozen=True)
class ScoredPair:
    masker_id: str
    gain: float
    dist: PleasantnessDistribution


@dataclass(frozen=True)
class RankedPair:
    masker_id: str
    gain: float
    mean: float
    log_std: float


@dataclass(frozen=True)
class PredictionSet:
    """Downstream wire object: the best masker-gain pairs for one request."""

    request_id: str
    device_id: str
    timestamp_utc: str
    ranked: tuple[RankedPair, ...]

    def to_json_bytes(self) -> bytes:
        doc = {
            "request_id": self.request_id,
            "device_id": self.device_id,
            "timestamp_utc": self.timestamp_utc,
            "ranked": [
                {"masker_id": p.masker_id, "gain": p.gain, "mean": p.mean, "log_std": p.log_std}
                for p in self.ranked
            ],
        }
        return json.dumps(doc, ensure_ascii=False).encode("utf-8")

    @classmethod
    def from_json_bytes(cls, data: bytes) -> "PredictionSet":
        doc = json.loads(data.decode("utf-8"))
        ranked = tuple(
            RankedPair(p["masker_id"], float(p["gain"]), float(p["mean"]), float(p["log_std"]))
            for p in doc["ranked"]
        )
        return cls(doc["request_id"], doc["device_id"], doc["timestamp_utc"], ranked)


@dataclass(frozen=True)
class MaskerBank:
    records: tuple[MaskerRecord, ...]
    load_duration_s: float = 0.0

    def __iter__(self):
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def get(self, masker_id: str) -> Optional[MaskerRecord]:
        for record in self.records:
            if record.masker_id == masker_id:
                return record
        return None


def sample_gains(
    rng: np.random.Generator,
    k: int = GAINS_PER_MASKER,
    mu: float = GAIN_LOG_MEAN,
    sigma: float = GAIN_LOG_STD,
) -> list[GainSample]:
    """Draw k gains whose logs are i.i.d. Normal(mu, sigma)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return [GainSample.from_log(float(lg)) for lg in rng.normal(mu, sigma, size=k)]


def baseline_predict(
    soundscape: LogMelSpectrogram, masker: LogMelSpectrogram, log_gain: float
) -> PleasantnessDistribution:
    """Deterministic spectral-match predictor.

    Averages each spectrogram over channels and time, shifts the masker
    profile by the log gain, and scores minus the mean absolute mismatch per
    mel bin; a perfect match scores 0, the maximum. The log-std is constant.
    Any predictor with this signature, including a learned one, can replace it.
    """
    if soundscape.n_mels != masker.n_mels:
        raise ParamMismatch(
            f"soundscape has {soundscape.n_mels} mel bins, masker has {masker.n_mels}"
        )
    scape = soundscape.values.astype(np.float64).mean(axis=(0, 1))
    mask = masker.values.astype(np.float64).mean(axis=(0, 1))
    mean = -float(np.mean(np.abs(scape - (mask + log_gain))))
    return PleasantnessDistribution(mean=mean, log_std=-1.0)


Predictor = Callable[[LogMelSpectrogram, LogMelSpectrogram, float], PleasantnessDistribution]


def score_candidates(
    soundscape: LogMelSpectrogram,
    bank: Iterable[MaskerRecord],
    rng: np.random.Generator,
    gains_per_masker: int = GAINS_PER_MASKER,
    predictor: Predictor = baseline_predict,
) -> list[ScoredPair]:
    """Score every (masker, gain) pair; gains are drawn per masker in bank order."""
    scored: list[ScoredPair] = []
    for record in bank:
        for sample in sample_gains(rng, gains_per_masker):
            dist = predictor(soundscape, record.spectrogram, sample.log_gain)
            scored.append(ScoredPair(record.masker_id, sample.gain, dist))
    if not scored:
        raise ValueError("bank is empty")
    return scored


def select_top_k(scored: Sequence[ScoredPair], k: int = TOP_K) -> list[RankedPair]:
    """The k pairs with highest mean; ties break by masker_id, then gain.

    Duplicate masker ids may appear: pairs, not maskers, compete.
    """
    ordered = sorted(scored, key=lambda p: (-p.dist.mean, p.masker_id, p.gain))
    return [
        RankedPair(p.masker_id, p.gain, p.dist.mean, p.dist.log_std) for p in ordered[:k]
    ]


# --- masker bank on disk ------------------------------------------------------


def write_masker_bank(
    directory: str | Path,
    maskers: Iterable[tuple[str, AudioClip]],
    params: SpectralParams,
    raster_codec: str = codec.DEFAULT_RASTER_CODEC,
) -> Path:
    """Precompute and store spectrograms + audio + manifest for a bank.

    Spectrogram files reuse the wire payload format, so loading a bank
    exercises the same decode path as an uplink request.
    """
    from .audio_io import write_wav

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest_path = directory / BANK_MANIFEST
    with open(manifest_path, "w", encoding="utf-8") as manifest:
        for masker_id, clip in maskers:
            spec = compute_log_mel(clip, params)
            payload = codec.payload_from_spectrogram(
                spec, device_id=masker_id, timestamp_utc="1970-01-01T00:00:00Z", raster_codec=raster_codec
            )
            spec_name = f"{masker_id}.melspec.json"
            audio_name = f"{masker_id}.wav"
            (directory / spec_name).write_bytes(codec.encode_payload(payload))
            write_wav(directory / audio_name, clip.samples, clip.sample_rate)
            manifest.write(
                json.dumps(
                    {"masker_id": masker_id, "spectrogram_file": spec_name, "audio_file": audio_name}
                )
                + "\n"
            )
    return manifest_path


def load_masker_bank(directory: str | Path, params: SpectralParams) -> MaskerBank:
    """Load and validate every manifest record; raises BankLoadError naming
    the first offending masker."""
    t0 = time.monotonic()
    directory = Path(directory)
    manifest_path = directory / BANK_MANIFEST
    if not manifest_path.is_file():
        raise BankLoadError("manifest", f"no {BANK_MANIFEST} in {directory}")
    records: list[MaskerRecord] = []
    seen: set[str] = set()
    with open(manifest_path, "r", encoding="utf-8") as manifest:
        for line in manifest:
            line = line.strip()
            if not line:
                continue
            try:
                entry = json.loads(line)
                masker_id = entry["masker_id"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise BankLoadError("manifest", f"bad manifest line: {exc}") from exc
            if masker_id in seen:
                raise BankLoadError(masker_id, "duplicate masker_id")
            seen.add(masker_id)
            spec_path = directory / entry.get("spectrogram_file", "")
            audio_path = directory / entry.get("audio_file", "")
            if not spec_path.is_file():
                raise BankLoadError(masker_id, f"missing spectrogram file {spec_path.name}")
            if not audio_path.is_file():
                raise BankLoadError(masker_id, f"missing audio file {audio_path.name}")
            try:
                payload = codec.decode_payload(spec_path.read_bytes())
                spectrogram = codec.spectrogram_from_payload(payload)
            except MelcastError as exc:
                raise BankLoadError(masker_id, f"unreadable spectrogram: {exc}") from exc
            if not spectrogram.params.matches_wire(params):
                raise BankLoadError(
                    masker_id,
                    f"params {spectrogram.params.frame_size}/{spectrogram.params.hop}/"
                    f"{spectrogram.params.n_mels}@{spectrogram.params.sample_rate} do not match "
                    f"service {params.frame_size}/{params.hop}/{params.n_mels}@{params.sample_rate}",
                )
            records.append(MaskerRecord(masker_id, spectrogram, audio_path))
    if not records:
        raise BankLoadError("manifest", "bank manifest lists no maskers")
    return MaskerBank(records=tuple(records), load_duration_s=time.monotonic() - t0)


# --- the service --------------------------------------------------------------


def request_seed(device_id: str, timestamp_utc: str, salt: int = 0) -> int:
    """Stable request-identity hash used to seed the per-request RNG."""
    digest = hashlib.sha256(f"{salt}|{device_id}|{timestamp_utc}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class InferenceService:
    """Warm-bank request handler plus downstream publisher.

    The bank is immutable after :meth:`warm_up` and shared read-only across
    handlers; the only mutable shared state is the publisher, guarded by a
    lock. ``publisher`` is any ``(topic, bytes) -> None`` callable, typically
    ``RelayClient.publish``.
    """

    def __init__(
        self,
        bank_dir: str | Path | None = None,
        params: SpectralParams | None = None,
        publisher: Optional[Callable[[str, bytes], None]] = None,
        topic: str = PREDICTIONS_TOPIC,
        seed_salt: int = 0,
        gains_per_masker: int = GAINS_PER_MASKER,
        top_k: int = TOP_K,
        predictor: Predictor = baseline_predict,
        logger: JsonLinesLogger = NULL_LOGGER,
        bank: Optional[MaskerBank] = None,
    ):
        self.bank_dir = Path(bank_dir) if bank_dir else None
        self.params = params or SpectralParams()
        self.publisher = publisher
        self.topic = topic
        self.seed_salt = seed_salt
        self.gains_per_masker = gains_per_masker
        self.top_k = top_k
        self.predictor = predictor
        self.logger = logger
        self.bank = bank
        self._warm = bank is not None
        self._warm_lock = threading.Lock()
        self._publish_lock = threading.Lock()

    def warm_up(self) -> MaskerBank:
        """Cold-start phase: load the bank exactly once per service lifetime."""
        with self._warm_lock:
            if not self._warm:
                self.bank = load_masker_bank(self.bank_dir, self.params)
                self._warm = True
                self.logger.log(
                    "bank_loaded",
                    count=len(self.bank),
                    duration_ms=round(self.bank.load_duration_s * 1000.0, 3),
                )
        return self.bank

    @property
    def warm(self) -> bool:
        return self._warm

    def evaluate(self, body: bytes) -> tuple[int, Optional[bytes]]:
        """Pure inference step: (HTTP status, serialized PredictionSet or None).

        Does not publish; callers decide when, so an HTTP front end can flush
        its 202 before the downstream send.
        """
        if len(body) > codec.MAX_PAYLOAD_BYTES:
            return 413, None
        if not self._warm or not self.bank or len(self.bank) == 0:
            return 503, None
        t0 = time.monotonic()
        try:
            payload = codec.decode_payload(body)
            soundscape = codec.spectrogram_from_payload(payload)
        except (PayloadSchemaError, PayloadTooLarge, MelcastError):
            return 400, None
        decode_ms = (time.monotonic() - t0) * 1000.0

        t0 = time.monotonic()
        seed = request_seed(payload.device_id, payload.timestamp_utc, self.seed_salt)
        rng = np.random.default_rng(seed)
        try:
            scored = score_candidates(
                soundscape, self.bank, rng, self.gains_per_masker, self.predictor
            )
        except ParamMismatch:
            return 400, None
        ranked = select_top_k(scored, self.top_k)
        score_ms = (time.monotonic() - t0) * 1000.0

        prediction = PredictionSet(
            request_id=hashlib.sha256(
                f"req|{self.seed_salt}|{payload.device_id}|{payload.timestamp_utc}".encode()
            ).hexdigest()[:16],
            device_id=payload.device_id,
            timestamp_utc=payload.timestamp_utc,
            ranked=tuple(ranked),
        )
        wire = prediction.to_json_bytes()
        self.logger.log(
            "request_handled",
            device_id=payload.device_id,
            timestamp_utc=payload.timestamp_utc,
            candidates=len(scored),
            decode_ms=round(decode_ms, 3),
            score_ms=round(score_ms, 3),
        )
        return 202, wire

    def publish_prediction(self, wire: bytes) -> float:
        """Send one PredictionSet downstream; returns the send duration in ms."""
        t0 = time.monotonic()
        if self.publisher is not None:
            with self._publish_lock:
                self.publisher(self.topic, wire)
        publish_ms = (time.monotonic() - t0) * 1000.0
        self.logger.log("prediction_published", topic=self.topic, publish_ms=round(publish_ms, 3))
        return publish_ms

    def handle_request(self, body: bytes) -> tuple[int, Optional[bytes]]:
        """Full request path: evaluate, then publish on success."""
        status, wire = self.evaluate(body)
        if status == 202 and wire is not None:
            self.publish_prediction(wire)
        return status, wire


def make_http_server(service: InferenceService, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """HTTP front end: POST /v1/ingest, GET /v1/health, GET /v1/bank."""

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet; the service has its own log
            pass

        def _reply(self, status: int, doc: dict):
            body = json.dumps(doc).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            if self.path == "/v1/health":
                self._reply(
                    200,
                    {
                        "status": "ok",
                        "warm": service.warm,
                        "bank_size": len(service.bank) if service.bank else 0,
                    },
                )
            elif self.path == "/v1/bank":
                ids = [r.masker_id for r in service.bank] if service.bank else []
                self._reply(200, {"count": len(ids), "masker_ids": ids})
            else:
                self._reply(404, {"error": "not found"})

        def do_POST(self):
            if self.path != "/v1/ingest":
                self._reply(404, {"error": "not found"})
                return
            length = int(self.headers.get("Content-Length", 0))
            if length > codec.MAX_PAYLOAD_BYTES:
                # body stays unread; drop the connection so keep-alive cannot
                # misparse the leftover bytes as a next request
                self.close_connection = True
                self._reply(413, {"error": "payload exceeds 131072 bytes"})
                return
            body = self.rfile.read(length)
            status, wire = service.evaluate(body)
            self._reply(status, {"accepted": status == 202})
            # Downstream publish happens after the 202 is on the wire.
            if status == 202 and wire is not None:
                self.wfile.flush()
                service.publish_prediction(wire)

    server = ThreadingHTTPServer((host, port), Handler)
    server.daemon_threads = True
    return server
