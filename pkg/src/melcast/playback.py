"""Playback unit: consume predictions, switch maskers, render a continuous stream.

A switch happens only when the top-ranked pair names a different masker or a
substantially different gain (> threshold in dB); transitions use an
equal-power sinusoidal crossfade and a masker that runs out with no pending
switch loops seamlessly from sample 0. A prediction arriving during an active
fade is held (freshest wins) and evaluated once the fade completes, so
transitions never chain mid-flight.
"""

from __future__ import annotations

import json
import math
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .audio_io import read_wav, write_wav
from .errors import ParamMismatch, TransportError
from .inference import BANK_MANIFEST, PredictionSet
from .jsonlog import NULL_LOGGER, JsonLinesLogger
from .transport import Address, connect_with_backoff


@dataclass(frozen=True)
class SwitchPolicy:
    gain_threshold_db: float = 3.0
    crossfade_seconds: float = 2.0

    def __post_init__(self):
        if self.gain_threshold_db < 0:
            raise ValueError("gain_threshold_db must be >= 0")
        if self.crossfade_seconds <= 0:
            raise ValueError("crossfade_seconds must be positive")

    @classmethod
    def from_toml(cls, path: str | Path) -> "SwitchPolicy":
        import tomli

        with open(path, "rb") as fh:
            doc = tomli.load(fh)
        return cls(
            gain_threshold_db=float(doc.get("gain_threshold_db", 3.0)),
            crossfade_seconds=float(doc.get("crossfade_seconds", 2.0)),
        )


@dataclass(frozen=True)
class FadeStatus:
    from_id: str
    to_id: str
    progress: float  # in [0, 1]


@dataclass(frozen=True)
class PlaybackState:
    current_masker_id: Optional[str] = None
    current_gain: float = 0.0
    position: int = 0
    fade: Optional[FadeStatus] = None


def should_switch(state: PlaybackState, masker_id: str, gain: float, policy: SwitchPolicy) -> bool:
    """True when the incoming top pair warrants a masker change."""
    if gain <= 0:
        raise ValueError("gain must be positive")
    if state.current_masker_id is None:
        return True
    if masker_id != state.current_masker_id:
        return True
    level_change_db = abs(20.0 * math.log10(gain / state.current_gain))
    return level_change_db > policy.gain_threshold_db


def crossfade_gains(progress: float) -> tuple[float, float]:
    """Equal-power fade law: (out, in) = (cos, sin)(progress * pi/2)."""
    if not 0.0 <= progress <= 1.0:
        raise ValueError("progress must be in [0, 1]")
    angle = progress * math.pi / 2.0
    return math.cos(angle), math.sin(angle)


class MaskerStore:
    """Resolves masker ids to loopable mono float32 audio.

    Reads a bank directory (manifest.jsonl mapping ids to audio files) or a
    plain directory of ``<masker_id>.wav`` files. Multichannel files collapse
    to mono by channel average; every output speaker carries one signal.
    """

    def __init__(self, directory: str | Path, sample_rate: int = 44100):
        self.directory = Path(directory)
        self.sample_rate = sample_rate
        self._paths: dict[str, Path] = {}
        self._cache: dict[str, np.ndarray] = {}
        manifest = self.directory / BANK_MANIFEST
        if manifest.is_file():
            with open(manifest, "r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        entry = json.loads(line)
                        self._paths[entry["masker_id"]] = self.directory / entry["audio_file"]

    def masker_ids(self) -> list[str]:
        ids = set(self._paths)
        ids.update(p.stem for p in self.directory.glob("*.wav"))
        return sorted(ids)

    def resolve(self, masker_id: str) -> Optional[np.ndarray]:
        if masker_id in self._cache:
            return self._cache[masker_id]
        path = self._paths.get(masker_id, self.directory / f"{masker_id}.wav")
        if not path.is_file():
            return None
        samples, rate = read_wav(path)
        if rate != self.sample_rate:
            raise ParamMismatch(f"masker {masker_id!r} is {rate} Hz, store expects {self.sample_rate}")
        mono = samples.mean(axis=0).astype(np.float32)
        if mono.size == 0:
            return None
        self._cache[masker_id] = mono
        return mono


@dataclass
class _Voice:
    masker_id: str
    audio: np.ndarray
    gain: float
    position: int = 0

    def take(self, n: int) -> np.ndarray:
        idx = (self.position + np.arange(n)) % self.audio.size
        self.position = int((self.position + n) % self.audio.size)
        return self.audio[idx]


@dataclass
class _Fade:
    old: _Voice
    new: _Voice
    length: int
    done: int = 0


@dataclass
class FadeCapture:
    """Per-sample fade gains, recorded when capture is enabled."""

    start_sample: int
    out_gains: list[np.ndarray] = field(default_factory=list)
    in_gains: list[np.ndarray] = field(default_factory=list)

    def out_array(self) -> np.ndarray:
        return np.concatenate(self.out_gains) if self.out_gains else np.empty(0)

    def in_array(self) -> np.ndarray:
        return np.concatenate(self.in_gains) if self.in_gains else np.empty(0)


class PlaybackEngine:
    """Sample-accurate state machine driving the masker stream.

    Deterministic: a fixed prediction trace and masker store always render
    bit-identical output.
    """

    def __init__(
        self,
        store: MaskerStore,
        policy: SwitchPolicy | None = None,
        sample_rate: int = 44100,
        capture_fades: bool = False,
        logger: JsonLinesLogger = NULL_LOGGER,
    ):
        self.store = store
        self.policy = policy or SwitchPolicy()
        self.sample_rate = sample_rate
        self.logger = logger
        self._active: Optional[_Voice] = None
        self._fade: Optional[_Fade] = None
        self._pending: Optional[tuple[str, float]] = None
        self._rendered = 0
        self.fades: list[FadeCapture] = []
        self._capture = capture_fades
        self._capturing: Optional[FadeCapture] = None

    @property
    def samples_rendered(self) -> int:
        return self._rendered

    @property
    def state(self) -> PlaybackState:
        if self._fade is not None:
            progress = self._fade.done / max(self._fade.length - 1, 1)
            return PlaybackState(
                current_masker_id=self._fade.old.masker_id,
                current_gain=self._fade.old.gain,
                position=self._fade.old.position,
                fade=FadeStatus(self._fade.old.masker_id, self._fade.new.masker_id, min(progress, 1.0)),
            )
        if self._active is not None:
            return PlaybackState(
                current_masker_id=self._active.masker_id,
                current_gain=self._active.gain,
                position=self._active.position,
            )
        return PlaybackState()

    def offer(self, prediction: PredictionSet):
        """Feed one PredictionSet; only the top-ranked pair drives playback."""
        if not prediction.ranked:
            self.logger.log("prediction_ignored", reason="empty ranking")
            return
        top = prediction.ranked[0]
        audio = self.store.resolve(top.masker_id)
        if audio is None:
            self.logger.log("prediction_ignored", reason="unknown masker", masker_id=top.masker_id)
            return
        if self._fade is not None:
            # Complete the running fade first; only the freshest request survives.
            self._pending = (top.masker_id, top.gain)
            return
        self._apply(top.masker_id, top.gain, audio)

    def _apply(self, masker_id: str, gain: float, audio: np.ndarray):
        if self._active is None:
            self._active = _Voice(masker_id, audio, gain)
            self.logger.log("masker_started", masker_id=masker_id, gain=gain)
            return
        if not should_switch(self.state, masker_id, gain, self.policy):
            return
        length = max(int(round(self.policy.crossfade_seconds * self.sample_rate)), 2)
        self._fade = _Fade(old=self._active, new=_Voice(masker_id, audio, gain), length=length)
        self._active = None
        if self._capture:
            self._capturing = FadeCapture(start_sample=self._rendered)
            self.fades.append(self._capturing)
        self.logger.log(
            "fade_started", from_id=self._fade.old.masker_id, to_id=masker_id, gain=gain
        )

    def render(self, n: int) -> np.ndarray:
        """Produce the next n output samples, advancing all playback state."""
        out = np.zeros(n, dtype=np.float32)
        filled = 0
        while filled < n:
            if self._fade is not None:
                m = self._render_fade(out, filled, n - filled)
                filled += m
                self._rendered += m
                if self._fade is None and self._pending is not None:
                    masker_id, gain = self._pending
                    self._pending = None
                    audio = self.store.resolve(masker_id)
                    if audio is not None:
                        self._apply(masker_id, gain, audio)
            elif self._active is not None:
                out[filled:n] = self._active.take(n - filled).astype(np.float32) * np.float32(
                    self._active.gain
                )
                self._rendered += n - filled
                filled = n
            else:
                # silence until the first prediction lands
                self._rendered += n - filled
                filled = n
        return out

    def _render_fade(self, out: np.ndarray, offset: int, budget: int) -> int:
        fade = self._fade
        m = min(budget, fade.length - fade.done)
        progress = (fade.done + np.arange(m, dtype=np.float64)) / (fade.length - 1)
        out_gain = np.cos(progress * math.pi / 2.0)
        in_gain = np.sin(progress * math.pi / 2.0)
        mixed = (
            out_gain * fade.old.gain * fade.old.take(m).astype(np.float64)
            + in_gain * fade.new.gain * fade.new.take(m).astype(np.float64)
        )
        out[offset : offset + m] = mixed.astype(np.float32)
        if self._capturing is not None:
            self._capturing.out_gains.append(out_gain)
            self._capturing.in_gains.append(in_gain)
        fade.done += m
        if fade.done >= fade.length:
            self._active = fade.new
            self._fade = None
            self._capturing = None
            self.logger.log("fade_completed", masker_id=self._active.masker_id)
        return m


def render_trace(
    events: Iterable[tuple[float, PredictionSet]],
    store: MaskerStore,
    policy: SwitchPolicy | None = None,
    duration_s: float = 30.0,
    sample_rate: int = 44100,
    capture_fades: bool = False,
    logger: JsonLinesLogger = NULL_LOGGER,
) -> tuple[np.ndarray, list[FadeCapture]]:
    """Offline, sample-accurate replay of a prediction trace.

    Each event is (time_seconds, PredictionSet); events are applied at their
    exact sample positions, so a fixed trace renders bit-identically.
    """
    engine = PlaybackEngine(store, policy, sample_rate, capture_fades=capture_fades, logger=logger)
    total = int(round(duration_s * sample_rate))
    out = np.zeros(total, dtype=np.float32)
    cursor = 0
    for at_s, prediction in sorted(events, key=lambda e: e[0]):
        at = min(total, max(0, int(round(at_s * sample_rate))))
        if at > cursor:
            out[cursor:at] = engine.render(at - cursor)
            cursor = at
        engine.offer(prediction)
    if cursor < total:
        out[cursor:] = engine.render(total - cursor)
    return out, engine.fades


def run_playback(
    relay_address: Address,
    topic: str,
    store: MaskerStore,
    policy: SwitchPolicy | None = None,
    sample_rate: int = 44100,
    out_wav: Optional[str | Path] = None,
    duration_s: Optional[float] = None,
    block_seconds: float = 0.25,
    pace: bool = True,
    logger: JsonLinesLogger = NULL_LOGGER,
    stop_event: Optional[threading.Event] = None,
) -> np.ndarray:
    """Live playback agent: subscribe to predictions and render continuously.

    Incoming predictions land in a bounded queue (capacity 8, drop-oldest;
    only the freshest soundscape matters) and are applied at render-block
    boundaries. Renders until ``duration_s`` elapses or ``stop_event`` fires,
    then writes the stream to ``out_wav`` (or discards it for a null sink).
    """
    client = connect_with_backoff(relay_address, on_status=lambda s: logger.log("status", detail=s))
    client.subscribe(topic)
    queue: deque[PredictionSet] = deque(maxlen=8)
    stop_event = stop_event or threading.Event()

    def _feed():
        while not stop_event.is_set():
            try:
                message = client.recv(timeout=0.2)
            except TransportError:
                return
            if message is None:
                continue
            _, body = message
            try:
                queue.append(PredictionSet.from_json_bytes(body))
            except (ValueError, KeyError) as exc:
                logger.log("prediction_ignored", reason=f"malformed: {exc}")

    feeder = threading.Thread(target=_feed, daemon=True)
    feeder.start()

    engine = PlaybackEngine(store, policy, sample_rate, logger=logger)
    block = max(int(round(block_seconds * sample_rate)), 1)
    blocks: list[np.ndarray] = []
    started = time.monotonic()
    try:
        while not stop_event.is_set():
            if duration_s is not None and engine.samples_rendered >= duration_s * sample_rate:
                break
            while queue:
                engine.offer(queue.popleft())
            blocks.append(engine.render(block))
            if pace:
                ahead = engine.samples_rendered / sample_rate - (time.monotonic() - started)
                if ahead > 0:
                    time.sleep(min(ahead, block_seconds))
    finally:
        stop_event.set()
        client.close()
    audio = np.concatenate(blocks) if blocks else np.zeros(0, dtype=np.float32)
    if out_wav is not None:
        write_wav(out_wav, audio, sample_rate)
        logger.log("playback_written", path=str(out_wav), samples=int(audio.size))
    return audio
