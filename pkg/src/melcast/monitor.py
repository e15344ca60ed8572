"""Streaming text view of the predictions topic.

Prints one table per PredictionSet plus rolling end-to-end latency stats, the
desk-scale stand-in for a hosted dashboard; it watches the same topic as the
playback unit.
"""

from __future__ import annotations

import math
import sys
import threading
import time
from collections import deque
from datetime import datetime, timezone
from typing import IO, Optional

from .inference import PredictionSet
from .transport import Address, TransportError, connect_with_backoff


def _parse_utc(stamp: str) -> Optional[float]:
    try:
        return datetime.strptime(stamp, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc).timestamp()
    except ValueError:
        return None


def format_prediction_table(prediction: PredictionSet) -> str:
    lines = [
        f"prediction {prediction.request_id} device={prediction.device_id} "
        f"window={prediction.timestamp_utc}",
        f"  {'rank':>4} {'masker_id':<16} {'gain':>10} {'dB':>8} {'mean':>10} {'log_std':>8}",
    ]
    for rank, pair in enumerate(prediction.ranked, start=1):
        db = 20.0 * math.log10(pair.gain) if pair.gain > 0 else float("-inf")
        lines.append(
            f"  {rank:>4} {pair.masker_id:<16} {pair.gain:>10.4f} {db:>8.2f} "
            f"{pair.mean:>10.4f} {pair.log_std:>8.2f}"
        )
    return "\n".join(lines)


def run_monitor(
    relay_address: Address,
    topic: str,
    out: IO[str] = sys.stdout,
    heartbeat_s: float = 60.0,
    max_messages: Optional[int] = None,
    stop_event: Optional[threading.Event] = None,
    connect_attempts: int = 5,
    connect_base_delay_s: float = 0.5,
) -> int:
    """Stream prediction tables until stopped; returns messages shown.

    Reconnects with backoff when the relay is unreachable, keeps going on
    malformed JSON, and emits a heartbeat line when the topic goes quiet.
    """
    stop_event = stop_event or threading.Event()
    latencies: deque[float] = deque(maxlen=50)
    shown = 0
    while not stop_event.is_set():
        try:
            client = connect_with_backoff(
                relay_address,
                attempts=connect_attempts,
                base_delay_s=connect_base_delay_s,
                on_status=lambda s: print(s, file=out, flush=True),
            )
        except TransportError as exc:
            print(f"relay unreachable, giving up: {exc}", file=out, flush=True)
            return shown
        client.subscribe(topic)
        print(f"monitoring {topic} via {relay_address[0]}:{relay_address[1]}", file=out, flush=True)
        idle_since = time.monotonic()
        try:
            while not stop_event.is_set():
                message = client.recv(timeout=0.25)
                if message is None:
                    if time.monotonic() - idle_since >= heartbeat_s:
                        print(f"... no traffic for {heartbeat_s:g} s, still listening", file=out, flush=True)
                        idle_since = time.monotonic()
                    continue
                idle_since = time.monotonic()
                _, body = message
                try:
                    prediction = PredictionSet.from_json_bytes(body)
                except (ValueError, KeyError) as exc:
                    print(f"warning: malformed prediction skipped ({exc})", file=out, flush=True)
                    continue
                sent = _parse_utc(prediction.timestamp_utc)
                if sent is not None:
                    latencies.append(max(time.time() - sent, 0.0))
                print(format_prediction_table(prediction), file=out, flush=True)
                if latencies:
                    ordered = sorted(latencies)
                    p95 = ordered[min(int(0.95 * (len(ordered) - 1) + 0.5), len(ordered) - 1)]
                    print(
                        f"  latency since window: last={latencies[-1]:.2f}s "
                        f"mean={sum(latencies)/len(latencies):.2f}s p95={p95:.2f}s n={len(latencies)}",
                        file=out,
                        flush=True,
                    )
                shown += 1
                if max_messages is not None and shown >= max_messages:
                    return shown
        except TransportError:
            print("relay connection lost, reconnecting", file=out, flush=True)
        finally:
            client.close()
    return shown
