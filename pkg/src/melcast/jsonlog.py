"""Structured JSON-lines logging for the pipeline agents."""

from __future__ import annotations

import json
import threading
import time
from typing import IO, Optional


class JsonLinesLogger:
    """Writes one JSON object per line to a stream, or collects records in memory.

    With ``stream=None`` every record is kept in ``.records`` instead of being
    written, which is what the tests and the bench harness use to inspect agent
    behaviour.
    """

    def __init__(self, stream: Optional[IO[str]] = None):
        self.stream = stream
        self.records: list[dict] = []
        self._lock = threading.Lock()

    def log(self, event: str, **fields) -> dict:
        record = {"event": event, "ts": _utc_now_iso(), **fields}
        with self._lock:
            if self.stream is None:
                self.records.append(record)
            else:
                self.stream.write(json.dumps(record, ensure_ascii=False) + "\n")
                self.stream.flush()
        return record

    def count(self, event: str) -> int:
        with self._lock:
            return sum(1 for r in self.records if r["event"] == event)

    def of(self, event: str) -> list[dict]:
        with self._lock:
            return [r for r in self.records if r["event"] == event]


def _utc_now_iso() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


NULL_LOGGER = JsonLinesLogger(stream=None)
