import io
import socket
import threading
import time

from melcast.bench import run_bench
from melcast.codec import egress_table
from melcast.inference import PredictionSet, RankedPair
from melcast.monitor import format_prediction_table, run_monitor
from melcast.transport import Relay, RelayClient

TOPIC = "site0/playback/predictions"


def sample_prediction():
    ranked = tuple(
        RankedPair(f"masker_{i:03d}", 0.2 - 0.02 * i, -0.1 * i, -1.0) for i in range(5)
    )
    return PredictionSet("req1", "dev-a", "2026-01-01T00:00:00Z", ranked)


def test_format_table_rows_in_rank_order():
    text = format_prediction_table(sample_prediction())
    lines = text.splitlines()
    assert "req1" in lines[0]
    assert len(lines) == 7  # header + column names + 5 rows
    assert lines[2].split()[1] == "masker_000"
    assert lines[6].split()[1] == "masker_004"


def test_monitor_streams_and_tolerates_garbage():
    relay = Relay(keepalive_s=1.0)
    relay.start()
    out = io.StringIO()
    result = {}

    def target():
        result["n"] = run_monitor(relay.address, TOPIC, out=out, heartbeat_s=60.0, max_messages=2)

    thread = threading.Thread(target=target)
    thread.start()
    time.sleep(0.4)  # allow subscribe
    publisher = RelayClient(relay.address)
    publisher.publish(TOPIC, sample_prediction().to_json_bytes())
    publisher.publish(TOPIC, b"{broken json")
    publisher.publish(TOPIC, sample_prediction().to_json_bytes())
    thread.join(timeout=10)
    assert not thread.is_alive()
    publisher.close()
    relay.stop()

    text = out.getvalue()
    assert result["n"] == 2
    assert text.count("prediction req1") == 2
    assert "warning: malformed prediction skipped" in text
    assert "latency since window" in text


def test_monitor_heartbeat_when_idle():
    relay = Relay(keepalive_s=1.0)
    relay.start()
    out = io.StringIO()
    stop = threading.Event()
    thread = threading.Thread(
        target=run_monitor,
        args=(relay.address, TOPIC),
        kwargs=dict(out=out, heartbeat_s=0.2, stop_event=stop),
    )
    thread.start()
    time.sleep(0.8)
    stop.set()
    thread.join(timeout=5)
    relay.stop()
    assert "no traffic for 0.2 s" in out.getvalue()


def test_monitor_gives_up_when_relay_unreachable():
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    out = io.StringIO()
    shown = run_monitor(
        ("127.0.0.1", port), TOPIC, out=out, connect_attempts=2, connect_base_delay_s=0.01
    )
    assert shown == 0
    text = out.getvalue()
    assert "retry" in text
    assert "giving up" in text


def test_bench_report_consistency(tiny_params):
    report = run_bench(runs=3, seed=1, bank_size=3, params=tiny_params, window_seconds=1.0)
    assert report.runs == 3
    for name, stats in report.stages.items():
        assert stats.n == 3, name
        assert all(s > 0 for s in stats.samples_ms), name
        assert stats.p95_ms >= stats.mean_ms * 0.999, name
    assert len(report.payload_bytes) == 3
    assert report.raw_raster_bytes > 0
    assert report.compression_ratio > 1.0  # identical channels compress well
    assert report.rate_rows == egress_table(tiny_params)
    text = report.format()
    assert "spectral" in text and "ingest" in text and "uncompressed egress rates" in text


def test_bench_default_params_rate_table_matches_printed_values():
    report = run_bench(runs=1, seed=0, bank_size=2, window_seconds=30.0)
    assert report.format().count("172.27") == 1
    assert "5168" in report.format()
