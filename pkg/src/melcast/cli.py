"""Single command-line entrypoint wiring every pipeline component."""

from __future__ import annotations

import argparse
import json
import sys
import threading
from pathlib import Path

from . import codec
from .demo import DemoScenario, run_demo
from .edge import EdgeConfig, run_edge
from .errors import DemoStageError, MelcastError
from .inference import InferenceService, make_http_server, PREDICTIONS_TOPIC
from .jsonlog import JsonLinesLogger
from .monitor import run_monitor
from .playback import MaskerStore, SwitchPolicy, run_playback
from .spectral import AudioClip, SpectralParams, compute_log_mel
from .transport import Relay


def _address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


def _cmd_codec(args) -> int:
    if args.codec_cmd == "rate-table":
        print(codec.format_egress_table())
        return 0
    if args.codec_cmd == "encode":
        clip = AudioClip.from_wav(args.wav)
        params = SpectralParams(sample_rate=clip.sample_rate)
        spec = compute_log_mel(clip, params)
        payload = codec.payload_from_spectrogram(
            spec, device_id=args.device_id, timestamp_utc=args.timestamp, raster_codec=args.raster_codec
        )
        wire = codec.encode_payload(payload)
        Path(args.out).write_bytes(wire)
        print(f"wrote {len(wire)} payload bytes ({spec.n_frames} frames x {spec.n_mels} mels)")
        return 0
    if args.codec_cmd == "decode":
        payload = codec.decode_payload(Path(args.payload).read_bytes())
        meta = {
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
            "image_bytes": len(payload.image),
        }
        print(json.dumps(meta, indent=2))
        if args.image_out:
            Path(args.image_out).write_bytes(payload.image)
        if args.values_out:
            import numpy as np

            spec = codec.spectrogram_from_payload(payload)
            np.save(args.values_out, spec.values)
        return 0
    raise AssertionError(args.codec_cmd)


def _cmd_relay(args) -> int:
    relay = Relay(
        host=args.bind[0], port=args.bind[1], max_frame=args.max_frame, keepalive_s=args.keepalive
    )
    relay.start()
    host, port = relay.address
    print(f"relay listening on {host}:{port} (max frame {args.max_frame} bytes)")
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        relay.stop()
    return 0


def _cmd_edge(args) -> int:
    config = EdgeConfig.from_toml(args.config)
    logger = JsonLinesLogger(stream=sys.stdout)
    report = run_edge(config, logger=logger)
    return 0 if report.sent > 0 else 1


def _cmd_infer(args) -> int:
    from .transport import RelayClient

    logger = JsonLinesLogger(stream=sys.stdout)
    publisher = None
    if args.relay is not None:
        publisher = RelayClient(args.relay).publish
    service = InferenceService(
        bank_dir=args.bank,
        params=SpectralParams(),
        publisher=publisher,
        topic=args.topic,
        seed_salt=args.seed,
        logger=logger,
    )
    service.warm_up()
    server = make_http_server(service, host=args.bind[0], port=args.bind[1])
    host, port = server.server_address[:2]
    print(f"inference service on http://{host}:{port} (bank of {len(service.bank)})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        server.server_close()
    return 0


def _read_trace(path: str) -> list:
    from .inference import PredictionSet

    predictions = []
    for line in Path(path).read_bytes().splitlines():
        if line.strip():
            predictions.append(PredictionSet.from_json_bytes(line))
    return predictions


def _cmd_playback(args) -> int:
    policy = SwitchPolicy.from_toml(args.policy) if args.policy else SwitchPolicy()
    store = MaskerStore(args.maskers, sample_rate=args.rate)
    logger = JsonLinesLogger(stream=sys.stdout)
    out_wav = None if args.out == "null" else args.out
    if args.playback_cmd == "render":
        from datetime import datetime, timezone

        from .audio_io import write_wav
        from .playback import render_trace

        predictions = _read_trace(args.trace)
        if not predictions:
            print("error: trace holds no predictions", file=sys.stderr)
            return 1
        stamps = [
            datetime.strptime(p.timestamp_utc, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
            for p in predictions
        ]
        origin = min(stamps)
        # a window stamped t was heard over [t, t+window); replay its
        # prediction where it became available, at the window end
        events = [
            ((stamp - origin).total_seconds() + args.window_seconds, p)
            for stamp, p in zip(stamps, predictions)
        ]
        duration = args.duration if args.duration is not None else max(t for t, _ in events) + args.window_seconds
        audio, _ = render_trace(
            events, store, policy, duration_s=duration, sample_rate=args.rate, logger=logger
        )
        if out_wav is not None:
            write_wav(out_wav, audio, args.rate)
        print(f"rendered {audio.size / args.rate:.1f} s from {len(events)} predictions")
        return 0
    run_playback(
        args.relay,
        args.topic,
        store,
        policy,
        sample_rate=args.rate,
        out_wav=out_wav,
        duration_s=args.duration,
        logger=logger,
    )
    return 0


def _cmd_monitor(args) -> int:
    if args.replay:
        from .monitor import format_prediction_table

        for prediction in _read_trace(args.replay):
            print(format_prediction_table(prediction))
        return 0
    if args.relay is None:
        print("melcast monitor: error: --relay is required unless --replay is given", file=sys.stderr)
        raise SystemExit(2)
    run_monitor(args.relay, args.topic, heartbeat_s=args.heartbeat)
    return 0


def _cmd_bench(args) -> int:
    from .bench import run_bench

    report = run_bench(
        runs=args.runs, raster_codec=args.raster_codec, seed=args.seed, bank_size=args.bank_size
    )
    if args.json:
        doc = {
            "runs": report.runs,
            "raster_codec": report.raster_codec,
            "stages": {
                name: {"n": s.n, "mean_ms": s.mean_ms, "p95_ms": s.p95_ms}
                for name, s in report.stages.items()
            },
            "payload_bytes": report.payload_bytes,
            "raw_raster_bytes": report.raw_raster_bytes,
            "compression_ratio": report.compression_ratio,
        }
        print(json.dumps(doc, indent=2))
    else:
        print(report.format())
    return 0


def _cmd_demo(args) -> int:
    scenario = DemoScenario(
        seed=args.seed,
        duration_s=args.duration,
        masker_count=args.maskers,
        source_type=args.source,
        pace=args.pace,
    )
    logger = JsonLinesLogger(stream=sys.stdout if args.verbose else None)
    try:
        artifacts = run_demo(scenario, args.out, logger=logger)
    except DemoStageError as exc:
        print(f"demo failed at stage {exc.stage!r}: {exc.reason}", file=sys.stderr)
        return 1
    print(
        f"demo complete: {artifacts.payload_count} payloads, "
        f"{artifacts.prediction_count} predictions, WAV at {artifacts.wav_path}"
    )
    print(f"trace: {artifacts.trace_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="melcast",
        description="Desk-scale adaptive soundscape augmentation pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_codec = sub.add_parser("codec", help="payload encode/decode tools and the rate table")
    codec_sub = p_codec.add_subparsers(dest="codec_cmd", required=True)
    p_enc = codec_sub.add_parser("encode", help="WAV -> latin-1 payload file")
    p_enc.add_argument("wav")
    p_enc.add_argument("out")
    p_enc.add_argument("--device-id", default="cli")
    p_enc.add_argument("--timestamp", default="1970-01-01T00:00:00Z")
    p_enc.add_argument("--raster-codec", choices=codec.SUPPORTED_CODECS, default=codec.DEFAULT_RASTER_CODEC)
    p_dec = codec_sub.add_parser("decode", help="payload file -> metadata (+ optional dumps)")
    p_dec.add_argument("payload")
    p_dec.add_argument("--image-out", help="write the compressed raster stream to this file")
    p_dec.add_argument("--values-out", help="write the decoded spectrogram to this .npy file")
    codec_sub.add_parser("rate-table", help="print the uncompressed egress-rate table")
    p_codec.set_defaults(func=_cmd_codec)

    p_relay = sub.add_parser("relay", help="run the pub/sub relay")
    p_relay.add_argument("--bind", type=_address, default=("127.0.0.1", 7750))
    p_relay.add_argument("--max-frame", type=int, default=codec.MAX_PAYLOAD_BYTES + 4096)
    p_relay.add_argument("--keepalive", type=float, default=30.0)
    p_relay.set_defaults(func=_cmd_relay)

    p_edge = sub.add_parser("edge", help="run the acquisition agent")
    edge_sub = p_edge.add_subparsers(dest="edge_cmd", required=True)
    p_edge_run = edge_sub.add_parser("run", help="run from a TOML config")
    p_edge_run.add_argument("--config", required=True)
    p_edge.set_defaults(func=_cmd_edge)

    p_infer = sub.add_parser("infer", help="run the inference service")
    infer_sub = p_infer.add_subparsers(dest="infer_cmd", required=True)
    p_serve = infer_sub.add_parser("serve", help="serve HTTP ingest with a warm bank")
    p_serve.add_argument("--bank", required=True)
    p_serve.add_argument("--relay", type=_address, default=None)
    p_serve.add_argument("--bind", type=_address, default=("127.0.0.1", 0))
    p_serve.add_argument("--seed", type=int, default=0)
    p_serve.add_argument("--topic", default=PREDICTIONS_TOPIC)
    p_infer.set_defaults(func=_cmd_infer)

    p_play = sub.add_parser("playback", help="run the playback unit")
    play_sub = p_play.add_subparsers(dest="playback_cmd", required=True)
    p_play_run = play_sub.add_parser("run", help="subscribe and render live")
    p_play_run.add_argument("--relay", type=_address, required=True)
    p_play_run.add_argument("--topic", default=PREDICTIONS_TOPIC)
    p_play_render = play_sub.add_parser("render", help="replay a recorded prediction trace offline")
    p_play_render.add_argument("--trace", required=True, help="predictions.jsonl from a demo or recorder")
    p_play_render.add_argument("--window-seconds", type=float, default=30.0)
    for p in (p_play_run, p_play_render):
        p.add_argument("--maskers", required=True)
        p.add_argument("--out", default="null", help="output WAV path, or 'null'")
        p.add_argument("--policy", help="TOML policy file (gain_threshold_db, crossfade_seconds)")
        p.add_argument("--duration", type=float, default=None)
        p.add_argument("--rate", type=int, default=44100)
    p_play.set_defaults(func=_cmd_playback)

    p_mon = sub.add_parser("monitor", help="stream prediction tables from the relay")
    p_mon.add_argument("--relay", type=_address)
    p_mon.add_argument("--topic", default=PREDICTIONS_TOPIC)
    p_mon.add_argument("--heartbeat", type=float, default=60.0)
    p_mon.add_argument("--replay", help="print tables from a recorded trace file instead of a relay")
    p_mon.set_defaults(func=_cmd_monitor)

    p_bench = sub.add_parser("bench", help="local per-stage latency/size benchmark")
    p_bench.add_argument("--runs", type=int, default=20)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--bank-size", type=int, default=8)
    p_bench.add_argument("--raster-codec", choices=codec.SUPPORTED_CODECS, default=codec.DEFAULT_RASTER_CODEC)
    p_bench.add_argument("--json", action="store_true")
    p_bench.set_defaults(func=_cmd_bench)

    p_demo = sub.add_parser("demo", help="reproducible end-to-end run with artifacts")
    p_demo.add_argument("--out", required=True, help="artifact directory")
    p_demo.add_argument("--seed", type=int, default=7)
    p_demo.add_argument("--duration", type=float, default=90.0)
    p_demo.add_argument("--maskers", type=int, default=6)
    p_demo.add_argument("--source", choices=("pink", "sine", "silence"), default="pink")
    p_demo.add_argument("--pace", action="store_true", help="run in real time instead of as fast as possible")
    p_demo.add_argument("--verbose", action="store_true")
    p_demo.set_defaults(func=_cmd_demo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MelcastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
