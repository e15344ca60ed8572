import json
import threading

import numpy as np
import pytest

from melcast.cli import main
from melcast.spectral import SpectralParams, compute_log_mel, frame_count

SUBCOMMANDS = ["codec", "relay", "edge", "infer", "playback", "monitor", "bench", "demo"]


@pytest.mark.parametrize("name", SUBCOMMANDS)
def test_subcommand_help(name, capsys):
    with pytest.raises(SystemExit) as exited:
        main([name, "--help"])
    assert exited.value.code == 0
    assert name in capsys.readouterr().out


def test_no_arguments_is_misuse():
    with pytest.raises(SystemExit) as exited:
        main([])
    assert exited.value.code != 0


def test_unknown_command_is_misuse():
    with pytest.raises(SystemExit) as exited:
        main(["transmogrify"])
    assert exited.value.code != 0


def test_monitor_requires_relay():
    with pytest.raises(SystemExit) as exited:
        main(["monitor"])
    assert exited.value.code != 0


def test_bad_address_rejected():
    with pytest.raises(SystemExit) as exited:
        main(["monitor", "--relay", "not-an-address"])
    assert exited.value.code != 0


def test_rate_table(capsys):
    assert main(["codec", "rate-table"]) == 0
    out = capsys.readouterr().out
    for token in ("88.20", "172.27", "5168", "344.70", "10341", "5.38", "161"):
        assert token in out


def test_codec_encode_decode_round_trip(tmp_path, capsys):
    from melcast.audio_io import write_wav

    rng = np.random.default_rng(3)
    seconds = 1.0
    rate = 44100
    mono = (rng.standard_normal(int(seconds * rate)) * 0.1).astype(np.float32)
    wav_path = tmp_path / "in.wav"
    write_wav(wav_path, np.stack([mono, mono]), rate)

    payload_path = tmp_path / "out.bin"
    assert main(["codec", "encode", str(wav_path), str(payload_path), "--device-id", "cli-test"]) == 0
    assert payload_path.stat().st_size > 0
    capsys.readouterr()

    values_path = tmp_path / "values.npy"
    assert main(["codec", "decode", str(payload_path), "--values-out", str(values_path)]) == 0
    meta = json.loads(capsys.readouterr().out)
    assert meta["device_id"] == "cli-test"
    assert meta["n_frames"] == frame_count(int(seconds * rate), 4096, 2048)

    from melcast.spectral import AudioClip

    clip = AudioClip.from_wav(wav_path)
    expected = compute_log_mel(clip, SpectralParams())
    decoded = np.load(values_path)
    assert np.array_equal(decoded.view(np.uint16), expected.values.view(np.uint16))


def test_codec_encode_oversize_reports_error(tmp_path, capsys):
    from melcast.audio_io import write_wav

    rng = np.random.default_rng(0)
    # independent channels of loud white noise cannot fit the payload budget
    audio = (rng.standard_normal((2, 35 * 44100)) * 0.4).astype(np.float32)
    wav_path = tmp_path / "big.wav"
    write_wav(wav_path, audio, 44100)
    code = main(["codec", "encode", str(wav_path), str(tmp_path / "out.bin"), "--raster-codec", "png"])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_demo_cli_end_to_end(tmp_path, capsys):
    code = main(
        ["demo", "--out", str(tmp_path / "art"), "--duration", "30", "--maskers", "3", "--seed", "3"]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "demo complete" in out
    assert (tmp_path / "art" / "predictions.jsonl").is_file()
    assert (tmp_path / "art" / "rendered.wav").stat().st_size > 44
    assert len(list((tmp_path / "art" / "payloads").glob("*.bin"))) == 1


def test_trace_replay_monitor_and_playback(tmp_path, capsys):
    # demo artifacts must be enough to replay the monitor view and the
    # rendered stream offline, no live processes involved
    assert main(["demo", "--out", str(tmp_path / "art"), "--duration", "30",
                 "--maskers", "3", "--seed", "11"]) == 0
    capsys.readouterr()
    trace = tmp_path / "art" / "predictions.jsonl"
    bank = tmp_path / "art" / "bank"

    assert main(["monitor", "--replay", str(trace)]) == 0
    out = capsys.readouterr().out
    assert out.count("prediction ") == 1
    assert out.count("masker_") >= 5

    wav = tmp_path / "replayed.wav"
    assert main([
        "playback", "render", "--trace", str(trace), "--maskers", str(bank),
        "--out", str(wav), "--window-seconds", "30",
    ]) == 0
    assert wav.stat().st_size > 44

    # replaying the trace twice produces the same stream
    wav2 = tmp_path / "replayed2.wav"
    assert main([
        "playback", "render", "--trace", str(trace), "--maskers", str(bank),
        "--out", str(wav2), "--window-seconds", "30",
    ]) == 0
    assert wav.read_bytes() == wav2.read_bytes()


def test_demo_cli_empty_bank_names_stage(tmp_path, capsys):
    code = main(["demo", "--out", str(tmp_path / "art"), "--duration", "30", "--maskers", "0"])
    assert code == 1
    err = capsys.readouterr().err
    assert "inference" in err


def test_edge_cli_against_live_service(tmp_path, capsys):
    from melcast.inference import InferenceService, make_http_server

    from conftest import TINY, make_bank

    make_bank(tmp_path / "bank", params=TINY)
    service = InferenceService(bank_dir=tmp_path / "bank", params=TINY)
    service.warm_up()
    server = make_http_server(service)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    host, port = server.server_address[:2]

    config_path = tmp_path / "edge.toml"
    config_path.write_text(
        f"""
device_id = "edge-cli"
endpoint_url = "http://{host}:{port}/v1/ingest"
window_seconds = 1.0
stride_seconds = 1.0
raster_codec = "png"
start_timestamp = "2026-01-01T00:00:00Z"

[source]
type = "pink"
seconds = 2.0
seed = 4

[spectral]
frame_size = 256
hop = 128
n_mels = 8
sample_rate = 8000
"""
    )
    code = main(["edge", "run", "--config", str(config_path)])
    server.shutdown()
    server.server_close()
    assert code == 0
    lines = [json.loads(l) for l in capsys.readouterr().out.strip().splitlines()]
    assert sum(1 for l in lines if l["event"] == "window_sent") == 2
