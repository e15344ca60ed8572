import math
import threading
import time

import numpy as np
import pytest

from melcast.audio_io import write_wav
from melcast.errors import ParamMismatch
from melcast.inference import PredictionSet, RankedPair
from melcast.jsonlog import JsonLinesLogger
from melcast.playback import (
    MaskerStore,
    PlaybackEngine,
    PlaybackState,
    SwitchPolicy,
    crossfade_gains,
    render_trace,
    run_playback,
    should_switch,
)

RATE = 8000


def prediction(masker_id, gain, stamp="2026-01-01T00:00:00Z", request_id="r0"):
    return PredictionSet(
        request_id=request_id,
        device_id="dev-a",
        timestamp_utc=stamp,
        ranked=(RankedPair(masker_id, gain, -1.0, -1.0),),
    )


@pytest.fixture
def store(tmp_path):
    rng = np.random.default_rng(31)
    for name, seconds in [("alpha", 1.0), ("beta", 1.5), ("gamma", 0.4)]:
        audio = (rng.uniform(-0.8, 0.8, size=int(seconds * RATE))).astype(np.float32)
        write_wav(tmp_path / f"{name}.wav", audio, RATE)
    return MaskerStore(tmp_path, sample_rate=RATE)


# --- switch policy ------------------------------------------------------------


def test_should_switch_same_masker_same_gain():
    state = PlaybackState(current_masker_id="a", current_gain=0.1)
    assert should_switch(state, "a", 0.1, SwitchPolicy()) is False


def test_should_switch_different_masker():
    state = PlaybackState(current_masker_id="a", current_gain=0.1)
    assert should_switch(state, "b", 0.1, SwitchPolicy()) is True


def test_should_switch_gain_threshold():
    # 0.10 -> 0.15 is 20*log10(1.5) = 3.52 dB, past the 3 dB default
    state = PlaybackState(current_masker_id="a", current_gain=0.10)
    assert should_switch(state, "a", 0.15, SwitchPolicy()) is True
    assert math.isclose(20 * math.log10(0.15 / 0.10), 3.5218251811, rel_tol=1e-9)
    # 0.10 -> 0.11 is only 0.83 dB
    assert should_switch(state, "a", 0.11, SwitchPolicy()) is False
    # symmetric for attenuation
    assert should_switch(state, "a", 0.10 / 1.5, SwitchPolicy()) is True


def test_should_switch_no_active_masker():
    assert should_switch(PlaybackState(), "a", 0.1, SwitchPolicy()) is True


def test_should_switch_rejects_nonpositive_gain():
    with pytest.raises(ValueError):
        should_switch(PlaybackState(), "a", 0.0, SwitchPolicy())


def test_policy_validation():
    with pytest.raises(ValueError):
        SwitchPolicy(gain_threshold_db=-1.0)
    with pytest.raises(ValueError):
        SwitchPolicy(crossfade_seconds=0.0)


# --- crossfade law --------------------------------------------------------------


def test_crossfade_endpoints():
    assert crossfade_gains(0.0) == (1.0, 0.0)
    out, fade_in = crossfade_gains(1.0)
    assert abs(out) < 1e-15 and fade_in == 1.0


def test_crossfade_midpoint():
    out, fade_in = crossfade_gains(0.5)
    assert math.isclose(out, math.sqrt(2) / 2, rel_tol=1e-12)
    assert math.isclose(fade_in, math.sqrt(2) / 2, rel_tol=1e-12)


def test_crossfade_equal_power_identity():
    for p in np.linspace(0.0, 1.0, 1001):
        out, fade_in = crossfade_gains(float(p))
        assert abs(out * out + fade_in * fade_in - 1.0) < 1e-12


def test_crossfade_domain():
    with pytest.raises(ValueError):
        crossfade_gains(-0.01)
    with pytest.raises(ValueError):
        crossfade_gains(1.01)


# --- masker store ----------------------------------------------------------------


def test_store_resolves_and_caches(store):
    audio = store.resolve("alpha")
    assert audio is not None and audio.dtype == np.float32
    assert store.resolve("alpha") is audio  # cached
    assert store.resolve("ghost") is None
    assert store.masker_ids() == ["alpha", "beta", "gamma"]


def test_store_rate_mismatch(tmp_path):
    write_wav(tmp_path / "x.wav", np.zeros(100, dtype=np.float32), 44100)
    store = MaskerStore(tmp_path, sample_rate=8000)
    with pytest.raises(ParamMismatch):
        store.resolve("x")


def test_store_reads_bank_manifest(tmp_path, tiny_params):
    from conftest import make_bank

    make_bank(tmp_path, params=tiny_params, count=2)
    store = MaskerStore(tmp_path, sample_rate=tiny_params.sample_rate)
    assert store.resolve("masker_000") is not None


# --- rendering --------------------------------------------------------------------


def test_loop_recurrence(store):
    # masker alpha is 1.0 s; rendering 2.5 s must repeat its start at 1 s and 2 s
    out, _ = render_trace(
        [(0.0, prediction("alpha", 0.5))], store, duration_s=2.5, sample_rate=RATE
    )
    n = RATE // 2
    np.testing.assert_array_equal(out[:n], out[RATE : RATE + n])
    np.testing.assert_array_equal(out[:n], out[2 * RATE : 2 * RATE + n])
    alpha = store.resolve("alpha")
    np.testing.assert_allclose(out[:n], alpha[:n] * np.float32(0.5), rtol=0, atol=0)


def test_silence_until_first_prediction(store):
    out, _ = render_trace(
        [(1.0, prediction("alpha", 0.5))], store, duration_s=2.0, sample_rate=RATE
    )
    assert not out[: RATE - 1].any()
    assert out[RATE:].any()


def test_fade_identity_and_length(store):
    policy = SwitchPolicy(crossfade_seconds=0.5)
    events = [(0.0, prediction("alpha", 0.5)), (1.0, prediction("beta", 0.4, request_id="r1"))]
    out, fades = render_trace(
        events, store, policy, duration_s=3.0, sample_rate=RATE, capture_fades=True
    )
    assert len(fades) == 1
    fade = fades[0]
    assert fade.start_sample == RATE  # switch applied exactly at t=1.0
    og, ig = fade.out_array(), fade.in_array()
    assert og.size == ig.size == int(0.5 * RATE)
    np.testing.assert_allclose(og**2 + ig**2, 1.0, atol=1e-9)
    assert og[0] == 1.0 and ig[0] == 0.0
    assert abs(og[-1]) < 1e-12 and ig[-1] == 1.0


def test_duplicate_prediction_is_inert(store):
    policy = SwitchPolicy(crossfade_seconds=0.5)
    base = [(0.0, prediction("alpha", 0.5))]
    dup = base + [(1.0, prediction("alpha", 0.5, request_id="r9"))]
    a, _ = render_trace(base, store, policy, duration_s=2.0, sample_rate=RATE)
    b, _ = render_trace(dup, store, policy, duration_s=2.0, sample_rate=RATE)
    np.testing.assert_array_equal(a, b)


def test_unknown_masker_ignored(store):
    logger = JsonLinesLogger(stream=None)
    events = [(0.0, prediction("ghost", 0.5)), (0.5, prediction("alpha", 0.5))]
    out, _ = render_trace(events, store, duration_s=1.0, sample_rate=RATE, logger=logger)
    assert not out[: RATE // 2 - 1].any()  # ghost did nothing
    assert out[RATE // 2 :].any()
    assert logger.count("prediction_ignored") == 1


def test_prediction_during_fade_waits_for_completion(store):
    policy = SwitchPolicy(crossfade_seconds=0.5)
    events = [
        (0.0, prediction("alpha", 0.5)),
        (1.0, prediction("beta", 0.5, request_id="r1")),
        (1.1, prediction("gamma", 0.5, request_id="r2")),  # lands mid-fade
    ]
    out, fades = render_trace(
        events, store, policy, duration_s=3.0, sample_rate=RATE, capture_fades=True
    )
    assert len(fades) == 2
    # second fade starts exactly when the first completes (1.0 s + 0.5 s)
    assert fades[1].start_sample == int(1.5 * RATE)


def test_freshest_pending_wins(store):
    policy = SwitchPolicy(crossfade_seconds=0.5)
    engine_events = [
        (0.0, prediction("alpha", 0.5)),
        (1.0, prediction("beta", 0.5, request_id="r1")),
        (1.1, prediction("gamma", 0.5, request_id="r2")),
        (1.2, prediction("alpha", 0.9, request_id="r3")),  # newer pending replaces gamma
    ]
    out, fades = render_trace(
        engine_events, store, policy, duration_s=3.0, sample_rate=RATE, capture_fades=True
    )
    assert len(fades) == 2  # alpha->beta, then beta->alpha(0.9)


def test_render_deterministic(store):
    events = [(0.0, prediction("alpha", 0.5)), (0.7, prediction("beta", 0.4, request_id="r1"))]
    a, _ = render_trace(events, store, duration_s=2.0, sample_rate=RATE)
    b, _ = render_trace(events, store, duration_s=2.0, sample_rate=RATE)
    assert a.tobytes() == b.tobytes()


def test_engine_state_snapshots(store):
    engine = PlaybackEngine(store, SwitchPolicy(crossfade_seconds=0.25), RATE)
    assert engine.state == PlaybackState()
    engine.offer(prediction("alpha", 0.5))
    engine.render(100)
    state = engine.state
    assert state.current_masker_id == "alpha"
    assert state.current_gain == 0.5
    assert state.position == 100
    assert state.fade is None
    engine.offer(prediction("beta", 0.5, request_id="r1"))
    engine.render(100)
    state = engine.state
    assert state.fade is not None
    assert state.fade.from_id == "alpha" and state.fade.to_id == "beta"
    assert 0.0 < state.fade.progress < 1.0


def test_no_discontinuity_outside_fades(store):
    # outside fades exactly one masker contributes: output equals gain * masker
    out, _ = render_trace(
        [(0.0, prediction("beta", 0.7))], store, duration_s=1.0, sample_rate=RATE
    )
    beta = store.resolve("beta")
    np.testing.assert_array_equal(out, (beta[:RATE] * np.float32(0.7)).astype(np.float32))


def test_run_playback_live(tmp_path, store):
    from melcast.transport import Relay, RelayClient

    relay = Relay(keepalive_s=1.0)
    relay.start()
    logger = JsonLinesLogger(stream=None)
    out_path = tmp_path / "live.wav"
    stop = threading.Event()

    result = {}

    def target():
        result["audio"] = run_playback(
            relay.address,
            "site0/playback/predictions",
            store,
            SwitchPolicy(crossfade_seconds=0.25),
            sample_rate=RATE,
            out_wav=out_path,
            duration_s=1.0,
            block_seconds=0.05,
            pace=True,
            logger=logger,
            stop_event=stop,
        )

    thread = threading.Thread(target=target)
    thread.start()
    time.sleep(0.3)  # let it subscribe
    publisher = RelayClient(relay.address)
    publisher.publish("site0/playback/predictions", prediction("alpha", 0.5).to_json_bytes())
    thread.join(timeout=10)
    assert not thread.is_alive()
    publisher.close()
    relay.stop()

    audio = result["audio"]
    assert audio.size >= RATE
    assert audio.any()  # the masker actually played
    assert out_path.is_file()
    assert logger.count("masker_started") == 1
