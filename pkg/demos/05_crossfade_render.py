"""
Crossfaded playback rendering
==============================

Feeds a recorded prediction trace to the playback engine: the first masker
loops seamlessly, a later prediction with a different masker triggers an
equal-power crossfade, and a re-delivered duplicate changes nothing.
Writes the rendered stream next to this script as crossfade_demo.wav.
"""

from pathlib import Path
import tempfile

import numpy as np

from melcast.audio_io import write_wav
from melcast.inference import PredictionSet, RankedPair
from melcast.playback import MaskerStore, SwitchPolicy, crossfade_gains, render_trace

RATE = 44100


def prediction(masker_id, gain, rid):
    return PredictionSet(
        request_id=rid,
        device_id="demo",
        timestamp_utc="2026-01-01T00:00:00Z",
        ranked=(RankedPair(masker_id, gain, -1.0, -1.0),),
    )


# --- 1. two loopable maskers: band-limited noise textures ---------------------

with tempfile.TemporaryDirectory() as tmp:
    rng = np.random.default_rng(8)
    t = np.arange(2 * RATE) / RATE
    surf = (0.5 * np.sin(2 * np.pi * 0.5 * t) * rng.uniform(0.5, 1.0, t.size)).astype(np.float32)
    hiss = (0.3 * rng.uniform(-1, 1, t.size)).astype(np.float32)
    write_wav(Path(tmp) / "surf.wav", surf, RATE)
    write_wav(Path(tmp) / "hiss.wav", hiss, RATE)
    store = MaskerStore(tmp, sample_rate=RATE)

    # --- 2. the fade law itself -----------------------------------------------
    for p in (0.0, 0.25, 0.5, 0.75, 1.0):
        out, fade_in = crossfade_gains(p)
        print(f"p={p:.2f}: out={out:.4f} in={fade_in:.4f} out^2+in^2={out**2 + fade_in**2:.6f}")

    # --- 3. render a trace with a switch and a duplicate ------------------------
    events = [
        (0.0, prediction("surf", 0.8, "r0")),
        (4.0, prediction("hiss", 0.6, "r1")),   # different masker -> crossfade
        (6.0, prediction("hiss", 0.6, "r2")),   # duplicate -> inert
    ]
    policy = SwitchPolicy(gain_threshold_db=3.0, crossfade_seconds=2.0)
    audio, fades = render_trace(
        events, store, policy, duration_s=10.0, sample_rate=RATE, capture_fades=True
    )
    print(f"\nrendered {audio.size / RATE:.0f} s, {len(fades)} fade(s)")
    fade = fades[0]
    og, ig = fade.out_array(), fade.in_array()
    print(f"fade starts at {fade.start_sample / RATE:.2f} s, "
          f"{og.size} samples, max |out^2+in^2 - 1| = {np.abs(og**2 + ig**2 - 1).max():.2e}")

    out_path = Path(__file__).parent / "crossfade_demo.wav"
    write_wav(out_path, audio, RATE)
    print(f"wrote {out_path}")
