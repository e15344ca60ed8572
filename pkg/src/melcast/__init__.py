"""melcast: desk-scale adaptive soundscape augmentation pipeline.

Edge acquisition -> lossless spectral compression -> pub/sub transport ->
masker-gain inference -> prediction streaming -> crossfaded playback.
"""

from .codec import (
    DEFAULT_RASTER_CODEC,
    MAX_PAYLOAD_BYTES,
    EgressRow,
    RgbaRaster,
    SpectralPayload,
    compress_raster,
    decode_payload,
    decompress_raster,
    egress_rate,
    egress_table,
    encode_payload,
    pack_rgba,
    payload_from_spectrogram,
    spectrogram_from_payload,
    unpack_rgba,
)
from .edge import EdgeConfig, run_edge, window_stream
from .inference import (
    GainSample,
    InferenceService,
    MaskerBank,
    MaskerRecord,
    PleasantnessDistribution,
    PredictionSet,
    RankedPair,
    baseline_predict,
    load_masker_bank,
    sample_gains,
    score_candidates,
    select_top_k,
    write_masker_bank,
)
from .playback import (
    MaskerStore,
    PlaybackEngine,
    PlaybackState,
    SwitchPolicy,
    crossfade_gains,
    render_trace,
    should_switch,
)
from .spectral import (
    AudioClip,
    LogMelSpectrogram,
    SpectralParams,
    compute_log_mel,
    frame_count,
    mel_filterbank,
)
from .transport import Relay, RelayClient, http_ingest_client

__version__ = "0.1.0"
