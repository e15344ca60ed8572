"""Exception types shared across the pipeline."""


class MelcastError(Exception):
    """Base class for all pipeline errors."""


class InsufficientAudio(MelcastError):
    """Audio is shorter than one analysis frame or one window."""


class ParamMismatch(MelcastError):
    """Spectral parameters disagree between producer and consumer."""


class ChannelMismatch(MelcastError):
    """Operation requires exactly two channels."""


class DegenerateFilterbank(MelcastError):
    """Mel filterbank cannot be built for the requested resolution."""


class DecodeError(MelcastError):
    """Compressed raster stream is corrupt or not of the declared format."""


class UnsupportedCodec(MelcastError):
    """Raster codec identifier is not one of the supported set."""


class PayloadTooLarge(MelcastError):
    """Serialized payload exceeds the broker size limit."""


class PayloadSchemaError(MelcastError):
    """Payload is not valid latin-1 JSON or is missing required fields."""


class TransportError(MelcastError):
    """Relay connection failed or was closed mid-operation."""


class BankLoadError(MelcastError):
    """A masker bank record is missing or inconsistent with service params."""

    def __init__(self, masker_id: str, reason: str):
        self.masker_id = masker_id
        self.reason = reason
        super().__init__(f"masker {masker_id!r}: {reason}")


class DemoStageError(MelcastError):
    """A stage of the end-to-end demo failed."""

    def __init__(self, stage: str, reason: str):
        self.stage = stage
        self.reason = reason
        super().__init__(f"stage {stage!r}: {reason}")
