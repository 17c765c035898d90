"""Exception types shared across the codec."""


class SgicError(Exception):
    """Base class for all codec errors."""


# --- semantics ---

class FixtureMissing(SgicError):
    pass


class GatewayUnavailable(SgicError):
    pass


class MalformedPayload(SgicError):
    pass


# --- bitstream ---

class DimensionInvalid(SgicError):
    pass


class BadMagic(SgicError):
    pass


class UnsupportedVersion(SgicError):
    pass


class Truncated(SgicError):
    pass


class FlagPayloadMismatch(SgicError):
    pass


# --- embedding ---

class EmptyInput(SgicError):
    pass


class DimensionMismatch(SgicError):
    pass


class ZeroNorm(SgicError):
    pass


# --- features / segmentation ---

class ImageTooSmall(SgicError):
    pass


# --- controller ---

class SchemaMismatch(SgicError):
    pass


class InputOutOfRange(SgicError):
    pass


class EmptyBatch(SgicError):
    pass


class LengthMismatch(SgicError):
    pass


class DatasetTooSmall(SgicError):
    pass


class NonFiniteLoss(SgicError):
    pass


# --- diffusion ---

class InvalidRange(SgicError):
    pass


class ShapeMismatch(SgicError):
    pass


class InvalidTimestep(SgicError):
    pass


class InvalidSteps(SgicError):
    pass


# --- metrics ---

class UnknownMetric(SgicError):
    pass


class DegenerateRange(SgicError):
    pass


# --- harness ---

class IoError(SgicError):
    pass


class ConfigInvalid(SgicError):
    pass


class StageError(SgicError):
    """Wraps an upstream failure with the pipeline stage it happened in."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause
