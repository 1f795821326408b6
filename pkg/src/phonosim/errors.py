"""Common exception types."""


class PhonosimError(Exception):
    """Base class for all toolkit errors."""


class ManifestError(PhonosimError):
    """Corpus manifest fails to parse or violates an invariant."""


class AudioError(PhonosimError):
    """Audio file cannot be decoded or is unusable."""


class FeatureIOError(PhonosimError):
    """Feature file is malformed or truncated."""


class CheckpointError(PhonosimError):
    """Model checkpoint file is malformed."""


class DataError(PhonosimError):
    """Dataset is empty, inconsistent, or produced a non-finite value."""
