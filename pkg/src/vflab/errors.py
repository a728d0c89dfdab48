"""Exception hierarchy shared across the package."""


class VflabError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(VflabError):
    """Shape contract violated; message names expected/actual dimensions."""


class ConfigError(VflabError):
    """Invalid configuration value (widths, counts, unknown names)."""


class DataError(VflabError):
    """Dataset ingestion or content problem (parse errors, missing labels)."""


class AlignmentError(VflabError):
    """Sample-ID sets that must agree do not; message lists offenders."""


class TrainingError(VflabError):
    """Optimization aborted (non-finite loss, empty training set)."""


class ProtocolError(VflabError):
    """Wire-format violation (bad magic, version, truncation). Connection-fatal."""


class TransportError(VflabError):
    """Transport-level failure. Retryable: nothing was double-counted."""

    retryable = True
