"""Exception types shared across the sampler modules."""


class SpikeGibbsError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(SpikeGibbsError):
    pass


class MissingColumn(SpikeGibbsError):
    pass


class NonFiniteInput(SpikeGibbsError):
    pass


class NotPositiveDefinite(SpikeGibbsError):
    pass


class GroupTooSmall(SpikeGibbsError):
    pass


class EigenFailure(SpikeGibbsError):
    pass


class EnvelopeDegenerate(SpikeGibbsError):
    pass


class ChainIoError(SpikeGibbsError):
    pass


class CorruptRecord(ChainIoError):
    def __init__(self, message, byte_offset=None):
        super().__init__(message)
        self.byte_offset = byte_offset


class TooFewDraws(SpikeGibbsError):
    pass


class NotWatched(SpikeGibbsError):
    pass


class ConfigError(SpikeGibbsError):
    pass
