"""Exception hierarchy.

Every error raised by the package derives from :class:`ArtifactError` and falls
into one of three categories the CLI maps to exit codes: configuration,
data, and I/O.
"""


class ArtifactError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(ArtifactError, ValueError):
    exit_code = 2


class DataError(ArtifactError, ValueError):
    exit_code = 3


class IoError(ArtifactError, OSError):
    exit_code = 4


# ingest
class EmptyLine(DataError):
    pass


class MalformedLine(DataError):
    pass


class WrongLineCount(DataError):
    pass


class MixedSources(DataError):
    pass


# features
class EmptyCorpus(DataError):
    pass


# nn core
class EmptyBatch(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class InvalidRate(ConfigError):
    pass


# cnn / svm
class KernelTooLarge(ConfigError):
    pass


class EmptyFeatureMap(DataError):
    pass


class SpecMismatch(DataError):
    pass


class SingleClassDataset(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class InvalidLabel(DataError):
    pass


# serialization
class VersionMismatch(IoError):
    pass


class ChecksumMismatch(IoError):
    pass


# generator
class EmptyLogits(DataError):
    pass


class CorpusTooShort(DataError):
    pass


class UnknownPrimeChar(DataError):
    pass


class GenerationStarvation(DataError):
    pass


# metrics
class EmptyEvaluation(DataError):
    pass


class NoNegatives(DataError):
    pass


# synth
class TooSmallForSplit(DataError):
    pass


# engine
class ModelSpecMismatch(ConfigError):
    pass


class ActionFailure(ArtifactError):
    pass
