"""Exception types raised across the pipeline.

Every error that can surface through the public API has a dedicated class so
callers (and the CLI) can react to the error *kind* without parsing messages.
"""


class DescantError(Exception):
    """Base class for all package-specific errors."""


class MalformedFile(DescantError):
    """MIDI byte stream violates the file format (bad header, chunk, event)."""


class UnsupportedFormat(DescantError):
    """File is structurally valid but uses an unsupported variant (e.g. SMF type 2)."""


class EmptyScore(DescantError):
    """Parsed file contains no notes."""


class OutOfBar(DescantError):
    """Tick lies outside the bar it was quantized against."""


class VocabularyOverflow(DescantError):
    """A value has no token (e.g. bar index beyond the configured maximum)."""


class GrammarError(DescantError):
    """Token stream violates the sequence grammar.

    `index` is the position of the offending token.
    """

    def __init__(self, index: int, message: str):
        super().__init__(f"token {index}: {message}")
        self.index = index


class CodeOutOfRange(DescantError):
    """Latent code index outside the codebook."""


class TooShort(DescantError):
    """Input has fewer bars than the splice requires."""


class DimensionMismatch(DescantError):
    """Latent vector cannot be sliced evenly."""


class LengthMismatch(DescantError):
    """Paired per-bar series have different lengths."""


class ZeroMean(DescantError):
    """Normalizer of a relative error is zero."""


class EmptyCorpus(DescantError):
    """Statistic requested over an empty sample set."""


class ContextOverflow(DescantError):
    """Sequence longer than the model context."""


class IndexOutOfTable(DescantError):
    """Embedding index outside its lookup table."""


class NonFiniteLoss(DescantError):
    """Training loss became NaN or infinite."""


class ConfigMismatch(DescantError):
    """Artifacts produced under different quantization configurations were mixed."""
