"""Exception types. Every error carries a stable machine-readable code."""


class NibkitError(Exception):
    """Base for all nibkit errors."""

    code = "error"

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = context


class ShapeError(NibkitError):
    """Operand shapes are incompatible with the requested operation."""

    code = "shape-mismatch"


class NonFiniteError(NibkitError):
    """A tensor would contain NaN or Inf."""

    code = "nonfinite-data"


class DegenerateInputError(NibkitError):
    """Input is numerically degenerate (e.g. zero-norm vector for cosine)."""

    code = "degenerate-input"


class IndexOutOfRangeError(NibkitError):
    """An id or axis falls outside the valid range."""

    code = "out-of-range"


class GraphError(NibkitError):
    """Misuse of the differentiation tape (e.g. non-scalar loss)."""

    code = "graph-misuse"


class ConfigError(NibkitError):
    """Invalid model configuration."""

    code = "invalid-config"


class LayerRangeError(NibkitError):
    """Requested layer index outside [1, L]."""

    code = "layer-out-of-range"


class ModalityError(NibkitError):
    """Operation applied to the wrong modality."""

    code = "modality-mismatch"


class TokenError(NibkitError):
    """Bad token input (empty list, id >= vocab, too long)."""

    code = "bad-tokens"


class OptimizationError(NibkitError):
    """Iterative optimization produced non-finite values."""

    code = "optimization-diverged"

    def __init__(self, message: str, iteration: int, **context):
        super().__init__(message, iteration=iteration, **context)
        self.iteration = iteration


class UnknownMethodError(NibkitError):
    """Attribution method name not in the registry."""

    code = "unknown-method"


class DatasetError(NibkitError):
    """Empty dataset or all samples excluded."""

    code = "dataset-unusable"


class BundleError(NibkitError):
    """Base for tensor-bundle format violations."""

    code = "bundle-error"


class BadMagicError(BundleError):
    code = "bad-magic"


class VersionMismatchError(BundleError):
    code = "version-mismatch"


class DuplicateNameError(BundleError):
    code = "duplicate-name"


class TruncatedPayloadError(BundleError):
    code = "truncated-payload"


class TrailingBytesError(BundleError):
    code = "trailing-bytes"


class UnsupportedDtypeError(BundleError):
    code = "unsupported-dtype"


class ManifestError(NibkitError):
    """Model or dataset manifest is inconsistent with its bundle."""

    code = "bad-manifest"


class MissingWeightError(ManifestError):
    code = "missing-weight"
