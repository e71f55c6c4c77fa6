"""Exception and warning types shared across the editing pipeline."""


class FoiError(Exception):
    """Base class for all errors raised by this package."""


# --- instruction parsing / token span resolution ---

class SubNotFound(FoiError):
    """A sub-instruction's text does not occur in the composite instruction."""


class KeywordNotFound(FoiError):
    """A keyword does not occur inside its sub-instruction's text."""


class OverlappingSubs(FoiError):
    """Sub-instruction spans cannot be placed without overlapping."""


class SpanUnresolvable(FoiError):
    """A sub-instruction or keyword maps to zero tokens (e.g. truncated away)."""


# --- attention capture ---

class UnsupportedResolution(FoiError):
    """The backend has no cross-attention layer at the requested resolution."""


class NoRecords(FoiError):
    """No attention records match the requested layer resolution and branch."""


class EmptyIndices(FoiError):
    """An empty token index list was given where at least one index is required."""


# --- mask extraction ---

class BadKernel(FoiError):
    """Gaussian kernel size must be odd and positive, sigma must be positive."""


class EmptyMaskList(FoiError):
    """A union mask needs at least one keyword mask."""


# --- modulation / score combination ---

class LengthMismatch(FoiError):
    """Masks and sub-instructions (or token counts) do not line up."""


class ShapeMismatch(FoiError):
    """Array arguments have incompatible shapes."""


# --- schedule / backend / codec ---

class BadFraction(FoiError):
    """A schedule fraction is outside (0, 1] or yields zero effective steps."""


class BadDims(FoiError):
    """Image dimensions are incompatible with the latent codec."""


class BackendUnavailable(FoiError):
    """The requested denoiser backend cannot be constructed in this environment."""


# --- metrics ---

class ZeroVector(FoiError):
    """Cosine similarity is undefined for a zero-norm vector."""


class ZeroDelta(FoiError):
    """Directional similarity is undefined when an embedding delta is zero."""


class ProviderUnavailable(FoiError):
    """The requested embedding provider cannot be constructed in this environment."""


class MaskEmptyWarning(UserWarning):
    """The union mask came out all zero; the text guidance term is inert."""
