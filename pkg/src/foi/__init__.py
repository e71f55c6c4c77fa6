"""Instruction-focused image editing.

Grounds each sub-instruction of a composite edit through the denoiser's
own cross-attention, confines instructions to their regions of interest
via cross-condition attention modulation, and separates editing from
image preservation with mask-guided disentangle sampling.
"""

__version__ = "0.1.0"

from .backends import ToyBackend, ToyBackendConfig, make_backend
from .capture import Branch, LayerKey, open_capture
from .errors import FoiError
from .instructions import (
    Instruction,
    SubInstruction,
    build_alpha_vector,
    parse_edit_request,
    resolve_token_spans,
    split_instruction,
)
from .masks import (
    ExtractionParams,
    KeywordMask,
    UnionMask,
    binarize,
    enhance,
    extract_masks,
    gaussian_smooth,
    union_and_upsample,
)
from .metrics import directional_similarity, get_provider, image_similarity
from .modulation import Modulator, build_token_mask, modulate, timestep_weight
from .pipeline import EditRequest, EditResult, edit
from .sampling import (
    GuidanceParams,
    NoiseTriple,
    Schedule,
    combine_disentangled,
    combine_vanilla,
    make_schedule,
    sample,
)

__all__ = [
    "Branch",
    "EditRequest",
    "EditResult",
    "ExtractionParams",
    "FoiError",
    "GuidanceParams",
    "Instruction",
    "KeywordMask",
    "LayerKey",
    "Modulator",
    "NoiseTriple",
    "Schedule",
    "SubInstruction",
    "ToyBackend",
    "ToyBackendConfig",
    "UnionMask",
    "binarize",
    "build_alpha_vector",
    "build_token_mask",
    "combine_disentangled",
    "combine_vanilla",
    "directional_similarity",
    "edit",
    "enhance",
    "extract_masks",
    "gaussian_smooth",
    "get_provider",
    "image_similarity",
    "make_backend",
    "make_schedule",
    "modulate",
    "open_capture",
    "parse_edit_request",
    "resolve_token_spans",
    "sample",
    "split_instruction",
    "timestep_weight",
    "union_and_upsample",
]
