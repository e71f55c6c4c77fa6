"""End-to-end edit orchestration: request validation, codec round-trip, dumps."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .backends import DenoiserBackend, make_backend
from .capture import Branch, open_capture, write_attention_dump
from .errors import FoiError
from .imgio import load_rgb, resize_bilinear, save_png, to_float01, to_uint8
from .instructions import Instruction, parse_edit_request, resolve_token_spans
from .masks import ExtractionParams, KeywordMask, UnionMask, write_mask_images
from .sampling import DEFAULT_SEED, GuidanceParams, StepMeta, make_schedule, sample


def parse_sub_flag(value: str) -> tuple[str, str, float]:
    """Parse a ``TEXT::KEYWORD[::ALPHA]`` sub-instruction spec."""
    parts = value.split("::")
    if len(parts) == 2:
        text, keyword = parts
        alpha = 1.0
    elif len(parts) == 3:
        text, keyword = parts[0], parts[1]
        try:
            alpha = float(parts[2])
        except ValueError:
            raise ValueError(f"bad alpha in sub spec {value!r}") from None
    else:
        raise ValueError(
            f"sub spec {value!r} must look like 'TEXT::KEYWORD' or 'TEXT::KEYWORD::ALPHA'"
        )
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative in sub spec {value!r}")
    return text, keyword, alpha


@dataclass(frozen=True)
class EditRequest:
    """One validated edit job.

    The image comes either from ``image_path`` or as an in-memory uint8
    RGB ``image`` array (the service path).  When ``extraction.tau`` and
    ``extraction.rng_seed`` are both unset, the request seed is used to
    sample the per-keyword thresholds, keeping the whole run reproducible
    from one seed.
    """

    instruction: str
    subs: tuple[tuple[str, str, float], ...] = ()
    image_path: str | None = None
    image: np.ndarray | None = None
    out_path: str | None = None
    dump_dir: str | None = None
    backend: str = "toy"
    seed: int = DEFAULT_SEED
    steps: int = 100
    noise_start: float = 0.8
    disentangle_frac: float = 0.75
    guidance: GuidanceParams = field(default_factory=GuidanceParams)
    extraction: ExtractionParams = field(default_factory=ExtractionParams)


@dataclass
class EditResult:
    """Everything one edit produced.

    ``keyword_masks``/``union_mask`` are present iff the request had at
    least one sub-instruction.  ``step0_combined`` is the guided noise
    estimate of the first step and ``step0_attention`` the modulated
    instruction-branch attention (pixels x tokens) averaged over heads
    and layers at the mask resolution; both are diagnostics.
    """

    output_image: np.ndarray
    keyword_masks: list[KeywordMask]
    union_mask: UnionMask | None
    steps: list[StepMeta]
    duration_s: float
    original_size: tuple[int, int]
    native_size: tuple[int, int]
    seed: int
    backend: str
    instruction: Instruction
    step0_combined: np.ndarray | None = None
    step0_attention: np.ndarray | None = None


def edit(request: EditRequest, backend: DenoiserBackend | None = None) -> EditResult:
    """Run one edit end to end.

    Loads and bilinearly resizes the image to the backend's native
    resolution, encodes it, runs guided sampling, decodes, and resizes
    back to the original dimensions.  Writes the output image and any
    requested dumps as side effects.  Deterministic for a given request
    and seed on the toy backend.
    """
    started = time.perf_counter()
    if backend is None:
        backend = make_backend(request.backend)

    if request.image is not None:
        image = np.asarray(request.image, dtype=np.uint8)
    elif request.image_path:
        image = load_rgb(request.image_path)
    else:
        raise FoiError("edit request needs an image path or an in-memory image")
    if image.ndim != 3 or image.shape[2] != 3:
        raise FoiError(f"expected an RGB image, got shape {image.shape}")

    original_size = (image.shape[0], image.shape[1])
    native_size = backend.native_image_size
    resized = resize_bilinear(image, *native_size)
    image_latent = backend.encode_image(to_float01(resized))

    instruction = parse_edit_request(request.instruction, request.subs)
    if instruction.subs:
        instruction = resolve_token_spans(instruction, backend)

    schedule = make_schedule(
        request.steps, request.noise_start, request.disentangle_frac, backend
    )
    extraction = request.extraction
    if extraction.tau is None and extraction.rng_seed is None:
        extraction = replace(extraction, rng_seed=request.seed)

    dump_session = None
    if request.dump_dir:
        dump_session = open_capture(
            backend,
            {Branch.UNCOND, Branch.IMAGE_ONLY, Branch.FULL},
            {key.r for key in backend.attention_layers()},
        )

    final_latent, trace = sample(
        backend,
        image_latent,
        instruction,
        schedule,
        guidance=request.guidance,
        extraction=extraction,
        seed=request.seed,
        dump_session=dump_session,
    )

    decoded = to_uint8(backend.decode_latent(final_latent))
    output_image = resize_bilinear(decoded, *original_size)
    if request.out_path:
        save_png(request.out_path, output_image)
    if request.dump_dir:
        write_mask_images(trace.keyword_masks, trace.union_mask, request.dump_dir)
        write_attention_dump(dump_session, request.dump_dir)

    return EditResult(
        output_image=output_image,
        keyword_masks=trace.keyword_masks,
        union_mask=trace.union_mask,
        steps=trace.steps,
        duration_s=time.perf_counter() - started,
        original_size=original_size,
        native_size=native_size,
        seed=request.seed,
        backend=request.backend,
        instruction=trace.instruction if trace.instruction is not None else instruction,
        step0_combined=trace.step0_combined,
        step0_attention=trace.step0_attention,
    )
